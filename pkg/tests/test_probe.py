import numpy as np
import pytest
from scipy import stats as sstats

from surrogate_gsc.probe import (
    STRATEGIES,
    ProbeRecord,
    SamplingStrategy,
    axis_angle_interval,
    derive_seed,
    generate_dataset,
    read_dataset,
    sample_probe_pulse,
    sample_tagged_pulse,
    sample_weights,
    split_dataset,
    write_dataset,
)
from surrogate_gsc.qsim import MHZ


@pytest.fixture(scope="module")
def strategy(general):
    return SamplingStrategy.from_config(general)


def only(strategy, name):
    return SamplingStrategy(
        strategy.voltage_range, strategy.assumed_exchange, strategy.assumed_dbz,
        {s: float(s == name) for s in STRATEGIES}, strategy.length_range,
    )


def constant_stretches(eps):
    edges = np.flatnonzero(np.diff(eps) != 0) + 1
    return np.split(eps, edges)


def test_strategy_validation(strategy):
    with pytest.raises(ValueError):
        SamplingStrategy(strategy.voltage_range, strategy.assumed_exchange, 0.26,
                         {"uniform_random": 0.5, "rotation_window": 0.4})
    with pytest.raises(ValueError):
        SamplingStrategy(strategy.voltage_range, strategy.assumed_exchange, 0.26, length_range=(20, 10))
    with pytest.raises(ValueError):
        SamplingStrategy(strategy.voltage_range, strategy.assumed_exchange, 0.26,
                         {"uniform_random": 1.0, "sweep": 0.0})


def test_uniform_random_ranges(strategy):
    s = only(strategy, "uniform_random")
    rng = np.random.default_rng(0)
    lengths = []
    for _ in range(2000):
        p = sample_probe_pulse(s, rng)
        lengths.append(p.length)
        assert np.all((p.epsilons >= -3.2) & (p.epsilons <= 0.5))
    assert min(lengths) == 10 and max(lengths) == 50


def test_rotation_window_stretches(strategy):
    s = only(strategy, "rotation_window")
    rng = np.random.default_rng(1)
    model = s.assumed_exchange
    for _ in range(500):
        pulse, tag = sample_tagged_pulse(s, rng)
        assert tag == "rotation_window"
        for stretch in constant_stretches(pulse.epsilons):
            # adjacent stretches may share a voltage only with probability zero
            area = model.rate(stretch[0]) * len(stretch)
            assert np.pi / 2 - 1e-9 <= area <= 4 * np.pi + 1e-9


def test_rotation_window_fallback(strategy, caplog):
    narrow = SamplingStrategy((-3.2, -3.1), strategy.assumed_exchange, strategy.assumed_dbz,
                              {"rotation_window": 1.0}, (10, 12))
    pulse, tag = sample_tagged_pulse(narrow, np.random.default_rng(0))
    assert tag == "uniform_random"
    assert "falling back" in caplog.text
    assert np.all((pulse.epsilons >= -3.2) & (pulse.epsilons <= -3.1))


def test_uniform_angle_histogram(strategy):
    s = only(strategy, "uniform_angle")
    rng = np.random.default_rng(2)
    lo, hi = axis_angle_interval(s)
    model = s.assumed_exchange
    theta = []
    while len(theta) < 100_000:
        pulse = sample_probe_pulse(s, rng)
        # one axis angle per constant stretch
        theta.extend(np.arctan2(s.assumed_dbz, model.rate(st[0])) for st in constant_stretches(pulse.epsilons))
    theta = np.asarray(theta[:100_000])
    counts, _ = np.histogram(theta, bins=50, range=(lo, hi))
    assert counts.sum() == len(theta)
    assert sstats.chisquare(counts).pvalue > 0.01


def test_fractions_within_multinomial_bounds(general, strategy):
    rng_master = 5
    n = 10_000
    tags = [sample_tagged_pulse(strategy, np.random.default_rng(derive_seed(rng_master, i)))[1] for i in range(n)]
    for name in STRATEGIES:
        p = strategy.fractions[name]
        observed = tags.count(name)
        assert abs(observed - n * p) < 3 * np.sqrt(n * p * (1 - p)), name


def test_generate_dataset_empty_and_deterministic(general_quiet, strategy, tmp_path):
    assert generate_dataset(strategy, general_quiet, 0, seed=1) == []
    a = write_dataset(tmp_path / "a.jsonl", generate_dataset(strategy, general_quiet, 30, seed=4))
    b = write_dataset(tmp_path / "b.jsonl", generate_dataset(strategy, general_quiet, 30, seed=4, chunk=7))
    assert a.read_bytes() == b.read_bytes()
    c = write_dataset(tmp_path / "c.jsonl", generate_dataset(strategy, general_quiet, 30, seed=5))
    assert a.read_bytes() != c.read_bytes()


def test_dataset_round_trip(general, strategy, tmp_path):
    recs = generate_dataset(strategy, general, 12, seed=3)
    path = write_dataset(tmp_path / "d.jsonl", recs, manifest={"seed": 3})
    back = read_dataset(path)
    assert [r.to_json() for r in back] == [r.to_json() for r in recs]
    assert (tmp_path / "d.jsonl.manifest.json").exists()
    for r in recs:
        assert r.pulse.dbz == pytest.approx(42.1 * MHZ)
        assert 10 <= r.pulse.length <= 50


def test_record_length_mismatch_rejected(general_quiet, strategy):
    rec = generate_dataset(strategy, general_quiet, 1, seed=0)[0]
    line = rec.to_json().replace(f'"length":{rec.pulse.length}', '"length":3')
    with pytest.raises(ValueError):
        ProbeRecord.from_json(line)


def test_split_sizes():
    assert split_dataset(100).sizes() == (81, 9, 10)
    s = split_dataset(3)
    assert all(n >= 1 for n in s.sizes())
    with pytest.raises(ValueError):
        split_dataset(2)
    with pytest.raises(ValueError):
        split_dataset(100, ratios=(0.5, 0.2, 0.2))


@pytest.mark.parametrize("n", [3, 10, 101, 5000])
def test_split_disjoint_exhaustive(n):
    s = split_dataset(n, seed=9)
    allidx = np.concatenate([s.train, s.validation, s.test])
    assert sorted(allidx.tolist()) == list(range(n))
    assert abs(len(s.validation) - 0.09 * n) <= 1 and abs(len(s.test) - 0.10 * n) <= 1
    again = split_dataset(n, seed=9)
    assert all(np.array_equal(a, b) for a, b in zip(
        (again.train, again.validation, again.test), (s.train, s.validation, s.test)))


def test_weights_examples():
    assert np.all(sample_weights([0.305, 0.301, 0.309]) == 1.0)
    w = sample_weights([0.105] * 90 + [0.555] * 10)
    assert set(w[:90]) == {1.0} and set(w[90:]) == {9.0}


def test_weights_equalize_bin_mass(rng):
    p = rng.beta(0.5, 2.0, size=5000)
    w = sample_weights(p)
    bins = np.clip(np.floor(p / 0.01).astype(int), 0, 99)
    mass = np.bincount(bins, weights=w)
    nonempty = mass[np.bincount(bins, minlength=len(mass)) > 0]
    assert np.allclose(nonempty, nonempty.max(), atol=0, rtol=1e-12)
    assert np.all(w >= 1.0) and np.all(np.isfinite(w))
    perm = rng.permutation(len(p))
    assert np.array_equal(sample_weights(p[perm]), w[perm])
    with pytest.raises(ValueError):
        sample_weights([])
