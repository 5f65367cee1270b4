import csv
from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import minimize

from fdcheck import MINI
from surrogate_gsc.gsc import GateSet, SyndromeSet, concat_pulses, gsc_loss, with_hold
from surrogate_gsc.optimize import (
    GateSetCandidate,
    OptimizeConfig,
    Stage,
    SurrogateObjective,
    evaluate_gate_set,
    initial_voltages,
    load_optimize_config,
    optimize_gatesets,
    pearson,
    report,
    resolve_stages,
    run_optimization,
    select_top,
)
from surrogate_gsc.qsim import IDEAL_GATES, ControlPulse, NumericError, infidelity, propagate, rz
from surrogate_gsc.qsim.transfer import identity_kernel
from surrogate_gsc.surrogate.network import Network, Normalization, encode_input

NORM = Normalization(eps_scale=1 / 3.2)
DBZ = 0.26


def mini_net(seed=0):
    net = Network.initialize(MINI, seed=seed, dtype=np.float64)
    for name, p in net.params.items():
        if name.endswith("/b"):
            p += np.random.default_rng(seed).normal(0.0, 0.1, p.shape)
    return net


def config(K=4, stages=None, **kw):
    stages = stages or [Stage(5, 0.5, max_len=2)]
    kw.setdefault("n_top", min(K, 10))
    return OptimizeConfig(n_gatesets=K, gate_length=3, stages=tuple(stages), n_noise=4, **kw)


def test_resolve_stages_inherits():
    rows = load_optimize_config("desk").stages
    assert len(rows) == 6
    assert rows[1] == Stage(600, 0.5, 4, 4, 1, 0.0, 0.0)
    assert rows[3].batch == 8 and rows[3].delta == 0.05 and rows[3].exponent == 2
    assert rows[5].gamma == 2.0
    with pytest.raises(ValueError):
        resolve_stages([{"lr": 0.1}])
    with pytest.raises(ValueError):
        resolve_stages([{"iterations": 1, "lr": 0.1, "momentum": 0.9}])


def test_paper_schedule_is_ten_times_desk():
    desk, paper = load_optimize_config("desk"), load_optimize_config("paper")
    assert paper.n_gatesets == 256 and desk.n_gatesets == 32
    assert [s.iterations for s in paper.stages] == [10 * s.iterations for s in desk.stages]
    assert [replace(s, iterations=0) for s in paper.stages] == [replace(s, iterations=0) for s in desk.stages]


def test_config_validation():
    with pytest.raises(ValueError):
        config(K=4, stages=[Stage(1, 0.1, batch=3)])
    with pytest.raises(ValueError):
        config(stages=[Stage(1, 0.1, exponent=3)])
    with pytest.raises(ValueError):
        config(stages=[Stage(1, 0.1, delta=1.5)])
    with pytest.raises(ValueError):
        config(stages=[Stage(1, 0.1, gamma=-1)])
    with pytest.raises(ValueError):
        config(K=4, n_top=5)
    with pytest.raises(ValueError):
        OptimizeConfig.from_dict({"stages": [], "learning": 1})
    assert config(stages=[Stage(3, 0.1), Stage(4, 0.1)]).total_iterations == 7


def test_initial_voltages_per_candidate_seed(general):
    cfg = config(K=6)
    V = initial_voltages(cfg, general)
    assert V.shape == (6, 2, 3)
    assert np.all((V >= general.eps_min) & (V <= general.eps_max))
    V3 = initial_voltages(replace(cfg, n_gatesets=3, n_top=3), general)
    assert np.array_equal(V[:3], V3)


def test_encode_matches_concatenated_pulses(specific):
    obj = SurrogateObjective(mini_net(), NORM, 70, DBZ, specific.hold)
    V = initial_voltages(config(K=2), specific)
    seqs = [(0,), (1, 0), (0, 1, 1, 0)]
    X = obj.encode(V, seqs)
    for k in range(2):
        gs = GateSet([with_hold(V[k, g], DBZ, specific.hold) for g in range(2)])
        for i, s in enumerate(seqs):
            ref = encode_input(concat_pulses(gs, s, specific.hold), 70, NORM)
            assert np.array_equal(X[k, i], ref)
    too_small = SurrogateObjective(mini_net(), NORM, 20, DBZ, specific.hold)
    with pytest.raises(ValueError):
        too_small.encode(V, [(0, 1, 1)])
    assert too_small.encode(V, [(0, 1)]).shape == (2, 1, 20, 3)


@pytest.mark.parametrize("hold", [False, True])
def test_objective_gradient_matches_finite_differences(specific, hold):
    h = specific.hold if hold else None
    obj = SurrogateObjective(mini_net(3), NORM, 40, DBZ, h)
    syn = SyndromeSet.build().subset(2)
    V = initial_voltages(config(K=2), specific)
    for exponent, gamma in ((2, 0.0), (4, 1.5)):
        _, tot, g = obj.loss_and_grad(V, syn, exponent, gamma)
        for idx in [(0, 0, 0), (0, 1, 2), (1, 0, 1), (1, 1, 0)]:
            Vp, Vm = V.copy(), V.copy()
            Vp[idx] += 1e-6
            Vm[idx] -= 1e-6
            num = (obj.loss_and_grad(Vp, syn, exponent, gamma)[1][idx[0]]
                   - obj.loss_and_grad(Vm, syn, exponent, gamma)[1][idx[0]]) / 2e-6
            assert g[idx] == pytest.approx(num, rel=1e-4, abs=1e-10)
        assert tot.shape == (2,)


def test_stationary_point(general):
    """A surrogate whose mean head already equals every ideal outcome."""
    net = mini_net()
    net.params["dense_1/W"][:, 0] = 0.0
    syn = SyndromeSet.build()
    # both single-gate outcomes are 1/2 up to the same rounding
    assert syn.ideal[0] == syn.ideal[1] == pytest.approx(0.5, abs=1e-15)
    net.params["dense_1/b"][0] = syn.ideal[0]
    obj = SurrogateObjective(net, NORM, 12, DBZ)
    cfg = config(K=2, stages=[Stage(20, 1.0, max_len=1)])
    V0 = initial_voltages(cfg, general)
    V, hist, failed = optimize_gatesets(obj, syn, cfg, general, V0)
    assert np.array_equal(V, V0) and np.all(hist == 0) and not failed.any()
    # the stderr head still depends on the pulse, so gamma > 0 moves it
    cfg = config(K=2, stages=[Stage(5, 1.0, max_len=1, gamma=5.0)])
    V, _, _ = optimize_gatesets(obj, syn, cfg, general, V0)
    assert not np.array_equal(V, V0)


def test_decoupled_candidates_match_independent_runs(general):
    obj = SurrogateObjective(mini_net(1), NORM, 12, DBZ)
    syn = SyndromeSet.build()
    cfg = config(K=4, stages=[Stage(15, 0.3, max_len=2), Stage(10, 0.2, max_len=3, exponent=4)])
    V0 = initial_voltages(cfg, general)
    V, hist, _ = optimize_gatesets(obj, syn, cfg, general, V0)
    for k in range(4):
        Vk, hk, _ = optimize_gatesets(obj, syn, replace(cfg, n_gatesets=1, n_top=1), general, V0[k:k + 1])
        assert np.array_equal(Vk[0], V[k])
        assert np.array_equal(hk[:, 0], hist[:, k])


def test_gradient_mixing_couples_batch(general):
    obj = SurrogateObjective(mini_net(1), NORM, 12, DBZ)
    syn = SyndromeSet.build()
    cfg = config(K=4, stages=[Stage(5, 0.3, max_len=2, batch=2, delta=0.5)])
    V0 = initial_voltages(cfg, general)
    V, _, _ = optimize_gatesets(obj, syn, cfg, general, V0)
    alone, _, _ = optimize_gatesets(obj, syn, replace(cfg, stages=(Stage(5, 0.3, max_len=2),)), general, V0)
    assert not np.allclose(V, alone)
    # delta = 1 makes partners move identically
    cfg1 = config(K=4, stages=[Stage(1, 0.3, max_len=2, batch=2, delta=1.0)])
    V1, _, _ = optimize_gatesets(obj, syn, cfg1, general, V0)
    d = V1 - V0
    unclipped = (V1 > general.eps_min) & (V1 < general.eps_max)
    both = unclipped[0] & unclipped[1]
    assert np.allclose(d[0][both], d[1][both], atol=1e-13)


def test_bounds_respected(general):
    obj = SurrogateObjective(mini_net(2), NORM, 12, DBZ)
    cfg = config(K=4, stages=[Stage(10, 500.0, max_len=2)])
    V, _, _ = optimize_gatesets(obj, SyndromeSet.build(), cfg, general)
    assert np.all((V >= general.eps_min) & (V <= general.eps_max))
    assert np.any(V == general.eps_min) or np.any(V == general.eps_max)
    narrow = replace(cfg, voltage_bounds=(-1.0, -0.5))
    V, _, _ = optimize_gatesets(obj, SyndromeSet.build(), narrow, general)
    assert np.all((V >= -1.0) & (V <= -0.5))


def test_failed_candidate_is_flagged(general):
    obj = SurrogateObjective(mini_net(2), NORM, 12, DBZ)
    cfg = config(K=3, stages=[Stage(4, 0.1, max_len=2)])
    V0 = initial_voltages(cfg, general)
    V0[1, 0, 0] = np.nan
    V, hist, failed = optimize_gatesets(obj, SyndromeSet.build(), cfg, general, V0)
    assert failed.tolist() == [False, True, False]
    assert np.all(np.isnan(hist[:, 1])) and np.all(np.isfinite(hist[:, [0, 2]]))

    class Fragile(SurrogateObjective):
        # stands in for an overflow inside the network
        def loss_and_grad(self, V, *args):
            if np.any(V[:, 1, 1] > -0.7):
                raise NumericError("overflow")
            return super().loss_and_grad(V, *args)

    fragile = Fragile(mini_net(2), NORM, 12, DBZ)
    V0 = initial_voltages(cfg, general)
    V0[:, 1, 1] = [-2.0, -1.5, -0.5]
    V, hist, failed = optimize_gatesets(fragile, SyndromeSet.build(), cfg, general, V0)
    assert failed.tolist() == [False, False, True]
    assert np.all(np.isfinite(hist[:, :2]))


def candidates_with_losses(losses):
    gs = GateSet([ControlPulse(np.zeros(2), DBZ)] * 2)
    return [GateSetCandidate(i, gs, gs, loss) for i, loss in enumerate(losses)]


def test_select_top(rng):
    losses = rng.uniform(0, 1, 20)
    cands = candidates_with_losses(losses)
    top = select_top(cands, 7)
    assert [c.index for c in top] == list(np.argsort(losses)[:7])
    assert max(c.gsc_loss for c in top) <= min(c.gsc_loss for c in cands if c not in top)
    assert [c.index for c in select_top(cands, 20)] == list(np.argsort(losses))
    assert [c.index for c in select_top(candidates_with_losses([0.3] * 6), 4)] == [0, 1, 2, 3]
    assert [c.index for c in select_top(candidates_with_losses([np.nan, 0.2, 0.1]), 3)] == [2, 1, 0]
    with pytest.raises(ValueError):
        select_top(cands, 21)


@pytest.fixture(scope="module")
def undistorted(general_quiet):
    return replace(general_quiet, kernel=identity_kernel())


def tuned_pulse(cfg, target, seed=0):
    dbz = cfg.noise.dbz_mean
    best = None
    for s in range(seed, seed + 8):
        x0 = np.random.default_rng(s).uniform(cfg.eps_min, cfg.eps_max, 12)
        r = minimize(lambda v: infidelity(target, propagate(ControlPulse(v, dbz), cfg.exchange, cfg.kernel)),
                     x0, bounds=[cfg.eps_range] * 12, method="L-BFGS-B", options=dict(ftol=1e-16, gtol=1e-12))
        if best is None or r.fun < best.fun:
            best = r
        if best.fun < 1e-12:
            break
    return ControlPulse(best.x, dbz)


@pytest.mark.parametrize("theta", [0.0, 0.7, -2.2])
def test_constructed_gauge_is_removed(undistorted, theta):
    targets = [rz(-theta) @ IDEAL_GATES[l] @ rz(theta) for l in ("X", "Y")]
    gs = GateSet([tuned_pulse(undistorted, t) for t in targets])
    ev = evaluate_gate_set(gs, undistorted, n_noise=5)
    assert ev["coherent"]["X"] < 1e-8 and ev["coherent"]["Y"] < 1e-8
    # noise off: the Monte Carlo branch is skipped and agrees exactly
    assert ev["incoherent"] == ev["coherent"] and ev["incoherent_stderr"] == {"X": 0.0, "Y": 0.0}
    naive = 0.5 * sum(infidelity(IDEAL_GATES[l], propagate(p, undistorted.exchange, undistorted.kernel))
                      for l, p in zip("XY", gs.pulses))
    if abs(theta) > 0.1:
        assert naive > 1e-3


def test_evaluate_with_noise_in_range(general):
    rng = np.random.default_rng(4)
    gs = GateSet([ControlPulse(rng.uniform(-3, 0, 12), general.noise.dbz_mean) for _ in range(2)])
    ev = evaluate_gate_set(gs, general, n_noise=8, seed=3)
    assert ev == evaluate_gate_set(gs, general, n_noise=8, seed=3)
    for key in ("coherent", "incoherent"):
        assert all(0.0 <= v <= 1.0 for v in ev[key].values())
    assert all(v > 0 for v in ev["incoherent_stderr"].values())


def test_run_optimization_specific_keeps_hold(specific):
    cfg = config(K=2, stages=[Stage(3, 5.0, max_len=2)])
    cands = run_optimization(mini_net(), NORM, 70, specific, cfg, evaluate=False)
    assert len(cands) == 2
    for c in cands:
        assert len(c.history) == cfg.total_iterations
        for p in c.gate_set.pulses:
            assert p.length == 7 and np.all(p.epsilons[3:] == -3.18)
            assert np.all((p.epsilons >= specific.eps_min) & (p.epsilons <= specific.eps_max))
        assert c.final_eval is None


def test_run_optimization_and_report(general, tmp_path):
    cfg = config(K=4, stages=[Stage(4, 0.5, max_len=2)])
    cands = run_optimization(mini_net(), NORM, 12, general.with_noise(n_samples=4), cfg)
    again = run_optimization(mini_net(), NORM, 12, general.with_noise(n_samples=4), cfg)
    assert [c.to_json() for c in cands] == [c.to_json() for c in again]
    for c in cands:
        syn = SyndromeSet.build()
        assert c.gsc_loss == pytest.approx(gsc_loss(
            SurrogateObjective(mini_net(), NORM, 12, general.noise.dbz_mean).predict(
                np.stack([[p.epsilons for p in c.gate_set.pulses]]), syn.sequences)[0, :, 0], syn.ideal))
        assert 0 <= c.final_eval["coherent_mean"] <= 1
    paths = report(cands, tmp_path / "r", n_top=3, bins=10)
    rows = {k: list(csv.reader(p.open())) for k, p in paths.items()}
    assert len(rows["candidates"]) == 5 and len(rows["pairs"]) == 5 and len(rows["sorted"]) == 5
    assert len(rows["history"]) == 1 + cfg.total_iterations and len(rows["history"][0]) == 5
    assert len(rows["top"]) == 4
    assert sum(int(r[2]) for r in rows["histogram"][1:]) == 4
    ranked = [float(r[2]) for r in rows["sorted"][1:]]
    assert ranked == sorted(ranked)


def test_report_without_candidates(tmp_path):
    paths = report([], tmp_path, bins=5)
    for name, p in paths.items():
        rows = list(csv.reader(p.open()))
        if name == "histogram":
            assert sum(int(r[2]) for r in rows[1:]) == 0
        else:
            assert len(rows) == 1


def test_pearson():
    assert pearson([1, 2, 3], [2, 4, 6.5]) == pytest.approx(np.corrcoef([1, 2, 3], [2, 4, 6.5])[0, 1])
    assert np.isnan(pearson([1, 1, 1], [1, 2, 3]))
    assert np.isnan(pearson([1], [2]))
