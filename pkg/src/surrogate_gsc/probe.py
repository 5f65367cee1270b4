"""Probe-pulse sampling, dataset generation, persistence, splitting and
per-record loss weights."""
from __future__ import annotations

import json
import logging
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .qsim import ControlPulse, MeasurementStats, QubitConfig, measure_batch
from .qsim.exchange import MHZ, GeneralExchange, exchange_from_dict

log = logging.getLogger(__name__)

STRATEGIES = ("uniform_random", "rotation_window", "uniform_angle")
MAX_STRETCH_RETRIES = 20


def derive_seed(master: int, *keys: int) -> int:
    """Deterministic 63-bit child seed for ``(master, *keys)``."""
    state = np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1, dtype=np.uint64)
    return int(state[0] >> np.uint64(1))


@dataclass(frozen=True)
class SamplingStrategy:
    """Mixture of probe-pulse generators.

    ``assumed_exchange`` is the coarse (exponential) exchange model available
    before characterization; ``assumed_dbz`` is in rad/ns.
    """

    voltage_range: tuple
    assumed_exchange: GeneralExchange
    assumed_dbz: float
    fractions: dict = field(
        default_factory=lambda: {"uniform_random": 0.6, "rotation_window": 0.1, "uniform_angle": 0.3}
    )
    length_range: tuple = (10, 50)

    def __post_init__(self):
        if set(self.fractions) - set(STRATEGIES):
            raise ValueError(f"unknown strategies: {set(self.fractions) - set(STRATEGIES)}")
        if any(v < 0 for v in self.fractions.values()):
            raise ValueError("fractions must be non-negative")
        if abs(sum(self.fractions.values()) - 1.0) > 1e-12:
            raise ValueError("strategy fractions must sum to 1")
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise ValueError("need 1 <= L_min <= L_max")
        if not self.voltage_range[0] < self.voltage_range[1]:
            raise ValueError("invalid voltage range")
        if not isinstance(self.assumed_exchange, GeneralExchange):
            raise ValueError("probe sampling assumes the exponential exchange model")

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([self.fractions.get(s, 0.0) for s in STRATEGIES])

    def to_dict(self) -> dict:
        return {
            "fractions": dict(self.fractions),
            "length_range": list(self.length_range),
            "voltage_range_mV": list(self.voltage_range),
            "assumed_exchange": self.assumed_exchange.to_dict(),
            "assumed_dbz_MHz": self.assumed_dbz / MHZ,
        }

    def with_lengths(self, length_range) -> "SamplingStrategy":
        return dataclasses.replace(self, length_range=tuple(int(v) for v in length_range))

    @classmethod
    def from_config(cls, cfg: QubitConfig, **overrides) -> "SamplingStrategy":
        p = cfg.probe
        kw = dict(
            voltage_range=tuple(p.get("voltage_range_mV", cfg.eps_range)),
            assumed_exchange=exchange_from_dict(
                p.get("assumed_exchange", {"kind": "general", "J0_MHz": 159.0, "eps0_mV": 0.69})
            ),
            assumed_dbz=float(p.get("assumed_dbz_MHz", cfg.noise.dbz_mean / MHZ)) * MHZ,
            fractions=dict(p.get("fractions", {"uniform_random": 0.6, "rotation_window": 0.1, "uniform_angle": 0.3})),
            length_range=tuple(p.get("length_range", (10, 50))),
        )
        kw.update(overrides)
        return cls(**kw)


@dataclass(frozen=True)
class ProbeRecord:
    pulse: ControlPulse
    stats: MeasurementStats
    strategy: str
    seed: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "epsilons_mv": self.pulse.epsilons.tolist(),
                "dbz_rad_per_ns": self.pulse.dbz,
                "length": self.pulse.length,
                "p_mean": self.stats.p_mean,
                "p_stderr": self.stats.p_stderr,
                "strategy": self.strategy,
                "seed": self.seed,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "ProbeRecord":
        d = json.loads(line)
        pulse = ControlPulse(np.asarray(d["epsilons_mv"], dtype=float), d["dbz_rad_per_ns"])
        if pulse.length != d["length"]:
            raise ValueError("record length field does not match its voltages")
        return cls(pulse, MeasurementStats(d["p_mean"], d["p_stderr"]), d["strategy"], int(d["seed"]))


def _stretches(L: int, rng) -> list[int]:
    """Split ``L`` segments into constant stretches of random duration."""
    out = []
    remaining = L
    while remaining > 0:
        d = int(rng.integers(2, L + 1)) if L >= 2 else 1
        d = min(d, remaining)
        out.append(d)
        remaining -= d
    return out


def _rotation_window_voltages(strategy: SamplingStrategy, L: int, rng) -> np.ndarray | None:
    """Stretches with ``J(eps) * T`` uniform on its feasible part of [pi/2, 4 pi]."""
    model = strategy.assumed_exchange
    lo, hi = strategy.voltage_range
    J_lo, J_hi = model.rate(lo), model.rate(hi)
    out = []
    remaining = L
    while remaining > 0:
        for _ in range(MAX_STRETCH_RETRIES):
            T = min(int(rng.integers(2, L + 1)) if L >= 2 else 1, remaining)
            a_lo = max(np.pi / 2, J_lo * T)
            a_hi = min(4 * np.pi, J_hi * T)
            if a_lo <= a_hi:
                break
        else:
            return None
        angle = rng.uniform(a_lo, a_hi)
        eps = float(np.clip(model.voltage_for_rate(angle / T), lo, hi))
        out.extend([eps] * T)
        remaining -= T
    return np.asarray(out)


def axis_angle_interval(strategy: SamplingStrategy) -> tuple[float, float]:
    """Reachable range of the rotation-axis polar angle ``arctan(dBz / J)``."""
    model = strategy.assumed_exchange
    lo, hi = strategy.voltage_range
    return (
        float(np.arctan2(strategy.assumed_dbz, model.rate(hi))),
        float(np.arctan2(strategy.assumed_dbz, model.rate(lo))),
    )


def _uniform_angle_voltages(strategy: SamplingStrategy, L: int, rng) -> np.ndarray:
    model = strategy.assumed_exchange
    lo, hi = strategy.voltage_range
    th_lo, th_hi = axis_angle_interval(strategy)
    out = []
    for T in _stretches(L, rng):
        theta = rng.uniform(th_lo, th_hi)
        J = strategy.assumed_dbz / np.tan(theta)
        out.extend([float(np.clip(model.voltage_for_rate(J), lo, hi))] * T)
    return np.asarray(out)


def sample_tagged_pulse(strategy: SamplingStrategy, rng) -> tuple[ControlPulse, str]:
    """Draw one probe pulse and report which generator produced it."""
    branch = STRATEGIES[int(rng.choice(len(STRATEGIES), p=strategy.probabilities))]
    L = int(rng.integers(strategy.length_range[0], strategy.length_range[1] + 1))
    lo, hi = strategy.voltage_range
    eps = None
    if branch == "rotation_window":
        eps = _rotation_window_voltages(strategy, L, rng)
        if eps is None:
            log.warning("rotation window infeasible for L=%d, falling back to uniform_random", L)
            branch = "uniform_random"
    elif branch == "uniform_angle":
        eps = _uniform_angle_voltages(strategy, L, rng)
    if branch == "uniform_random":
        eps = rng.uniform(lo, hi, size=L)
    return ControlPulse(eps, strategy.assumed_dbz), branch


def sample_probe_pulse(strategy: SamplingStrategy, rng) -> ControlPulse:
    return sample_tagged_pulse(strategy, rng)[0]


def generate_records(strategy: SamplingStrategy, cfg: QubitConfig, start: int, stop: int,
                     seed: int) -> list[ProbeRecord]:
    """Records ``start..stop-1`` of the dataset defined by ``seed``."""
    seeds = [derive_seed(seed, i) for i in range(start, stop)]
    rngs = [np.random.default_rng(s) for s in seeds]
    tagged = [sample_tagged_pulse(strategy, r) for r in rngs]
    try:
        p_mean, p_err = measure_batch([t[0] for t in tagged], cfg, rngs)
    except FloatingPointError as exc:
        raise FloatingPointError(f"simulation failed in records {start}..{stop - 1}: {exc}") from exc
    return [ProbeRecord(pulse, MeasurementStats(float(m), float(e)), tag, s)
            for (pulse, tag), s, m, e in zip(tagged, seeds, p_mean, p_err)]


def generate_dataset(
    strategy: SamplingStrategy, cfg: QubitConfig, count: int, seed: int, chunk: int = 2048
) -> list[ProbeRecord]:
    """Sample ``count`` probe pulses and simulate their measurement statistics.

    Record ``i`` uses its own generator seeded from ``(seed, i)``, first for the
    pulse and then for the noise draws.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    records: list[ProbeRecord] = []
    for start in range(0, count, chunk):
        records.extend(generate_records(strategy, cfg, start, min(count, start + chunk), seed))
    return records


def write_dataset(path: str | Path, records: Iterable[ProbeRecord], manifest: dict | None = None) -> Path:
    """Write records as JSON lines; ``manifest`` goes to ``<path>.manifest.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")
    if manifest is not None:
        manifest_path(path).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def read_dataset(path: str | Path) -> list[ProbeRecord]:
    with Path(path).open() as fh:
        return [ProbeRecord.from_json(line) for line in fh if line.strip()]


@dataclass(frozen=True)
class DatasetSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


def split_dataset(n_records: int | Sequence, ratios=(0.81, 0.09, 0.10), seed: int = 0) -> DatasetSplit:
    """Shuffled train/validation/test index split."""
    n = n_records if isinstance(n_records, (int, np.integer)) else len(n_records)
    if n < 3:
        raise ValueError("need at least 3 records to split")
    ratios = np.asarray(ratios, dtype=float)
    if len(ratios) != 3 or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    n_val = max(1, int(round(ratios[1] * n)))
    n_test = max(1, int(round(ratios[2] * n)))
    n_train = n - n_val - n_test
    if n_train < 1:
        n_train, n_val = 1, n - 1 - n_test
    perm = np.random.default_rng(seed).permutation(n)
    return DatasetSplit(
        np.sort(perm[:n_train]), np.sort(perm[n_train: n_train + n_val]), np.sort(perm[n_train + n_val:])
    )


def sample_weights(p_means, bin_width: float = 0.01) -> np.ndarray:
    """Inverse-density weights along the mean-probability axis.

    Each record gets ``max_bin_count / count(its bin)``.
    """
    p = np.asarray([r.stats.p_mean for r in p_means] if len(p_means) and isinstance(p_means[0], ProbeRecord) else p_means, dtype=float)
    if p.size == 0:
        raise ValueError("no records to weight")
    n_bins = int(round(1.0 / bin_width))
    bins = np.clip(np.floor(p / bin_width).astype(int), 0, n_bins - 1)
    counts = np.bincount(bins, minlength=n_bins)
    return counts.max() / counts[bins].astype(float)
