"""Batched gradient descent of gate-set pulses through a frozen surrogate.

Every candidate gate set holds free voltages for each gate; hold segments of
the specific protocol are appended outside the optimization variables and
therefore never move. One iteration updates every candidate once:

    L_n = L_GSC,n + gamma * mean_i(dp_i**2)
    g_n <- (1 - delta) g_n + delta * mean over the candidate's mini-batch
    lambda_n <- clip(lambda_n - lr * g_n, bounds)
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .gsc import GATE_LABELS, GateSet, SyndromeSet, gsc_loss, with_hold
from .probe import derive_seed
from .qsim import (
    IDEAL_GATES,
    HoldSpec,
    NoiseRealization,
    NumericError,
    QubitConfig,
    global_z_correct,
    infidelity,
    propagate,
    read_preset_json,
    rz,
)
from .qsim.noise import sample_fast_noise_batch
from .surrogate.network import Network, Normalization

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Stage:
    iterations: int
    lr: float
    max_len: int = 4
    exponent: int = 2
    batch: int = 1
    gamma: float = 0.0
    delta: float = 0.0

    def validate(self, n_gatesets: int):
        if self.iterations < 0 or self.lr <= 0:
            raise ValueError("stage needs iterations >= 0 and lr > 0")
        if self.exponent not in (2, 4):
            raise ValueError("exponent must be 2 or 4")
        if self.batch < 1 or n_gatesets % self.batch:
            raise ValueError(f"mini-batch {self.batch} does not divide {n_gatesets} gate sets")
        if not 0.0 <= self.delta <= 1.0 or self.gamma < 0:
            raise ValueError("need 0 <= delta <= 1 and gamma >= 0")
        if self.max_len < 1:
            raise ValueError("max_len must be positive")


STAGE_KEYS = tuple(f.name for f in fields(Stage))


def resolve_stages(rows) -> list[Stage]:
    """Stage list where fields missing from a row keep their previous value."""
    out: list[Stage] = []
    current: dict = {}
    for row in rows:
        unknown = set(row) - set(STAGE_KEYS)
        if unknown:
            raise ValueError(f"unknown stage fields {sorted(unknown)}")
        current = {**current, **row}
        if "iterations" not in current or "lr" not in current:
            raise ValueError("the first stage must set iterations and lr")
        out.append(Stage(**current))
    return out


@dataclass(frozen=True)
class OptimizeConfig:
    n_gatesets: int = 256
    gate_length: int = 12
    stages: tuple = ()
    seed: int = 0
    n_top: int = 10
    n_noise: int = 60
    voltage_bounds: tuple | None = None
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(
            s if isinstance(s, Stage) else Stage(**s) for s in self.stages))
        if self.n_gatesets < 1 or self.gate_length < 1 or self.n_noise < 1:
            raise ValueError("n_gatesets, gate_length and n_noise must be positive")
        if not 1 <= self.n_top <= self.n_gatesets:
            raise ValueError("n_top must lie in 1..n_gatesets")
        for s in self.stages:
            s.validate(self.n_gatesets)

    @property
    def total_iterations(self) -> int:
        return sum(s.iterations for s in self.stages)

    def bounds(self, qubit: QubitConfig) -> tuple[float, float]:
        return tuple(self.voltage_bounds) if self.voltage_bounds is not None else qubit.eps_range

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizeConfig":
        d = dict(d)
        d["stages"] = tuple(resolve_stages(d.get("stages", [])))
        if d.get("voltage_bounds") is not None:
            d["voltage_bounds"] = tuple(d["voltage_bounds"])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown optimize config fields {sorted(unknown)}")
        return cls(**d)


def load_optimize_config(name_or_path) -> OptimizeConfig:
    return OptimizeConfig.from_dict(read_preset_json(name_or_path))


@dataclass
class GateSetCandidate:
    index: int
    gate_set: GateSet
    initial_gate_set: GateSet
    gsc_loss: float = float("nan")
    initial_gsc_loss: float = float("nan")
    history: list = field(default_factory=list)
    failed: bool = False
    final_eval: dict | None = None
    initial_eval: dict | None = None

    def to_json(self) -> str:
        return json.dumps({
            "index": self.index,
            "gsc_loss": self.gsc_loss,
            "initial_gsc_loss": self.initial_gsc_loss,
            "failed": self.failed,
            "gates": {
                label: {"epsilons_mv": p.epsilons.tolist(), "dbz_rad_per_ns": p.dbz, "length": p.length}
                for label, p in zip(GATE_LABELS, self.gate_set.pulses)
            },
            "final_eval": self.final_eval,
        }, sort_keys=True, indent=1)


def initial_voltages(cfg: OptimizeConfig, qubit: QubitConfig, n_gates: int = 2) -> np.ndarray:
    """I.i.d. uniform voltages within bounds, one generator per candidate."""
    lo, hi = cfg.bounds(qubit)
    out = np.empty((cfg.n_gatesets, n_gates, cfg.gate_length))
    for k in range(cfg.n_gatesets):
        out[k] = np.random.default_rng(derive_seed(cfg.seed, k)).uniform(lo, hi, (n_gates, cfg.gate_length))
    return out


class SurrogateObjective:
    """Syndrome predictions and voltage gradients for many candidates at once."""

    def __init__(self, net: Network, norm: Normalization, L_max: int, dbz: float,
                 hold: HoldSpec | None = None):
        self.net, self.norm, self.L_max, self.dbz, self.hold = net, norm, L_max, dbz, hold

    def _gate_pulses(self, V: np.ndarray) -> np.ndarray:
        if self.hold is None:
            return V
        pad = np.full(V.shape[:-1] + (self.hold.gate_segments,), self.hold.eps)
        return np.concatenate([V, pad], axis=-1)

    def encode(self, V: np.ndarray, sequences) -> np.ndarray:
        """Encoded inputs of shape ``(K, n_seq, L_max, 3)``."""
        K = V.shape[0]
        P = self._gate_pulses(V)
        Lg = P.shape[-1]
        X = np.zeros((K, len(sequences), self.L_max, 3))
        tail = self.hold.tail_segments if self.hold else 0
        for i, seq in enumerate(sequences):
            L = len(seq) * Lg + tail
            if L > self.L_max:
                raise ValueError(f"sequence needs {L} segments, surrogate capacity is {self.L_max}")
            for j, g in enumerate(seq):
                X[:, i, j * Lg: (j + 1) * Lg, 0] = P[:, g]
            if tail:
                X[:, i, len(seq) * Lg: L, 0] = self.hold.eps
            X[:, i, :L, 1] = self.dbz * self.norm.dbz_scale
            X[:, i, :L, 2] = 1.0
        X[..., 0] *= self.norm.eps_scale
        return X

    def predict(self, V: np.ndarray, sequences, batch_size: int = 2048) -> np.ndarray:
        X = self.encode(V, sequences)
        K, n = X.shape[:2]
        return self.net.predict(X.reshape(K * n, self.L_max, 3), batch_size).reshape(K, n, 2).astype(float)

    def loss_and_grad(self, V: np.ndarray, syndromes: SyndromeSet, exponent: int, gamma: float):
        """Per-candidate ``(L_GSC, L_total, dL_total/dV)``."""
        seqs = syndromes.sequences
        X = self.encode(V, seqs)
        K, n = X.shape[:2]
        y, caches = self.net.forward(X.reshape(K * n, self.L_max, 3), train=False, keep_cache=True)
        y = y.reshape(K, n, 2).astype(float)
        r = y[..., 0] - syndromes.ideal
        l_gsc = np.mean(np.abs(r) ** exponent, axis=1)
        l_std = np.mean(y[..., 1] ** 2, axis=1)
        up = np.empty((K, n, 2))
        up[..., 0] = exponent * r ** (exponent - 1) / n
        up[..., 1] = gamma * 2.0 * y[..., 1] / n
        dX, _ = self.net.backward(caches, up.reshape(K * n, 2).astype(self.net.dtype),
                                  param_grads=False)
        dX = dX[..., 0].reshape(K, n, self.L_max).astype(float) * self.norm.eps_scale
        n_free = V.shape[-1]
        Lg = n_free + (self.hold.gate_segments if self.hold else 0)
        grad = np.zeros_like(V)
        for i, seq in enumerate(seqs):
            for j, g in enumerate(seq):
                grad[:, g] += dX[:, i, j * Lg: j * Lg + n_free]
        return l_gsc, l_gsc + gamma * l_std, grad


def optimize_gatesets(objective: SurrogateObjective, syndromes: SyndromeSet, cfg: OptimizeConfig,
                      qubit: QubitConfig, V0: np.ndarray | None = None, progress=None):
    """Run every stage on all candidates; returns ``(V_final, history, failed)``.

    ``history`` has one row per iteration holding each candidate's stage
    objective ``L_GSC`` (stage exponent, stage sequence subset).
    """
    V = initial_voltages(cfg, qubit) if V0 is None else np.array(V0, dtype=float)
    K = V.shape[0]
    lo, hi = cfg.bounds(qubit)
    failed = np.zeros(K, dtype=bool)
    history = []
    it = 0
    for stage in cfg.stages:
        stage.validate(K)
        sub = syndromes.subset(stage.max_len)
        log.info("stage %s on %d sequences", stage, sub.n_seq)
        for _ in range(stage.iterations):
            l_gsc, g = _guarded_step(objective, V, sub, stage, failed)
            if stage.delta > 0 and stage.batch > 1:
                gb = g.reshape(K // stage.batch, stage.batch, *g.shape[1:])
                gb = (1.0 - stage.delta) * gb + stage.delta * gb.mean(axis=1, keepdims=True)
                g = gb.reshape(g.shape)
                g[failed] = 0.0
            V -= stage.lr * g
            np.clip(V, lo, hi, out=V)
            history.append(np.where(failed, np.nan, l_gsc))
            it += 1
            if progress is not None:
                progress(it, history[-1])
    return V, np.array(history).reshape(len(history), K), failed


def _guarded_step(objective, V, syndromes, stage, failed):
    """Loss and gradient of the healthy candidates; flags new failures in place.

    A non-finite value anywhere in the batch is traced back to its candidate
    by re-evaluating them one at a time.
    """
    K = V.shape[0]
    failed |= ~np.all(np.isfinite(V), axis=(1, 2))
    l_gsc, g = np.full(K, np.nan), np.zeros_like(V)
    live = np.flatnonzero(~failed)
    if live.size == 0:
        return l_gsc, g
    try:
        with np.errstate(all="ignore"):
            l, lt, gl = objective.loss_and_grad(V[live], syndromes, stage.exponent, stage.gamma)
    except NumericError:
        if K == 1:
            failed[0] = True
            return l_gsc, g
        for k in live:
            # failed[k:k + 1] is a view, so the recursion flags in place
            l_gsc[k:k + 1], g[k:k + 1] = _guarded_step(objective, V[k:k + 1], syndromes, stage, failed[k:k + 1])
        return l_gsc, g
    ok = np.isfinite(lt) & np.all(np.isfinite(gl), axis=(1, 2))
    failed[live[~ok]] = True
    l_gsc[live[ok]], g[live[ok]] = l[ok], gl[ok]
    return l_gsc, g


def select_top(candidates, k: int = 10):
    """The ``k`` candidates with smallest ``gsc_loss``; ties and NaN ordered by index."""
    if k > len(candidates):
        raise ValueError("k exceeds the number of candidates")

    def key(c):
        loss = c.gsc_loss
        return (not np.isfinite(loss), loss if np.isfinite(loss) else 0.0, c.index)

    return sorted(candidates, key=key)[:k]


def _noisy_unitaries(pulse, qubit: QubitConfig, n: int, rng):
    noise = qubit.noise
    dbz = rng.normal(noise.dbz_mean, noise.sigma_dbz, size=n)
    off = rng.normal(0.0, noise.sigma_eps, size=n)
    fast = sample_fast_noise_batch(noise, pulse.length, n, rng)
    return [propagate(pulse, qubit.exchange, qubit.kernel, NoiseRealization(off[s], dbz[s], fast[s]))
            for s in range(n)]


def evaluate_gate_set(gate_set: GateSet, qubit: QubitConfig, n_noise: int = 60, seed: int = 0) -> dict:
    """Coherent and Monte Carlo infidelities after the global-Z correction.

    The gauge angle comes from the noiseless gates and is applied to every
    noisy realization as well; with noise disabled both infidelities agree.
    """
    dbz0 = qubit.noise.dbz_mean
    U = [propagate(p, qubit.exchange, qubit.kernel, NoiseRealization(dbz=dbz0)) for p in gate_set.pulses]
    theta, corrected = global_z_correct(U[0], U[1])
    fwd, back = rz(theta), rz(-theta)
    coh = {l: infidelity(IDEAL_GATES[l], G) for l, G in zip(GATE_LABELS, corrected)}
    out = {"theta": theta, "coherent": coh, "coherent_mean": float(np.mean(list(coh.values())))}
    if qubit.noise.enabled:
        inc, err = {}, {}
        for g, (label, pulse) in enumerate(zip(GATE_LABELS, gate_set.pulses)):
            rng = np.random.default_rng([seed, g])
            vals = np.array([infidelity(IDEAL_GATES[label], fwd @ Un @ back)
                             for Un in _noisy_unitaries(pulse, qubit, n_noise, rng)])
            inc[label] = float(vals.mean())
            err[label] = float(vals.std(ddof=1) / np.sqrt(n_noise)) if n_noise > 1 else 0.0
    else:
        inc, err = dict(coh), {l: 0.0 for l in GATE_LABELS}
    out["incoherent"] = inc
    out["incoherent_stderr"] = err
    out["incoherent_mean"] = float(np.mean(list(inc.values())))
    return out


def gate_sets_from_voltages(V: np.ndarray, dbz: float, hold: HoldSpec | None):
    return [GateSet([with_hold(V[k, g], dbz, hold) for g in range(V.shape[1])]) for k in range(V.shape[0])]


def run_optimization(net: Network, norm: Normalization, L_max: int, qubit: QubitConfig,
                     cfg: OptimizeConfig, progress=None, evaluate: bool = True) -> list[GateSetCandidate]:
    """Optimize, score every candidate against the simulator, and return them all."""
    syndromes = SyndromeSet.build(max_len=4)
    dbz = qubit.noise.dbz_mean
    obj = SurrogateObjective(net, norm, L_max, dbz, qubit.hold)
    V0 = initial_voltages(cfg, qubit)
    init_loss = [gsc_loss(p, syndromes.ideal) for p in obj.predict(V0, syndromes.sequences)[..., 0]]
    V, hist, failed = optimize_gatesets(obj, syndromes, cfg, qubit, V0, progress)
    final_pred = np.full((len(V), syndromes.n_seq), np.nan)
    if (~failed).any():
        final_pred[~failed] = obj.predict(V[~failed], syndromes.sequences)[..., 0]
    initial_sets = gate_sets_from_voltages(V0, dbz, qubit.hold)
    final_sets = gate_sets_from_voltages(V, dbz, qubit.hold)
    cands = []
    for k in range(len(V)):
        loss = float("nan") if failed[k] else gsc_loss(final_pred[k], syndromes.ideal)
        c = GateSetCandidate(k, final_sets[k], initial_sets[k], loss, float(init_loss[k]),
                             hist[:, k].tolist(), bool(failed[k]))
        if evaluate and not c.failed:
            c.final_eval = evaluate_gate_set(c.gate_set, qubit, cfg.n_noise, derive_seed(cfg.seed, k, 1))
            c.initial_eval = evaluate_gate_set(c.initial_gate_set, qubit.with_noise(enabled=False), 1)
        cands.append(c)
    return cands


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or a.std() == 0 or b.std() == 0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return path


def report(candidates, out_dir, n_top: int = 10, bins: int = 20) -> dict:
    """Write the summary CSV tables and return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cands = list(candidates)
    nan = float("nan")

    def ev(c, key, label=None):
        e = c.final_eval
        if e is None:
            return nan
        return e[key][label] if label else e[key]

    paths = {}
    paths["candidates"] = _write_csv(out / "candidates.csv", [
        "candidate", "gsc_loss", "initial_gsc_loss", "failed", "theta", "coherent_X", "coherent_Y",
        "coherent_mean", "incoherent_X", "incoherent_Y", "incoherent_mean", "initial_coherent_mean"],
        [[c.index, c.gsc_loss, c.initial_gsc_loss, int(c.failed), ev(c, "theta"),
          ev(c, "coherent", "X"), ev(c, "coherent", "Y"), ev(c, "coherent_mean"),
          ev(c, "incoherent", "X"), ev(c, "incoherent", "Y"), ev(c, "incoherent_mean"),
          c.initial_eval["coherent_mean"] if c.initial_eval else nan] for c in cands])
    n_it = max((len(c.history) for c in cands), default=0)
    paths["history"] = _write_csv(out / "loss_history.csv", ["iteration"] + [f"c{c.index}" for c in cands],
                                  [[i + 1] + [c.history[i] for c in cands] for i in range(n_it)])
    paths["pairs"] = _write_csv(out / "infidelity_pairs.csv", ["candidate", "initial_coherent", "final_coherent"],
                                [[c.index, c.initial_eval["coherent_mean"] if c.initial_eval else nan,
                                  ev(c, "coherent_mean")] for c in cands])
    ranked = sorted(cands, key=lambda c: (np.isnan(ev(c, "coherent_mean")), ev(c, "coherent_mean"), c.index))
    paths["sorted"] = _write_csv(out / "sorted_infidelities.csv",
                                 ["rank", "candidate", "coherent_mean", "incoherent_mean"],
                                 [[r + 1, c.index, ev(c, "coherent_mean"), ev(c, "incoherent_mean")]
                                  for r, c in enumerate(ranked)])
    top = select_top(cands, min(n_top, len(cands))) if cands else []
    paths["top"] = _write_csv(out / "top_candidates.csv", [
        "rank", "candidate", "gsc_loss", "theta", "coherent_X", "coherent_Y", "incoherent_X", "incoherent_Y"],
        [[r + 1, c.index, c.gsc_loss, ev(c, "theta"), ev(c, "coherent", "X"), ev(c, "coherent", "Y"),
          ev(c, "incoherent", "X"), ev(c, "incoherent", "Y")] for r, c in enumerate(top)])
    final = np.array([ev(c, "coherent_mean") for c in cands], dtype=float)
    counts, edges = np.histogram(final[np.isfinite(final)], bins=bins, range=(0.0, 1.0))
    paths["histogram"] = _write_csv(out / "infidelity_histogram.csv", ["bin_lo", "bin_hi", "count"],
                                    [[float(edges[i]), float(edges[i + 1]), int(counts[i])] for i in range(bins)])
    return paths
