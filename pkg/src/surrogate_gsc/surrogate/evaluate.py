"""Test metrics and the length-generalization table."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..probe import SamplingStrategy, generate_dataset
from ..qsim import QubitConfig
from .network import Network, Normalization, encode_batch

OUTPUTS = ("p_mean", "p_stderr")
THRESHOLDS = (0.05, 0.01)


@dataclass(frozen=True)
class Metrics:
    """Errors per output and averaged; accuracy ``A_d`` is on the mean only."""

    mae: float
    mse: float
    rmse: float
    per_output: dict
    accuracy: dict
    count: int

    def to_dict(self) -> dict:
        d = {"mae": self.mae, "mse": self.mse, "rmse": self.rmse, "count": self.count}
        for name, m in self.per_output.items():
            for k, v in m.items():
                d[f"{k}_{name}"] = v
        for t, a in self.accuracy.items():
            d[f"A_{t}"] = a
        return d


def compute_metrics(pred, target) -> Metrics:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.size == 0:
        raise ValueError("empty test set")
    if pred.shape != target.shape or pred.ndim != 2 or pred.shape[1] != 2:
        raise ValueError("pred and target must both have shape (n, 2)")
    r = pred - target
    per = {}
    for j, name in enumerate(OUTPUTS):
        mse = float(np.mean(r[:, j] ** 2))
        per[name] = {"mae": float(np.mean(np.abs(r[:, j]))), "mse": mse, "rmse": float(np.sqrt(mse))}
    mse = float(np.mean(r ** 2))
    err = np.abs(r[:, 0])
    acc = {t: float(np.mean(err <= t)) for t in THRESHOLDS}
    return Metrics(float(np.mean(np.abs(r))), mse, float(np.sqrt(mse)), per, acc, len(r))


def evaluate(net: Network, X, Y) -> Metrics:
    """Metrics of ``net`` in inference mode on encoded inputs ``X``."""
    if len(X) == 0:
        raise ValueError("empty test set")
    return compute_metrics(net.predict(X), Y)


def length_generalization_report(net: Network, norm: Normalization, L_max: int, cfg: QubitConfig,
                                 strategy: SamplingStrategy, lengths, count: int, seed: int) -> list[dict]:
    """Fresh probe records at each fixed length, scored by ``net``.

    Rows carry MAE and RMSE of both outputs and whether the length lies inside
    ``strategy.length_range`` (the training window).
    """
    lo, hi = strategy.length_range
    rows = []
    for k, L in enumerate(lengths):
        L = int(L)
        if not 1 <= L <= L_max:
            raise ValueError(f"length {L} outside encoder capacity 1..{L_max}")
        fixed = strategy.with_lengths((L, L))
        recs = generate_dataset(fixed, cfg, count, seed=seed + 7919 * (k + 1))
        X = encode_batch([r.pulse for r in recs], L_max, norm)
        Y = np.array([[r.stats.p_mean, r.stats.p_stderr] for r in recs])
        m = evaluate(net, X, Y)
        rows.append({
            "length": L,
            "in_window": bool(lo <= L <= hi),
            "mae_p_mean": m.per_output["p_mean"]["mae"],
            "rmse_p_mean": m.per_output["p_mean"]["rmse"],
            "mae_p_stderr": m.per_output["p_stderr"]["mae"],
            "rmse_p_stderr": m.per_output["p_stderr"]["rmse"],
            "A_0.05": m.accuracy[0.05],
        })
    return rows
