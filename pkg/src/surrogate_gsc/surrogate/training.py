"""Adam training loop with plateau learning-rate reduction and early stopping."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..qsim import NumericError
from .network import Network, loss_and_grads, weighted_mae

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    factor: float = 0.8
    patience: int = 60
    early_stop: int = 130
    batch_size: int = 256
    max_epochs: int = 10_000
    time_limit: float | None = None  # seconds, checked between epochs
    dtype: str = "float32"

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ValueError("factor must lie in (0, 1)")
        if not 0 < self.patience < self.early_stop:
            raise ValueError("need 0 < patience < early_stop")
        if self.batch_size < 1 or self.max_epochs < 1 or self.lr <= 0:
            raise ValueError("batch_size, max_epochs and lr must be positive")

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        base = {"general": dict(factor=0.8, patience=60, early_stop=130),
                "specific": dict(factor=0.9, patience=25, early_stop=60),
                # shortened plateau schedule for desk-scale runs
                "desk": dict(factor=0.5, patience=4, early_stop=12, max_epochs=60)}
        if name not in base:
            raise ValueError(f"unknown training preset {name!r}")
        return cls(**{**base[name], **overrides})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    stopped: str = ""

    def __len__(self):
        return len(self.train_loss)

    def to_dict(self) -> dict:
        return asdict(self)

    def rows(self):
        for i, (a, b, c) in enumerate(zip(self.train_loss, self.val_loss, self.lr)):
            yield i + 1, a, b, c


class Adam:
    def __init__(self, params: dict, lr, beta1, beta2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(params[k].dtype)


def validation_loss(net: Network, X, Y) -> float:
    """Unweighted MAE in inference mode."""
    return weighted_mae(net.predict(X), Y)


def train(net: Network, X_train, Y_train, X_val, Y_val, weights=None,
          cfg: TrainConfig = TrainConfig(), seed: int = 0, callback=None):
    """Train ``net`` in place and return ``(best network, history)``.

    Each epoch draws a fresh permutation from ``seed``. The learning rate is
    multiplied by ``cfg.factor`` after ``cfg.patience`` epochs without a new
    best validation loss; training ends after ``cfg.early_stop`` such epochs.
    A non-finite loss aborts with the history so far.
    """
    dt = np.dtype(cfg.dtype)
    if net.dtype != dt:
        net.params = {k: v.astype(dt) for k, v in net.params.items()}
        net.state = {k: v.astype(dt) for k, v in net.state.items()}
    X_train = np.asarray(X_train, dtype=dt)
    Y_train = np.asarray(Y_train, dtype=dt)
    X_val = np.asarray(X_val, dtype=dt)
    Y_val = np.asarray(Y_val, dtype=dt)
    n = len(X_train)
    if n == 0 or len(X_val) == 0:
        raise ValueError("training and validation sets must be non-empty")
    w = np.ones(n, dtype=dt) if weights is None else np.asarray(weights, dtype=dt)
    rng = np.random.default_rng(seed)
    opt = Adam(net.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    hist = History()
    best, best_loss = net.copy(), np.inf
    since_best = since_cut = 0
    t0 = time.monotonic()
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s: s + cfg.batch_size]
            try:
                loss, grads = loss_and_grads(net, X_train[idx], Y_train[idx], w[idx])
            except NumericError as exc:
                hist.stopped = f"numeric failure: {exc}"
                return best, hist
            if not np.isfinite(loss):
                hist.stopped = "non-finite loss"
                return best, hist
            opt.step(net.params, grads)
            total += loss * len(idx)
        val = validation_loss(net, X_val, Y_val)
        hist.train_loss.append(total / n)
        hist.val_loss.append(val)
        hist.lr.append(opt.lr)
        if callback is not None:
            callback(epoch, hist)
        log.info("epoch %d train %.5f val %.5f lr %.2e", epoch + 1, total / n, val, opt.lr)
        if val < best_loss:
            best_loss, best = val, net.copy()
            since_best = since_cut = 0
        else:
            since_best += 1
            since_cut += 1
        if since_best >= cfg.early_stop:
            hist.stopped = "early stop"
            break
        if since_cut >= cfg.patience:
            opt.lr *= cfg.factor
            since_cut = 0
        if cfg.time_limit is not None and time.monotonic() - t0 > cfg.time_limit:
            hist.stopped = "time limit"
            break
    else:
        hist.stopped = "max epochs"
    return best, hist
