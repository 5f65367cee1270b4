"""Network topology, input encoding, forward pass and gradients."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..qsim import ControlPulse, NumericError
from .layers import LSTM, Activation, BatchNorm, Clip, Conv1D, Dense, Layer

BN = "bn"
N_CHANNELS = 3


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths of the conv -> LSTM -> dense surrogate.

    ``conv3`` and ``conv1`` list kernel counts of the width-3 and width-1
    convolution stacks, with ``"bn"`` marking a batch-norm layer. The last
    dense width must be 2 (mean and standard error of the return probability).
    """

    conv3: tuple = (16, 32, BN, 64)
    conv1: tuple = (70, BN, 50, 20)
    lstm: int = 100
    dense: tuple = (100, 70, 10, 2)
    conv3_activation: str = "selu"
    conv1_activation: str = "sin"
    dense_activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "conv3", tuple(self.conv3))
        object.__setattr__(self, "conv1", tuple(self.conv1))
        object.__setattr__(self, "dense", tuple(self.dense))
        if not self.dense or self.dense[-1] != 2:
            raise ValueError("the final dense layer must have 2 outputs")
        if self.lstm < 1:
            raise ValueError("lstm needs at least one unit")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)


PRESETS = {
    "general": NetworkSpec(),
    "specific": NetworkSpec(conv3=(30, 50, 80), conv1=(90, 80, 50), lstm=150, dense=(150, 100, 20, 2)),
    "desk": NetworkSpec(conv3=(8, 16, BN, 32), conv1=(32, BN, 24, 16), lstm=48, dense=(48, 24, 8, 2)),
    "tiny": NetworkSpec(conv3=(2, BN, 2), conv1=(2, BN, 2), lstm=2, dense=(2, 2)),
}


def get_spec(spec: NetworkSpec | str | dict) -> NetworkSpec:
    if isinstance(spec, NetworkSpec):
        return spec
    if isinstance(spec, str):
        try:
            return PRESETS[spec]
        except KeyError:
            raise ValueError(f"unknown network preset {spec!r}") from None
    return NetworkSpec.from_dict(spec)


def build_layers(spec: NetworkSpec) -> list[Layer]:
    layers: list[Layer] = []
    ch = N_CHANNELS
    for stack, width, act in (("conv3", 3, spec.conv3_activation), ("conv1", 1, spec.conv1_activation)):
        for i, item in enumerate(getattr(spec, stack)):
            if item == BN:
                layers.append(BatchNorm(f"{stack}_bn{i}", ch))
            else:
                layers.append(Conv1D(f"{stack}_{i}", ch, int(item), width))
                layers.append(Activation(f"{stack}_{i}_act", act))
                ch = int(item)
    layers.append(LSTM("lstm", ch, spec.lstm))
    ch = spec.lstm
    for i, width in enumerate(spec.dense):
        last = i == len(spec.dense) - 1
        # the output layer starts centred in the clip window; a zero bias can
        # leave every output clipped, and the clip then passes no gradient
        layers.append(Dense(f"dense_{i}", ch, width, gain=1.0 if last else 6.0,
                            bias_init=0.5 if last else 0.0))
        if not last:
            layers.append(Activation(f"dense_{i}_act", spec.dense_activation))
        ch = width
    layers.append(Clip())
    return layers


def init_params(spec: NetworkSpec, rng, dtype=np.float64) -> tuple[dict, dict]:
    """Fresh parameters and batch-norm running statistics."""
    params, state = {}, {}
    for layer in build_layers(spec):
        params.update(layer.init_params(rng, dtype))
        state.update(layer.init_state(dtype))
    return params, state


def count_params(spec: NetworkSpec | str) -> int:
    layers = build_layers(get_spec(spec))
    return int(sum(np.prod(s) for layer in layers for s in layer.param_shapes().values()))


@dataclass(frozen=True)
class Normalization:
    """Input scaling: voltage channel multiplied by ``eps_scale`` (1/mV)."""

    eps_scale: float
    dbz_scale: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def encode_input(pulse: ControlPulse, L_max: int, norm: Normalization) -> np.ndarray:
    """``(L_max, 3)`` array: scaled voltage, dBz and the active-segment mask.

    Rows beyond the pulse are all zero.
    """
    if pulse.length > L_max:
        raise ValueError(f"pulse of length {pulse.length} exceeds L_max={L_max}")
    out = np.zeros((L_max, N_CHANNELS))
    L = pulse.length
    out[:L, 0] = pulse.epsilons * norm.eps_scale
    out[:L, 1] = pulse.dbz * norm.dbz_scale
    out[:L, 2] = 1.0
    return out


def encode_batch(pulses: Sequence[ControlPulse], L_max: int, norm: Normalization) -> np.ndarray:
    X = np.zeros((len(pulses), L_max, N_CHANNELS))
    for i, p in enumerate(pulses):
        X[i] = encode_input(p, L_max, norm)
    return X


class Network:
    """A parameterized instance of :class:`NetworkSpec`."""

    def __init__(self, spec, params: dict, state: dict):
        self.spec = get_spec(spec)
        self.layers = build_layers(self.spec)
        self.params = params
        self.state = state

    @classmethod
    def initialize(cls, spec, seed: int = 0, dtype=np.float64) -> "Network":
        spec = get_spec(spec)
        params, state = init_params(spec, np.random.default_rng(seed), dtype)
        return cls(spec, params, state)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def copy(self) -> "Network":
        return Network(self.spec, {k: v.copy() for k, v in self.params.items()},
                       {k: v.copy() for k, v in self.state.items()})

    def forward(self, X, train: bool = False, keep_cache: bool = False):
        """Outputs ``(batch, 2)`` clipped to [0, 1]; optionally the layer caches."""
        x = np.asarray(X, dtype=self.dtype)
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(self.params, self.state, x, train)
            if not np.all(np.isfinite(x)):
                raise NumericError(f"non-finite activation after layer {layer.name!r}")
            if keep_cache:
                caches.append(cache)
        return (x, caches) if keep_cache else x

    def backward(self, caches, dy, param_grads: bool = True):
        grads = {}
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, g = layer.backward(self.params, cache, dy, param_grads)
            grads.update(g)
        return dy, grads

    def predict(self, X, batch_size: int = 1024) -> np.ndarray:
        X = np.asarray(X)
        out = np.empty((len(X), 2), dtype=self.dtype)
        for s in range(0, len(X), batch_size):
            out[s: s + batch_size] = self.forward(X[s: s + batch_size], train=False)
        return out


def weighted_mae(pred, target, weights=None) -> float:
    """``1/(2N) * sum_i w_i * sum_o |pred - target|``."""
    err = np.abs(np.asarray(pred) - np.asarray(target)).mean(axis=1)
    if weights is not None:
        err = err * np.asarray(weights)
    return float(err.mean())


def loss_and_grads(net: Network, X, targets, weights=None, train: bool = True):
    """Weighted MAE and its exact gradient with respect to every parameter.

    The subgradient of ``|r|`` at ``r = 0`` is taken as 0.
    """
    y, caches = net.forward(X, train=train, keep_cache=True)
    targets = np.asarray(targets, dtype=y.dtype)
    n = len(y)
    w = np.ones(n, dtype=y.dtype) if weights is None else np.asarray(weights, dtype=y.dtype)
    r = y - targets
    loss = float((np.abs(r).mean(axis=1) * w).mean())
    dy = np.sign(r) * w[:, None] / (2.0 * n)
    _, grads = net.backward(caches, dy)
    return loss, grads


def grad_params(net: Network, X, targets, weights=None, train: bool = True) -> dict:
    return loss_and_grads(net, X, targets, weights, train)[1]


def grad_input(net: Network, X, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode outputs and ``d(sum upstream * outputs)/d(voltage channel)``.

    The gradient is with respect to the encoded (scaled) voltage channel and
    is zero on padded segments.
    """
    y, caches = net.forward(X, train=False, keep_cache=True)
    dx, _ = net.backward(caches, np.asarray(upstream, dtype=y.dtype), param_grads=False)
    X = np.asarray(X)
    return y, dx[..., 0] * X[..., 2]
