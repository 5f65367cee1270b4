"""Linear transfer functions mapping programmed voltages to the voltages seen
by the qubit. Kernels are sampled at the 1 ns segment spacing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TransferKernel:
    """Discrete convolution kernel.

    ``taps[j]`` holds ``k(j - offset)``, i.e. ``offset`` is the index of the
    zero-lag tap.
    """

    kind: str
    taps: np.ndarray
    offset: int
    params: dict = field(default_factory=dict)

    @property
    def support(self) -> int:
        return len(self.taps)

    @property
    def half_support(self) -> int:
        return max(self.offset, len(self.taps) - 1 - self.offset)

    @property
    def dc_gain(self) -> float:
        return float(self.taps.sum())

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def identity_kernel(dc_gain: float = 1.0) -> TransferKernel:
    return TransferKernel("identity", np.array([float(dc_gain)]), 0, {"dc_gain": dc_gain})


def gaussian_kernel(sigma: float = 1.0, dc_gain: float = 1.0, width: float = 5.0) -> TransferKernel:
    """Symmetric Gaussian of standard deviation ``sigma`` ns, truncated at
    ``width * sigma`` and renormalized to ``dc_gain``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    half = int(math.ceil(width * sigma))
    tau = np.arange(-half, half + 1, dtype=float)
    taps = np.exp(-0.5 * (tau / sigma) ** 2)
    taps *= dc_gain / taps.sum()
    return TransferKernel("gaussian", taps, half, {"sigma_ns": sigma, "dc_gain": dc_gain})


def causal_kernel(
    rise_time: float = 1.0,
    osc_period: float = 3.5,
    osc_decay: float = 2.5,
    dc_gain: float = 1.0,
) -> TransferKernel:
    """Parametric stand-in for a measured cable response.

    Delayed exponential rise times a damped raised cosine; zero for negative
    lags and at lag 0 (one segment of delay), unit DC gain after normalization.
    """
    if min(rise_time, osc_period, osc_decay) <= 0:
        raise ValueError("kernel time constants must be positive")
    n = int(math.ceil(12.0 * max(rise_time, osc_decay))) + 1
    tau = np.arange(n, dtype=float)
    taps = (
        (1.0 - np.exp(-tau / rise_time))
        * np.exp(-tau / osc_decay)
        * (1.0 + np.cos(2.0 * np.pi * tau / osc_period))
    )
    taps *= dc_gain / taps.sum()
    params = {
        "rise_time_ns": rise_time,
        "osc_period_ns": osc_period,
        "osc_decay_ns": osc_decay,
        "dc_gain": dc_gain,
    }
    return TransferKernel("causal", taps, 0, params)


def kernel_from_dict(d: dict) -> TransferKernel:
    kind = d.get("kind")
    gain = float(d.get("dc_gain", 1.0))
    if kind == "identity":
        return identity_kernel(gain)
    if kind == "gaussian":
        return gaussian_kernel(float(d["sigma_ns"]), gain)
    if kind == "causal":
        return causal_kernel(
            float(d["rise_time_ns"]), float(d["osc_period_ns"]), float(d["osc_decay_ns"]), gain
        )
    raise ValueError(f"unknown transfer kernel kind: {kind!r}")


def convolve_trace(kernel: TransferKernel, eps, pre_pad: int = 0, post_pad: int = 0) -> np.ndarray:
    """``eps'_t = sum_tau k(t - tau) eps_tau`` for ``t`` in ``[-pre_pad, L + post_pad)``.

    Voltages outside the programmed pulse are zero. Works on the last axis, so
    a zero-padded batch ``(..., L)`` gives the same result row by row.
    """
    eps = np.asarray(eps, dtype=float)
    L = eps.shape[-1]
    n_out = pre_pad + L + post_pad
    out = np.zeros(eps.shape[:-1] + (n_out,))
    for j, tap in enumerate(kernel.taps):
        if tap == 0.0:
            continue
        # output index i reads eps[i + shift]
        shift = kernel.offset - j - pre_pad
        i0 = max(0, -shift)
        i1 = min(n_out, L - shift)
        if i1 > i0:
            out[..., i0:i1] += tap * eps[..., i0 + shift: i1 + shift]
    return out


def apply_transfer(kernel: TransferKernel, pulse, pre_pad: int = 1, post_pad: int = 1) -> np.ndarray:
    """Distorted voltage trace of ``pulse`` including ``pre_pad`` segments
    before and ``post_pad`` after the programmed window."""
    if pre_pad < 0 or post_pad < 0:
        raise ValueError("pads must be non-negative")
    return convolve_trace(kernel, pulse.epsilons, pre_pad, post_pad)
