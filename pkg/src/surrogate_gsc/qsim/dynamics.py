"""Piecewise-constant propagation of the ST0 Hamiltonian and Monte Carlo
measurement statistics.

The Hamiltonian of segment ``t`` is ``J(eps'_t)/2 sigma_Z + dBz/2 sigma_X``
with ``eps'`` the distorted detuning. Each segment lasts 1 ns and is
exponentiated in closed form; unitaries are carried as SU(2) pairs ``(a, b)``
standing for ``[[a, -conj(b)], [b, conj(a)]]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exchange import ExchangeModel
from .noise import NoiseConfig, sample_fast_noise_batch
from .transfer import TransferKernel, convolve_trace

DT = 1.0


class NumericError(FloatingPointError):
    """A non-finite value appeared during simulation."""


@dataclass(frozen=True)
class ControlPulse:
    """Detuning voltages (mV) of consecutive 1 ns segments plus the magnetic
    field gradient ``dbz`` (rad/ns) assumed for the pulse."""

    epsilons: np.ndarray
    dbz: float

    def __post_init__(self):
        eps = np.array(self.epsilons, dtype=float).reshape(-1)
        if eps.size < 1:
            raise ValueError("a pulse needs at least one segment")
        if not np.all(np.isfinite(eps)):
            raise ValueError("pulse voltages must be finite")
        if not np.isfinite(self.dbz):
            raise ValueError("dbz must be finite")
        eps.setflags(write=False)
        object.__setattr__(self, "epsilons", eps)
        object.__setattr__(self, "dbz", float(self.dbz))

    @property
    def length(self) -> int:
        return self.epsilons.size

    @property
    def duration(self) -> float:
        return self.length * DT

    def mask(self, L_max: int | None = None) -> np.ndarray:
        L_max = self.length if L_max is None else L_max
        m = np.zeros(L_max)
        m[: self.length] = 1.0
        return m

    def padded(self, L_max: int) -> np.ndarray:
        if self.length > L_max:
            raise ValueError(f"pulse of length {self.length} exceeds L_max={L_max}")
        out = np.zeros(L_max)
        out[: self.length] = self.epsilons
        return out

    def __add__(self, other: "ControlPulse") -> "ControlPulse":
        return ControlPulse(np.concatenate([self.epsilons, other.epsilons]), self.dbz)

    def __eq__(self, other):
        if not isinstance(other, ControlPulse):
            return NotImplemented
        return self.dbz == other.dbz and np.array_equal(self.epsilons, other.epsilons)

    __hash__ = None


@dataclass(frozen=True)
class MeasurementStats:
    """Mean probability of finding ``|0>`` and its Monte Carlo standard error."""

    p_mean: float
    p_stderr: float

    def __post_init__(self):
        if not (0.0 <= self.p_mean <= 1.0):
            raise ValueError(f"p_mean out of range: {self.p_mean}")
        if not self.p_stderr >= 0.0:
            raise ValueError(f"p_stderr must be non-negative: {self.p_stderr}")


@dataclass(frozen=True)
class NoiseRealization:
    """One Monte Carlo noise draw. ``dbz=None`` keeps the pulse's own value."""

    eps_offset: float = 0.0
    dbz: float | None = None
    fast: np.ndarray | None = field(default=None)


def segment_su2(J, dbz, dt: float = DT):
    """Closed-form ``exp(-i (J/2 sZ + dbz/2 sX) dt)`` as SU(2) pairs."""
    J = np.asarray(J, dtype=float)
    dbz = np.asarray(dbz, dtype=float)
    hz = 0.5 * J * dt
    hx = 0.5 * dbz * dt
    theta = np.hypot(hz, hx)
    c = np.cos(theta)
    # sin(theta)/theta, finite at theta = 0
    sinc = np.sinc(theta / np.pi)
    a = c - 1j * sinc * hz
    b = -1j * sinc * hx
    return a, b


def su2_multiply(a1, b1, a2, b2):
    """Pair product for ``U1 @ U2``."""
    return a1 * a2 - np.conj(b1) * b2, b1 * a2 + np.conj(a1) * b2


def su2_to_matrix(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    U = np.empty(a.shape + (2, 2), dtype=complex)
    U[..., 0, 0] = a
    U[..., 0, 1] = -np.conj(b)
    U[..., 1, 0] = b
    U[..., 1, 1] = np.conj(a)
    return U


def evolve_exchange(J, dbz, mask=None):
    """Time-ordered product over the last axis of ``J`` (rad/ns).

    ``dbz`` broadcasts against ``J[..., 0]``. Segments where ``mask`` is 0 are
    skipped. Returns SU(2) pairs with the leading shape of ``J``.
    """
    J = np.asarray(J, dtype=float)
    lead = J.shape[:-1]
    dbz = np.broadcast_to(np.asarray(dbz, dtype=float), lead)
    a = np.ones(lead, dtype=complex)
    b = np.zeros(lead, dtype=complex)
    for t in range(J.shape[-1]):
        Jt = J[..., t]
        if not np.all(np.isfinite(Jt)):
            raise NumericError(f"non-finite exchange rate at segment {t}")
        sa, sb = segment_su2(Jt, dbz)
        if mask is not None:
            m = np.asarray(mask)[..., t].astype(bool)
            sa = np.where(m, sa, 1.0)
            sb = np.where(m, sb, 0.0)
        a, b = su2_multiply(sa, sb, a, b)
    return a, b


def distorted_voltages(pulse: ControlPulse, kernel: TransferKernel) -> np.ndarray:
    """Voltages seen by the qubit during the programmed window ``[0, L)``."""
    return convolve_trace(kernel, pulse.epsilons)


def propagate(
    pulse: ControlPulse,
    model: ExchangeModel,
    kernel: TransferKernel,
    noise: NoiseRealization | None = None,
) -> np.ndarray:
    """Unitary (2x2) realized by ``pulse`` under one noise realization."""
    noise = noise or NoiseRealization()
    eps = distorted_voltages(pulse, kernel) + noise.eps_offset
    if noise.fast is not None:
        eps = eps + np.asarray(noise.fast, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        J = model.rate(eps)
    dbz = pulse.dbz if noise.dbz is None else noise.dbz
    a, b = evolve_exchange(J, dbz)
    return su2_to_matrix(a, b)


def _draw_noise(noise: NoiseConfig, length: int, rng):
    n = noise.n_samples
    dbz = rng.normal(noise.dbz_mean, noise.sigma_dbz, size=n)
    offset = rng.normal(0.0, noise.sigma_eps, size=n)
    fast = sample_fast_noise_batch(noise, length, n, rng)
    return dbz, offset, fast


def _stats(p: np.ndarray):
    """Mean and ``sqrt(sum (p - mean)^2) / N`` along the last axis."""
    n = p.shape[-1]
    mean = p.mean(axis=-1)
    stderr = np.sqrt(((p - mean[..., None]) ** 2).sum(axis=-1)) / n
    return np.clip(mean, 0.0, 1.0), stderr


def measure_batch(pulses: Sequence[ControlPulse], cfg, rngs, chunk: int = 512):
    """Vectorized :func:`measure` over many pulses.

    ``rngs`` supplies one generator per pulse; each pulse consumes its own
    generator in a fixed order, so results do not depend on chunking.
    Returns ``(p_mean, p_stderr)`` arrays.
    """
    pulses = list(pulses)
    rngs = list(rngs)
    if len(rngs) != len(pulses):
        raise ValueError("need one rng per pulse")
    noise = cfg.noise
    n = noise.n_samples if noise.enabled else 1
    p_mean = np.empty(len(pulses))
    p_err = np.empty(len(pulses))
    for start in range(0, len(pulses), chunk):
        block = pulses[start: start + chunk]
        L_max = max(p.length for p in block)
        eps = np.zeros((len(block), n, L_max))
        dbz = np.empty((len(block), n))
        mask = np.zeros((len(block), 1, L_max))
        for i, (pulse, rng) in enumerate(zip(block, rngs[start: start + chunk])):
            L = pulse.length
            base = distorted_voltages(pulse, cfg.kernel)
            mask[i, 0, :L] = 1.0
            if noise.enabled:
                d, off, fast = _draw_noise(noise, L, rng)
                eps[i, :, :L] = base + off[:, None] + fast
                dbz[i] = d
            else:
                eps[i, :, :L] = base
                dbz[i] = noise.dbz_mean
        with np.errstate(over="ignore", invalid="ignore"):
            J = cfg.exchange.rate(eps)
        a, _ = evolve_exchange(J, dbz, np.broadcast_to(mask, J.shape))
        p = np.abs(a) ** 2
        if noise.shots is not None:
            rng0 = rngs[start]
            p = rng0.binomial(noise.shots, np.clip(p, 0.0, 1.0)) / noise.shots
        m, e = _stats(p)
        p_mean[start: start + len(block)] = m
        p_err[start: start + len(block)] = e
    return p_mean, p_err


def measure(pulse: ControlPulse, cfg, rng) -> MeasurementStats:
    """Monte Carlo estimate of the return probability to ``|0>``.

    Each of the ``N`` samples draws its own quasi-static detuning offset,
    its own ``dBz`` and its own fast-noise trace; with noise disabled a single
    noiseless evolution is used and the standard error is 0.
    """
    m, e = measure_batch([pulse], cfg, [rng])
    return MeasurementStats(float(m[0]), float(e[0]))
