"""Noise models: quasi-static offsets and band-limited fast detuning noise."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exchange import MHZ

SEGMENT_NS = 1.0
SAMPLE_RATE_HZ = 1e9 / SEGMENT_NS


@dataclass(frozen=True)
class NoiseConfig:
    """Noise acting on the simulated device.

    ``sigma_eps`` is in mV, ``dbz_mean``/``sigma_dbz`` in rad/ns, ``S0`` in
    V^2/Hz. The fast-noise PSD is ``S0 / f**low_exponent`` between the first
    two band edges, flat at its corner value up to the last edge, zero
    elsewhere.
    """

    sigma_eps: float = 8.0e-3
    dbz_mean: float = 42.1 * MHZ
    sigma_dbz: float = 2.8 * MHZ
    S0: float = 10.24e-16
    low_exponent: float = 0.7
    band_edges: tuple = (5e4, 1e6, 1e10)
    n_samples: int = 60
    enabled: bool = True
    shots: int | None = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if min(self.sigma_eps, self.sigma_dbz, self.S0) < 0:
            raise ValueError("noise magnitudes must be non-negative")
        e = self.band_edges
        if len(e) != 3 or not (0 < e[0] < e[1] < e[2]):
            raise ValueError("band edges must be three strictly increasing positive frequencies")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be positive")

    def psd(self, f) -> np.ndarray:
        """One-sided PSD in V^2/Hz."""
        f = np.asarray(f, dtype=float)
        f_lo, f_knee, f_hi = self.band_edges
        out = np.zeros_like(f)
        low = (f >= f_lo) & (f <= f_knee)
        high = (f > f_knee) & (f <= f_hi)
        out[low] = self.S0 / f[low] ** self.low_exponent
        out[high] = self.S0 / f_knee**self.low_exponent
        return out

    def to_dict(self) -> dict:
        return {
            "enabled": self.enabled,
            "n_samples": self.n_samples,
            "sigma_eps_mV": self.sigma_eps,
            "dbz_MHz": self.dbz_mean / MHZ,
            "sigma_dbz_MHz": self.sigma_dbz / MHZ,
            "S0_V2_per_Hz": self.S0,
            "low_exponent": self.low_exponent,
            "band_edges_Hz": list(self.band_edges),
            "shots": self.shots,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        return cls(
            sigma_eps=float(d.get("sigma_eps_mV", 8.0e-3)),
            dbz_mean=float(d.get("dbz_MHz", 42.1)) * MHZ,
            sigma_dbz=float(d.get("sigma_dbz_MHz", 2.8)) * MHZ,
            S0=float(d.get("S0_V2_per_Hz", 10.24e-16)),
            low_exponent=float(d.get("low_exponent", 0.7)),
            band_edges=tuple(float(x) for x in d.get("band_edges_Hz", (5e4, 1e6, 1e10))),
            n_samples=int(d.get("n_samples", 60)),
            enabled=bool(d.get("enabled", True)),
            shots=d.get("shots"),
        )


def fast_noise_amplitudes(cfg: NoiseConfig, n_segments: int) -> np.ndarray:
    """Cosine amplitudes (mV) of the synthesized frequency bins ``k/T``,
    ``k = 1 .. n_segments // 2``, with ``T = n_segments`` ns."""
    n_bins = n_segments // 2
    df = SAMPLE_RATE_HZ / n_segments
    freqs = df * np.arange(1, n_bins + 1)
    # V^2 -> mV^2
    power = cfg.psd(freqs) * df * 1e6
    return np.sqrt(2.0 * power)


def sample_fast_noise_batch(cfg: NoiseConfig, n_segments: int, n_draws: int, rng) -> np.ndarray:
    """``n_draws`` independent fast-noise traces of ``n_segments`` samples (mV).

    Each frequency bin carries a fixed amplitude and an independent uniform
    phase; bins below ``1/T`` are omitted (covered by the quasi-static term).
    """
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    amps = fast_noise_amplitudes(cfg, n_segments)
    n_bins = len(amps)
    if n_bins == 0 or cfg.S0 == 0.0:
        return np.zeros((n_draws, n_segments))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n_draws, n_bins))
    spec = np.zeros((n_draws, n_segments // 2 + 1), dtype=complex)
    spec[:, 1:] = 0.5 * n_segments * amps * np.exp(1j * phases)
    if n_segments % 2 == 0:
        # Nyquist bin is real: a*cos(pi*t + phi) = a*cos(phi)*(-1)^t
        spec[:, -1] = n_segments * amps[-1] * np.cos(phases[:, -1])
    return np.fft.irfft(spec, n=n_segments, axis=-1)


def sample_fast_noise(cfg: NoiseConfig, n_segments: int, rng) -> np.ndarray:
    """One fast-noise realization (mV)."""
    return sample_fast_noise_batch(cfg, n_segments, 1, rng)[0]
