"""Exchange interaction models J(eps) for the singlet-triplet qubit.

All rates are returned as angular frequencies in rad/ns. Voltages are in mV.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi
#: 1 MHz (ordinary frequency) expressed as angular frequency in rad/ns
MHZ = TWO_PI * 1e-3
#: 1 GHz (ordinary frequency) expressed as angular frequency in rad/ns
GHZ = TWO_PI


def _check_finite(eps):
    eps = np.asarray(eps, dtype=float)
    if not np.all(np.isfinite(eps)):
        raise ValueError("detuning voltage must be finite")
    return eps


@dataclass(frozen=True)
class GeneralExchange:
    """Purely exponential exchange ``J0 * exp(eps / eps0)``.

    ``J0`` is stored in rad/ns, ``eps0`` in mV.
    """

    J0: float
    eps0: float

    kind = "general"

    def __post_init__(self):
        if not self.eps0 > 0:
            raise ValueError("eps0 must be positive")
        if self.J0 < 0:
            raise ValueError("J0 must be non-negative")

    def rate(self, eps):
        eps = _check_finite(eps)
        return self.J0 * np.exp(eps / self.eps0)

    def voltage_for_rate(self, J):
        """Inverse of :meth:`rate`."""
        return self.eps0 * np.log(np.asarray(J, dtype=float) / self.J0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "J0_MHz": self.J0 / MHZ, "eps0_mV": self.eps0}


@dataclass(frozen=True)
class SpecificExchange:
    """Measured exchange curve: exponential at low detuning crossing over to a
    linear dependence ``b + m*eps`` above ``eps_s``.

    Parameters keep the fit units (GHz, mV, GHz/mV); :meth:`rate` converts the
    result to rad/ns.
    """

    J0: float
    eps0: float
    eps_s: float
    w: float
    b: float
    m: float

    kind = "specific"

    def __post_init__(self):
        if not self.eps0 > 0:
            raise ValueError("eps0 must be positive")
        if not self.w > 0:
            raise ValueError("w must be positive")

    def rate(self, eps):
        eps = _check_finite(eps)
        expo = self.J0 * np.exp(eps / self.eps0)
        switch = 0.5 * (1.0 + np.tanh((eps - self.eps_s) / self.w))
        return GHZ * (expo - switch * (expo - (self.b + self.m * eps)))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "J0_GHz": self.J0,
            "eps0_mV": self.eps0,
            "eps_s_mV": self.eps_s,
            "w_mV": self.w,
            "b_GHz": self.b,
            "m_GHz_per_mV": self.m,
        }


ExchangeModel = GeneralExchange | SpecificExchange


def exchange_from_dict(d: dict) -> ExchangeModel:
    kind = d.get("kind")
    if kind == "general":
        return GeneralExchange(J0=float(d["J0_MHz"]) * MHZ, eps0=float(d["eps0_mV"]))
    if kind == "specific":
        return SpecificExchange(
            J0=float(d["J0_GHz"]),
            eps0=float(d["eps0_mV"]),
            eps_s=float(d["eps_s_mV"]),
            w=float(d["w_mV"]),
            b=float(d["b_GHz"]),
            m=float(d["m_GHz_per_mV"]),
        )
    raise ValueError(f"unknown exchange model kind: {kind!r}")


def exchange_rate(model: ExchangeModel, eps):
    """J(eps) in rad/ns for either exchange variant."""
    return model.rate(eps)
