"""Single-qubit rotations, entanglement fidelity, ZXZ Euler angles and the
global-Z gauge correction of an {X_pi/2, Y_pi/2} gate pair."""
from __future__ import annotations

import numpy as np

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


def _rot(pauli, angle):
    return np.cos(angle / 2) * I2 - 1j * np.sin(angle / 2) * pauli


def rx(angle: float) -> np.ndarray:
    return _rot(SX, angle)


def ry(angle: float) -> np.ndarray:
    return _rot(SY, angle)


def rz(angle: float) -> np.ndarray:
    return _rot(SZ, angle)


def wrap_angle(x):
    """Map angles to ``(-pi, pi]``."""
    x = np.asarray(x, dtype=float)
    out = -((-x + np.pi) % (2 * np.pi) - np.pi)
    return float(out) if out.ndim == 0 else out


def entanglement_fidelity(U: np.ndarray, V: np.ndarray) -> float:
    """``|Tr(U^dagger V)|^2 / d^2``."""
    d = U.shape[-1]
    f = abs(np.trace(U.conj().T @ V)) ** 2 / d**2
    return float(min(max(f, 0.0), 1.0))


def infidelity(U: np.ndarray, V: np.ndarray) -> float:
    return 1.0 - entanglement_fidelity(U, V)


def euler_zxz(U: np.ndarray, atol: float = 1e-9):
    """Angles ``(z1, x, z2)`` with ``U ~ Rz(z1) Rx(x) Rz(z2)`` up to global phase.

    ``x`` lies in ``[0, pi]``; the Z angles are wrapped to ``(-pi, pi]``. When
    ``x`` is (numerically) 0 or pi only one combination of the Z angles is
    defined, and it is put entirely into ``z1``.
    """
    U = np.asarray(U, dtype=complex)
    det = np.linalg.det(U)
    V = U / np.sqrt(det)
    c = abs(V[0, 0])
    s = abs(V[1, 0])
    x = 2.0 * np.arctan2(s, c)
    # V00 = cos(x/2) e^{-i(z1+z2)/2},  V10 = -i sin(x/2) e^{i(z1-z2)/2}
    if x < atol:
        return wrap_angle(-2.0 * np.angle(V[0, 0])), 0.0, 0.0
    if np.pi - x < atol:
        return wrap_angle(2.0 * np.angle(1j * V[1, 0])), float(np.pi), 0.0
    plus = -2.0 * np.angle(V[0, 0])
    minus = 2.0 * np.angle(1j * V[1, 0])
    z1 = 0.5 * (plus + minus)
    z2 = 0.5 * (plus - minus)
    return wrap_angle(z1), float(x), wrap_angle(z2)


# Euler angles (z1, z2) of the ideal gates: Rx(pi/2) and Ry(pi/2) = Rz(pi/2) Rx(pi/2) Rz(-pi/2)
IDEAL_Z_ANGLES = {"X": (0.0, 0.0), "Y": (np.pi / 2, -np.pi / 2)}
IDEAL_GATES = {"X": rx(np.pi / 2), "Y": ry(np.pi / 2)}


def solve_gauge_angle(x_gate: np.ndarray, y_gate: np.ndarray) -> float:
    """Least-squares global-Z angle ``theta`` for a realized gate pair.

    Writing each gate as ``Rz(z1_ideal - theta) Rx(.) Rz(z2_ideal + theta)``,
    every Z angle gives one estimate of ``theta``; the estimates are unwrapped
    around their circular mean and averaged.
    """
    estimates = []
    for label, gate in (("X", x_gate), ("Y", y_gate)):
        z1, _, z2 = euler_zxz(gate)
        i1, i2 = IDEAL_Z_ANGLES[label]
        estimates.append(i1 - z1)
        estimates.append(z2 - i2)
    est = np.asarray(estimates)
    ref = np.angle(np.exp(1j * est).sum())
    est = ref + wrap_angle(est - ref)
    return wrap_angle(est.mean())


def global_z_correct(x_gate: np.ndarray, y_gate: np.ndarray):
    """Remove the syndrome-invisible global Z rotation from a gate pair.

    Returns ``theta`` and the pair ``Rz(theta) G Rz(-theta)``.
    """
    theta = solve_gauge_angle(x_gate, y_gate)
    fwd, back = rz(theta), rz(-theta)
    return theta, (fwd @ x_gate @ back, fwd @ y_gate @ back)
