"""Average gate fidelity on the computational subspace.

The metric is the two-qubit average gate fidelity

    F = [Tr(M^dag M) + |Tr(T^dag M)|^2] / 20

for the (possibly trace-decreasing) 4x4 block ``M`` and target unitary ``T``.
Population lost to ``|r>`` or to decay counts as leakage; ``M`` is never
renormalised.  The corrected fidelity ``F*`` maximises ``F`` over local Z
rotations ``diag(1, e^{ib}, e^{ia}, e^{i(a+b)})`` and a global phase applied
to the target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .core_dynamics import COMPUTATIONAL

D = 4
NORM = D * (D + 1)

CZ = np.diag([1.0, 1.0, 1.0, -1.0]).astype(complex)


def phase_gate(theta: float) -> np.ndarray:
    """Controlled-phase target ``diag(1, 1, 1, e^{i theta})``."""
    return np.diag([1.0, 1.0, 1.0, np.exp(1j * theta)])


def local_z(alpha: float, beta: float) -> np.ndarray:
    """Diagonal local-Z gauge ``diag(1, e^{i beta}, e^{i alpha}, e^{i(alpha+beta)})``.

    ``alpha`` acts on the control qubit, ``beta`` on the target.
    """
    return np.exp(1j * np.array([0.0, beta, alpha, alpha + beta]))


def wrap(angle):
    """Wrap to (-pi, pi]."""
    out = -((-np.asarray(angle) + np.pi) % (2 * np.pi) - np.pi)
    return float(out) if np.ndim(out) == 0 else out


def computational_block(U: np.ndarray) -> np.ndarray:
    """Restriction of a 9x9 propagator to ``|00>, |01>, |10>, |11>``."""
    return np.asarray(U)[np.ix_(COMPUTATIONAL, COMPUTATIONAL)]


def controlled_phase(M: np.ndarray) -> float:
    """Gauge-invariant phase ``arg m00 + arg m11 - arg m01 - arg m10`` of the diagonal."""
    d = np.diag(M)
    return wrap(np.angle(d[0]) + np.angle(d[3]) - np.angle(d[1]) - np.angle(d[2]))


def average_gate_fidelity(M: np.ndarray, target: np.ndarray) -> float:
    M = np.asarray(M)
    target = np.asarray(target)
    return float((np.real(np.vdot(M, M)) + abs(np.trace(target.conj().T @ M)) ** 2) / NORM)


def _overlap_terms(M: np.ndarray, target: np.ndarray) -> np.ndarray:
    # Tr((g T)^dag M) = sum_k conj(g_k) (M T^dag)_kk
    return np.einsum("ij,ij->i", M, target.conj())


def _best_alpha(z: np.ndarray) -> float:
    def neg(a):
        e = np.exp(-1j * a)
        return -(np.abs(z[0] + z[2] * e) + np.abs(z[1] + z[3] * e))

    grid = np.linspace(-np.pi, np.pi, 64, endpoint=False)
    vals = [neg(a) for a in grid]
    a0 = grid[int(np.argmin(vals))]
    h = 2 * np.pi / 64
    res = minimize_scalar(neg, bounds=(a0 - h, a0 + h), method="bounded", options={"xatol": 1e-13})
    return float(res.x) if res.fun <= min(vals) else float(a0)


@dataclass
class LocalPhaseResult:
    fidelity: float
    alpha: float
    beta: float
    global_phase: float
    overlap: complex = field(repr=False)


def _reduced_local_phases(M: np.ndarray, target: np.ndarray) -> LocalPhaseResult:
    z = _overlap_terms(M, target)
    alpha = _best_alpha(z)
    e = np.exp(-1j * alpha)
    A = z[0] + z[2] * e
    B = z[1] + z[3] * e
    beta = float(np.angle(B) - np.angle(A)) if abs(A) > 0 and abs(B) > 0 else 0.0
    g = local_z(alpha, beta)
    S = complex(np.sum(g.conj() * z))
    F = (np.real(np.vdot(M, M)) + abs(S) ** 2) / NORM
    return LocalPhaseResult(float(F), wrap(alpha), wrap(beta), float(np.angle(S)), S)


def _numeric_local_phases(M: np.ndarray, target: np.ndarray) -> LocalPhaseResult:
    """16x16 grid over (alpha, beta) followed by BFGS refinement."""
    base = np.real(np.vdot(M, M))
    z = _overlap_terms(M, target)

    def neg(x):
        return -abs(np.sum(local_z(*x).conj() * z)) ** 2

    grid = np.linspace(-np.pi, np.pi, 16, endpoint=False)
    best = min(((a, b) for a in grid for b in grid), key=neg)
    res = minimize(neg, np.array(best), method="BFGS", options={"gtol": 1e-13})
    alpha, beta = res.x
    S = complex(np.sum(local_z(alpha, beta).conj() * z))
    return LocalPhaseResult(float((base + abs(S) ** 2) / NORM), wrap(alpha), wrap(beta), float(np.angle(S)), S)


def optimize_local_phases(M: np.ndarray, target: np.ndarray = CZ, method: str = "reduced") -> LocalPhaseResult:
    """Maximise the average gate fidelity over local Z gauges and global phase.

    The overlap only depends on the diagonal of ``M T^dag``, so the target
    phase ``beta`` follows in closed form from phase alignment once the
    control phase ``alpha`` is fixed, leaving a one-dimensional maximisation.
    ``method="numeric"`` runs a generic two-dimensional search instead.
    """
    M = np.asarray(M, dtype=complex)
    target = np.asarray(target, dtype=complex)
    if method == "reduced":
        return _reduced_local_phases(M, target)
    if method == "numeric":
        return _numeric_local_phases(M, target)
    raise ValueError(f"unknown method {method!r}")


def corrected_fidelity(M: np.ndarray, target: np.ndarray = CZ) -> float:
    return optimize_local_phases(M, target).fidelity


def fidelity_gradient_matrix(M: np.ndarray, target: np.ndarray = CZ) -> tuple[float, np.ndarray]:
    """``F*`` and the matrix ``G`` with ``dF* = Re Tr(G^dag dM)``.

    The gauge is held at its optimum (envelope theorem).
    """
    r = optimize_local_phases(M, target)
    T = local_z(r.alpha, r.beta)[:, None] * np.asarray(target)
    G = (2.0 / NORM) * (M + r.overlap * T)
    return r.fidelity, G


def decay_error(integrated_population: float, tau: float) -> float:
    """Scattering error ``P_r / tau``."""
    if not tau > 0:
        raise ValueError(f"lifetime tau must be positive, got {tau}")
    return integrated_population / tau


def _fmt(x: float) -> str:
    return f"{x:.15e}"


@dataclass
class FidelityReport:
    """Fidelity summary for one simulated gate."""

    raw_fidelity: float
    fidelity: float
    alpha: float
    beta: float
    global_phase: float
    leakage: list[float]
    decay_loss: float
    integrated_population: float | None = None

    @property
    def infidelity(self) -> float:
        return 1.0 - self.fidelity

    @classmethod
    def from_block(cls, M: np.ndarray, target: np.ndarray = CZ, integrated_population: float | None = None) -> "FidelityReport":
        r = optimize_local_phases(M, target)
        col = np.sum(np.abs(M) ** 2, axis=0)
        return cls(
            raw_fidelity=average_gate_fidelity(M, target),
            fidelity=r.fidelity,
            alpha=r.alpha,
            beta=r.beta,
            global_phase=r.global_phase,
            leakage=[float(1.0 - c) for c in col],
            decay_loss=float(1.0 - np.real(np.vdot(M, M)) / D),
            integrated_population=integrated_population,
        )

    def to_json(self) -> str:
        leak = ", ".join(_fmt(x) for x in self.leakage)
        pop = "null" if self.integrated_population is None else _fmt(self.integrated_population)
        return (
            "{\n"
            f'  "raw_fidelity": {_fmt(self.raw_fidelity)},\n'
            f'  "fidelity": {_fmt(self.fidelity)},\n'
            f'  "infidelity": {_fmt(self.infidelity)},\n'
            f'  "alpha": {_fmt(self.alpha)},\n'
            f'  "beta": {_fmt(self.beta)},\n'
            f'  "global_phase": {_fmt(self.global_phase)},\n'
            f'  "leakage": [{leak}],\n'
            f'  "decay_loss": {_fmt(self.decay_loss)},\n'
            f'  "integrated_population": {pop}\n'
            "}"
        )
