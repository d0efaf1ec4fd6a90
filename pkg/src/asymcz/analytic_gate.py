"""Closed-form designs for the asymmetric pi-2pi-pi controlled-phase gate.

Control pi pulse, detuned target 2pi loop, control pi pulse.  With the
target detuned by ``Delta = V/2`` the loop closes whether or not the control
sits in ``|r>``, so the only error left is Rydberg decay.  All gate phases
follow the convention of :mod:`asymcz.core_dynamics` (default ``frame_sign=+1``):
a target loop with ``n`` turns multiplies ``|0>`` by ``exp(-i phi)`` with
``phi = n pi + Delta t / 2``, and the realised gate is locally equivalent to
``diag(1, 1, 1, e^{i theta})`` with ``theta = phi - phi_V``.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core_dynamics import ControlImpulse, PhysicsParams, PulseSegment, PulseSequence, propagate_sequence
from .fidelity import computational_block, controlled_phase, optimize_local_phases, phase_gate, wrap

SQRT3 = math.sqrt(3.0)
DDP_CONSTANT = 1.0 + math.pi / 2.0
# comparison constants quoted for other protocols, in units of the DDP bound
MTO_RATIO = 1.33
# modified time-optimal gate duration (units of 1/Omega), located by its
# crossover with the asymmetric gate duration at p = 2.9
MTO_DURATION_OMEGA = SQRT3 * math.pi + 2.0 * math.pi / 2.9


class ReturnConditionWarning(UserWarning):
    """Target pulse does not close an integer number of loops."""


@dataclass(frozen=True)
class GateDesign:
    """Parameters of one asymmetric gate; frequencies share the units of ``V``."""

    theta: float
    V: float
    p: float
    omega: float
    delta: float
    t_target: float
    n0: int = 1
    nV: int = 1
    branch: str | None = None

    @property
    def omega_control(self) -> float:
        return self.p * self.omega

    @property
    def t_control(self) -> float:
        """Duration of one control pi pulse (zero for ``p = inf``)."""
        return 0.0 if math.isinf(self.p) else math.pi / self.omega_control

    @property
    def t_gate(self) -> float:
        return self.t_target + 2.0 * self.t_control

    def sequence(self, xi: float = 0.0) -> PulseSequence:
        if math.isinf(self.p):
            ctrl = ControlImpulse(math.pi)
        else:
            ctrl = PulseSegment(self.t_control, omega_control=self.omega_control)
        target = PulseSegment(self.t_target, omega_target=self.omega, xi=xi, delta=self.delta)
        return PulseSequence([ctrl, target, ctrl])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["p"] = "inf" if math.isinf(self.p) else self.p
        d["t_gate"] = self.t_gate
        return d

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps({"units": {"V": 1.0}, "design": self.rescaled(1.0 / self.V).to_dict()}, indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def rescaled(self, factor: float) -> "GateDesign":
        """Multiply all frequencies by ``factor`` and divide times by it."""
        return GateDesign(
            self.theta,
            self.V * factor,
            self.p,
            self.omega * factor,
            self.delta * factor,
            self.t_target / factor,
            self.n0,
            self.nV,
            self.branch,
        )


def _check_p(p: float) -> None:
    if not p >= 1:
        raise ValueError(f"control/target Rabi ratio p must be >= 1, got {p}")


def _check_positive(name: str, x: float) -> None:
    if not (x > 0 and math.isfinite(x)):
        raise ValueError(f"{name} must be positive and finite, got {x}")


def design_cz(V: float = 1.0, p: float = 1.0) -> tuple[GateDesign, PulseSequence]:
    """CZ design: ``Omega = sqrt(3) V / 2``, ``Delta = V/2``, target time ``2 pi / V``."""
    _check_positive("V", V)
    _check_p(p)
    d = GateDesign(math.pi, V, p, SQRT3 * V / 2.0, V / 2.0, 2.0 * math.pi / V)
    return d, d.sequence()


def design_phase_gate(theta: float, V: float = 1.0, p: float = math.inf, loops: int = 1) -> GateDesign:
    """Controlled-phase gate ``diag(1, 1, 1, e^{i loops*theta})`` at ``Delta = V/2``.

    ``Omega = V sqrt((pi/theta)^2 - 1/4)`` and the target pulse lasts
    ``2 loops theta / V``.  Only integer loop counts close both loops.
    """
    if not 0 < theta <= math.pi:
        raise ValueError(f"theta must lie in (0, pi], got {theta}")
    _check_positive("V", V)
    _check_p(p)
    if isinstance(loops, bool) or int(loops) != loops or loops < 1:
        raise ValueError(f"loops must be a positive integer, got {loops}")
    loops = int(loops)
    omega = V * math.sqrt((math.pi / theta) ** 2 - 0.25)
    return GateDesign(loops * theta, V, p, omega, V / 2.0, 2.0 * loops * theta / V, loops, loops)


@dataclass(frozen=True)
class BranchSolution:
    deltas: tuple[float, ...]
    discriminant: float
    status: str

    def __bool__(self) -> bool:
        return bool(self.deltas)


def _check_loops(n0: int, nV: int) -> None:
    for name, n in (("n0", n0), ("nV", nV)):
        if isinstance(n, bool) or int(n) != n or n < 1:
            raise ValueError(f"{name} must be a positive integer, got {n}")
    if n0 == nV:
        raise ValueError("loop counts must differ (n0 != nV); use design_phase_gate for equal loops")


def detuning_branches(n0: int, nV: int, omega: float, V: float = 1.0) -> BranchSolution:
    """Detunings closing ``n0`` loops without and ``nV`` loops with the interaction.

    Returns ``(Delta_plus, Delta_minus)``, or an empty solution when the
    discriminant ``n0^2 nV^2 V^2 - (n0^2 - nV^2)^2 Omega^2`` is negative.
    """
    _check_loops(n0, nV)
    _check_positive("V", V)
    a = n0 * n0 - nV * nV
    disc = (n0 * nV * V) ** 2 - (a * omega) ** 2
    if disc < 0:
        return BranchSolution((), disc, f"no real detuning: discriminant {disc:.3e} < 0 (Omega too large for n0={n0}, nV={nV})")
    root = math.sqrt(disc)
    return BranchSolution(((n0 * n0 * V + root) / a, (n0 * n0 * V - root) / a), disc, "ok")


def loop_target_time(n0: int, omega: float, delta: float) -> float:
    return 2.0 * math.pi * n0 / math.hypot(omega, delta)


@dataclass(frozen=True)
class BranchPhases:
    phi: float
    phi_V: float
    theta: float


def branch_phases(n0: int, nV: int, delta: float, omega: float, V: float = 1.0) -> BranchPhases:
    """Target phases of a multi-loop branch design and its gate phase ``phi - phi_V``."""
    _check_loops(n0, nV)
    w = math.hypot(omega, delta)
    phi = n0 * math.pi + n0 * math.pi * delta / w
    phi_V = nV * math.pi + n0 * math.pi * (delta - V) / w
    return BranchPhases(phi, phi_V, phi - phi_V)


def design_branch(n0: int, nV: int, omega: float, branch: str = "+", V: float = 1.0, p: float = math.inf) -> GateDesign:
    """Controlled-phase design on the ``Delta_+`` or ``Delta_-`` branch."""
    _check_p(p)
    sol = detuning_branches(n0, nV, omega, V)
    if not sol:
        raise ValueError(sol.status)
    if branch not in ("+", "-"):
        raise ValueError(f"branch must be '+' or '-', got {branch!r}")
    delta = sol.deltas[0 if branch == "+" else 1]
    ph = branch_phases(n0, nV, delta, omega, V)
    return GateDesign(wrap(ph.theta), V, p, omega, delta, loop_target_time(n0, omega, delta), n0, nV, branch)


@dataclass(frozen=True)
class PhasePair:
    """Target-pulse phases with the control in ground (``phi``) and in ``|r>`` (``phi_V``)."""

    phi: float
    phi_V: float
    n0: int
    nV: int
    on_manifold: bool

    @property
    def theta(self) -> float:
        return self.phi - self.phi_V

    def mod_2pi(self) -> tuple[float, float]:
        return self.phi % (2 * math.pi), self.phi_V % (2 * math.pi)


def target_pulse_phases(omega: float, delta: float, V: float, t: float, tol: float = 1e-9) -> PhasePair:
    """Phases ``phi = n0 pi + Delta t/2`` and ``phi_V = nV pi + (Delta - V) t/2``.

    ``n0`` and ``nV`` are the loop counts completed by the pulse.  Off the
    return manifold (non-integer loops) a :class:`ReturnConditionWarning` is
    issued and the nearest integers are used.
    """
    loops0 = t * math.hypot(omega, delta) / (2 * math.pi)
    loopsV = t * math.hypot(omega, delta - V) / (2 * math.pi)
    n0, nV = round(loops0), round(loopsV)
    ok = abs(loops0 - n0) <= tol and abs(loopsV - nV) <= tol and n0 >= 1 and nV >= 1
    if not ok:
        warnings.warn(
            f"target pulse off the return manifold: {loops0:.6f} and {loopsV:.6f} loops",
            ReturnConditionWarning,
            stacklevel=2,
        )
    return PhasePair(n0 * math.pi + delta * t / 2, nV * math.pi + (delta - V) * t / 2, n0, nV, ok)


def scattering_error(p: float, V: float, tau: float) -> float:
    """Leading-order decay error ``(11/8 + 1/(sqrt(3) p)) pi / (V tau)``."""
    _check_p(p)
    _check_positive("V*tau", V * tau)
    return (11.0 / 8.0 + 1.0 / (SQRT3 * p)) * math.pi / (V * tau)


def gate_duration(p: float, V: float = 1.0) -> float:
    """Total duration ``(1 + 2/(sqrt(3) p)) 2 pi / V`` of the CZ design."""
    _check_p(p)
    _check_positive("V", V)
    return (1.0 + 2.0 / (SQRT3 * p)) * 2.0 * math.pi / V


def ddp_bound(V: float, tau: float) -> float:
    """Lifetime-limited error bound ``(1 + pi/2) / (V tau)``."""
    _check_positive("V*tau", V * tau)
    return DDP_CONSTANT / (V * tau)


def mto_crossover_p(duration_omega: float = MTO_DURATION_OMEGA) -> float:
    """Smallest ``p`` whose gate is no longer than ``duration_omega / Omega``."""
    excess = duration_omega - SQRT3 * math.pi
    if excess <= 0:
        return math.inf
    return 2.0 * math.pi / excess


@dataclass(frozen=True)
class ErrorBudget:
    epsilon: float
    epsilon_ddp: float
    t_gate: float

    @property
    def ratio(self) -> float:
        return self.epsilon / self.epsilon_ddp


def error_budget(p: float, V: float, tau: float) -> ErrorBudget:
    return ErrorBudget(scattering_error(p, V, tau), ddp_bound(V, tau), gate_duration(p, V))


@dataclass(frozen=True)
class LegacyBaseline:
    omega_opt: float
    epsilon: float
    epsilon_ddp: float


def legacy_baselines(V: float, tau: float) -> LegacyBaseline:
    """Optimum of the resonant pi-2pi-pi gate and the DDP bound.

    ``Omega_opt = (7 pi)^(1/3) (V^2 / tau)^(1/3)`` and
    ``eps = 3 (7 pi)^(2/3) / 8 (V tau)^(-2/3)``.
    """
    _check_positive("V", V)
    _check_positive("tau", tau)
    k = 7.0 * math.pi
    return LegacyBaseline(
        omega_opt=k ** (1 / 3) * (V * V / tau) ** (1 / 3),
        epsilon=3.0 * k ** (2 / 3) / 8.0 * (V * tau) ** (-2 / 3),
        epsilon_ddp=ddp_bound(V, tau),
    )


def legacy_sequence(omega: float) -> PulseSequence:
    """Resonant pi (control), 2pi (target), pi (control), all at Rabi rate ``omega``."""
    _check_positive("omega", omega)
    ctrl = PulseSegment(math.pi / omega, omega_control=omega)
    return PulseSequence([ctrl, PulseSegment(2 * math.pi / omega, omega_target=omega), ctrl])


@dataclass(frozen=True)
class CanonicalCorrection:
    alpha: float
    beta: float
    global_phase: float
    residual: float


def canonical_correction(diagonal, theta: float = math.pi) -> CanonicalCorrection:
    """Local Z angles and global phase mapping a diagonal gate onto ``diag(1,1,1,e^{i theta})``.

    ``alpha`` (control) and ``beta`` (target) are the phases to remove; the
    residual is the leftover non-local phase ``phi00 + phi11 - phi01 - phi10 - theta``.
    """
    a = np.angle(np.asarray(diagonal, dtype=complex))
    g = float(a[0])
    alpha = wrap(a[2] - a[0])
    beta = wrap(a[1] - a[0])
    residual = wrap(a[0] + a[3] - a[1] - a[2] - theta)
    return CanonicalCorrection(alpha, beta, wrap(g), residual)


def spacing_to_interaction_error(alpha_exponent: int, dr_over_r: float) -> float:
    """Fractional interaction error ``-alpha dr/r`` for ``V ~ r^-alpha``."""
    if alpha_exponent not in (3, 6):
        raise ValueError(f"interaction exponent must be 3 or 6, got {alpha_exponent}")
    return -alpha_exponent * dr_over_r


def simulate_design(design: GateDesign, gamma: float = 0.0, frame_sign: int = 1) -> np.ndarray:
    """4x4 computational block of the simulated design."""
    params = PhysicsParams(design.V, gamma, frame_sign)
    return computational_block(propagate_sequence(design.sequence(), params))


def simulated_error(seq: PulseSequence, V: float, tau: float, theta: float = math.pi) -> float:
    """Corrected infidelity of ``seq`` with decay rate ``1/tau``."""
    M = computational_block(propagate_sequence(seq, PhysicsParams(V, 1.0 / tau)))
    return 1.0 - optimize_local_phases(M, phase_gate(theta)).fidelity


def simulated_phase(design: GateDesign) -> float:
    return controlled_phase(simulate_design(design))


def legacy_gate_error(V: float, tau: float, omega: float | None = None, fringe_samples: int = 16) -> float:
    """Simulated error of the resonant pi-2pi-pi gate.

    Error is the basis-averaged population not returned,
    ``1 - mean_k |<k|U|k>|^2``, which holds Rydberg decay and blockade
    leakage.  The leakage oscillates as ``sin^2(pi V / Omega)``; it is
    averaged over one fringe period by sampling ``V`` uniformly across
    ``[V - Omega/2, V + Omega/2]``.  ``omega`` defaults to ``Omega_opt``.
    """
    if omega is None:
        omega = legacy_baselines(V, tau).omega_opt
    seq = legacy_sequence(omega)
    shifts = (np.arange(fringe_samples) + 0.5) / fringe_samples - 0.5
    errs = []
    for s in shifts:
        M = computational_block(propagate_sequence(seq, PhysicsParams(V + s * omega, 1.0 / tau)))
        errs.append(1.0 - np.mean(np.abs(np.diag(M)) ** 2))
    return float(np.mean(errs))


# -- tabulated curves ----------------------------------------------------

ERROR_CURVE_HEADER = ("curve", "p", "eps_vtau", "sim_eps_vtau", "eps_over_ddp", "t_gate_v_over_2pi")
BRANCH_CURVE_HEADER = (
    "omega_over_v",
    "delta_plus_over_v",
    "delta_minus_over_v",
    "theta_plus",
    "theta_minus",
    "residual",
)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return f"{x:.12e}"


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write rows with numbers at 13 significant digits; ``None`` becomes an empty cell."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def _error_row(p: float, V_tau: float, simulate: bool) -> tuple:
    eps = scattering_error(p, 1.0, V_tau) * V_tau
    sim = None
    if simulate:
        seq = GateDesign(math.pi, 1.0, p, SQRT3 / 2.0, 0.5, 2.0 * math.pi).sequence()
        sim = simulated_error(seq, 1.0, V_tau) * V_tau
    return ("asymmetric", p, eps, sim, eps / DDP_CONSTANT, gate_duration(p) / (2.0 * math.pi))


def error_curve_rows(p_grid: Sequence[float], V_tau: float = 1e5, simulate: bool = True, threads: int = 1) -> list[tuple]:
    """Decay error and duration of the CZ design versus ``p`` (V = 1 units).

    Each asymmetric row holds the formula ``eps V tau``, the simulated value
    (``1 - F*`` with ``Gamma = 1/tau``), the ratio to the DDP bound and
    ``t_gate V / 2 pi``.  Two trailing rows give the DDP bound and the
    modified time-optimal constant ``1.33 eps_DDP``.
    """
    for p in p_grid:
        _check_p(p)
    _check_positive("V*tau", V_tau)
    with ThreadPoolExecutor(max(1, threads)) as pool:
        rows = list(pool.map(lambda p: _error_row(float(p), V_tau, simulate), p_grid))
    mto_t = MTO_DURATION_OMEGA / (SQRT3 / 2.0) / (2.0 * math.pi)
    rows.append(("ddp", None, DDP_CONSTANT, None, 1.0, None))
    rows.append(("mto", None, MTO_RATIO * DDP_CONSTANT, None, MTO_RATIO, mto_t))
    return rows


def loop_residual(n0: int, nV: int, omega: float, delta: float, V: float = 1.0) -> float:
    """Largest violation of the two loop conditions, in units of whole loops."""
    t = loop_target_time(n0, omega, delta)
    r0 = t * math.hypot(omega, delta) / (2 * math.pi) - n0
    rV = t * math.hypot(omega, delta - V) / (2 * math.pi) - nV
    return max(abs(r0), abs(rV))


def branch_curve_rows(n0: int, nV: int, omega_grid: Sequence[float], V: float = 1.0) -> list[tuple]:
    """Branch detunings and gate phases versus ``Omega / V``.

    Grid points without a real detuning produce empty cells.
    """
    rows = []
    for om in omega_grid:
        om = float(om)
        sol = detuning_branches(n0, nV, om, V)
        if not sol:
            rows.append((om / V, None, None, None, None, None))
            continue
        dp, dm = sol.deltas
        tp = wrap(branch_phases(n0, nV, dp, om, V).theta)
        tm = wrap(branch_phases(n0, nV, dm, om, V).theta)
        res = max(loop_residual(n0, nV, om, d, V) for d in sol.deltas)
        rows.append((om / V, dp / V, dm / V, tp, tm, res))
    return rows
