"""GRAPE optimisation of the target-pulse laser phase.

The target pulse is split into ``N`` equal segments with phases ``xi_k`` on
top of a static detuning ``V/2`` (so a flat waveform at ``2 pi / V`` is the
analytic gate).  Control pulses are instantaneous pi rotations.  Because
``H(xi) = Z(xi) H(0) Z(xi)^dag`` with ``Z(xi) = exp(-i xi P_r)``, every
segment propagator is a phase conjugation of one matrix and its derivative
is ``-i [P_r, U_k]``.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .core_dynamics import (
    COMPUTATIONAL,
    DIM,
    PROJ_R_TARGET,
    ControlImpulse,
    PhysicsParams,
    PulseSegment,
    PulseSequence,
    build_hamiltonian,
    impulse_propagator,
    propagate_segment,
    propagate_sequence,
)
from .fidelity import CZ, FidelityReport, computational_block, corrected_fidelity, fidelity_gradient_matrix

log = logging.getLogger(__name__)

TARGET_INFIDELITY = 1e-8
_P_IDX = np.flatnonzero(np.diag(PROJ_R_TARGET).real > 0.5)
_P_DIAG = np.diag(PROJ_R_TARGET).real
_CONTROL_PI = impulse_propagator(ControlImpulse(math.pi))


@dataclass
class PhaseWaveform:
    """Piecewise-constant target phase; frequencies in the units of ``V``."""

    xi: np.ndarray
    duration: float
    omega: float
    V: float = 1.0

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float).ravel()
        if self.xi.size < 1:
            raise ValueError("waveform needs at least one segment")
        if not self.duration > 0:
            raise ValueError(f"duration must be positive, got {self.duration}")

    @property
    def N(self) -> int:
        return self.xi.size

    @property
    def dt(self) -> float:
        return self.duration / self.N

    @property
    def delta(self) -> float:
        return 0.5 * self.V

    def instantaneous_detuning(self) -> np.ndarray:
        """``|d xi / dt|`` between neighbouring segments, phase jumps wrapped to (-pi, pi]."""
        if self.N < 2:
            return np.zeros(0)
        jumps = np.angle(np.exp(1j * np.diff(self.xi)))
        return np.abs(jumps) / self.dt

    @property
    def max_detuning(self) -> float:
        d = self.instantaneous_detuning()
        return float(d.max()) if d.size else 0.0

    def sequence(self, omega_scale: float = 1.0) -> PulseSequence:
        segs = [
            PulseSegment(self.dt, omega_target=self.omega * omega_scale, xi=float(x), delta=self.delta)
            for x in self.xi
        ]
        return PulseSequence([ControlImpulse(math.pi), *segs, ControlImpulse(math.pi)])

    def resampled(self, duration: float | None = None, N: int | None = None) -> "PhaseWaveform":
        """Same phase profile stretched to ``duration`` and/or ``N`` segments."""
        N = N or self.N
        old = (np.arange(self.N) + 0.5) / self.N
        new = (np.arange(N) + 0.5) / N
        xi = np.interp(new, old, np.unwrap(self.xi)) if self.N > 1 else np.full(N, self.xi[0])
        return PhaseWaveform(xi, duration or self.duration, self.omega, self.V)

    @classmethod
    def flat(cls, N: int, duration: float, omega: float, V: float = 1.0) -> "PhaseWaveform":
        return cls(np.zeros(N), duration, omega, V)

    def to_dict(self) -> dict:
        s = 1.0 / self.V
        return {"N": self.N, "duration": self.duration / s, "omega": self.omega * s, "V": 1.0, "xi": self.xi.tolist()}

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseWaveform":
        xi = np.asarray(d["xi"], dtype=float)
        if "N" in d and int(d["N"]) != xi.size:
            raise ValueError(f"N={d['N']} does not match {xi.size} phases")
        return cls(xi, float(d["duration"]), float(d["omega"]), float(d.get("V", 1.0)))

    @classmethod
    def from_json(cls, path: str | Path) -> "PhaseWaveform":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class OptimizerConfig:
    N: int = 64
    restarts: int = 20
    max_iter: int = 500
    target_infidelity: float = TARGET_INFIDELITY
    tol: float = 1e-15
    seed: int = 0
    threads: int = 1
    random_modes: int = 6
    random_amplitude: float = math.pi
    # band-limit xi to this many sine and cosine modes (None: free segments)
    basis_modes: int | None = None
    # weight of the mean-square instantaneous detuning (units of Omega^2) added to the cost
    detuning_weight: float = 0.0


@dataclass(frozen=True)
class RobustSpec:
    """Weighted objective ``sum_i w_i F(q (1 + s_i))`` over shifts ``(0, -spread, +spread)``."""

    parameter: str = "rabi"
    spread: float = 0.05
    weights: tuple[float, float, float] = (2.0, 1.0, 1.0)

    def __post_init__(self):
        if self.parameter not in ("rabi", "interaction"):
            raise ValueError(f"robust parameter must be 'rabi' or 'interaction', got {self.parameter!r}")
        if not self.spread > 0:
            raise ValueError("spread must be positive")

    @property
    def shifts(self) -> tuple[float, float, float]:
        return (0.0, -self.spread, self.spread)


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian static Rabi-frequency error with fractional standard deviation ``sigma``."""

    sigma: float = 0.02

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


NOMINAL = "nominal"

# Robust runs: finer segmentation, a weak smoothness term so the winning
# restart does not rely on near-instantaneous phase jumps.
ROBUST_CONFIG = OptimizerConfig(N=128, restarts=8, max_iter=800, detuning_weight=1e-5)
DURATION_MULTIPLES = (1.25, 1.5, 2.0, 2.5, 3.0)


def _variants(objective) -> list[tuple[float, float, float]]:
    """(weight, omega scale, V scale) triples of an objective."""
    if objective == NOMINAL or objective is None:
        return [(1.0, 1.0, 1.0)]
    if isinstance(objective, RobustSpec):
        out = []
        for w, s in zip(objective.weights, objective.shifts):
            out.append((w, 1.0 + s, 1.0) if objective.parameter == "rabi" else (w, 1.0, 1.0 + s))
        return out
    raise ValueError(f"unknown objective {objective!r}")


class GrapeProblem:
    """Weighted infidelity of a phase waveform and its exact gradient.

    The objective is ``sum_i w_i (1 - F*_i) / sum_i w_i`` where ``F*_i`` is
    the corrected fidelity at operating-point variant ``i``.
    """

    def __init__(self, N, duration, omega, V=1.0, objective=NOMINAL, gamma=0.0, target=CZ):
        self.N = int(N)
        self.duration = float(duration)
        self.omega = float(omega)
        self.V = float(V)
        self.gamma = float(gamma)
        self.target = target
        self.variants = _variants(objective)
        self._wsum = sum(w for w, _, _ in self.variants)
        dt = self.duration / self.N
        self._U0 = []
        for _, so, sv in self.variants:
            seg = PulseSegment(dt, omega_target=self.omega * so, delta=0.5 * self.V)
            H = build_hamiltonian(seg, PhysicsParams(self.V * sv, self.gamma))
            self._U0.append(propagate_segment(H, dt))

    def _segments(self, U0, xi):
        z = np.exp(-1j * np.outer(xi, _P_DIAG))  # (N, 9)
        return U0[None, :, :] * z[:, :, None] * z.conj()[:, None, :]

    def propagators(self, xi) -> list[np.ndarray]:
        out = []
        for U0 in self._U0:
            U = _CONTROL_PI
            for Uk in self._segments(U0, xi):
                U = Uk @ U
            out.append(_CONTROL_PI @ U)
        return out

    def infidelity(self, xi) -> float:
        return self.value_and_grad(xi, need_grad=False)[0]

    def value_and_grad(self, xi, need_grad: bool = True):
        xi = np.asarray(xi, dtype=float)
        total = 0.0
        grad = np.zeros(self.N)
        emb = np.zeros((DIM, DIM), dtype=complex)
        for (w, _, _), U0 in zip(self.variants, self._U0):
            Us = self._segments(U0, xi)
            R = np.empty((self.N + 1, DIM, DIM), dtype=complex)
            R[0] = _CONTROL_PI
            for k in range(self.N):
                R[k + 1] = Us[k] @ R[k]
            U = _CONTROL_PI @ R[self.N]
            M = computational_block(U)
            if not need_grad:
                total += w * (1.0 - corrected_fidelity(M, self.target))
                continue
            F, G = fidelity_gradient_matrix(M, self.target)
            total += w * (1.0 - F)
            emb[np.ix_(COMPUTATIONAL, COMPUTATIONAL)] = G
            # B_k = G^dag L_k with L_N = C and L_{k-1} = L_k U_k
            B = np.empty((self.N + 1, DIM, DIM), dtype=complex)
            B[self.N] = emb.conj().T @ _CONTROL_PI
            for k in range(self.N, 0, -1):
                B[k - 1] = B[k] @ Us[k - 1]
            # d tr(G^dag U)/d xi_k = -i [tr(B_k P R_k+1) - tr(B_k-1 P R_k)] (1-based k)
            p = _P_IDX
            t1 = np.einsum("kbp,kpb->k", B[1:][:, :, p], R[1:][:, p, :])
            t2 = np.einsum("kbp,kpb->k", B[:-1][:, :, p], R[:-1][:, p, :])
            grad -= w * np.real(-1j * (t1 - t2))
        return total / self._wsum, grad / self._wsum


def evaluate_waveform(w: PhaseWaveform, gamma: float = 0.0, omega_scale: float = 1.0, V_scale: float = 1.0, target=CZ) -> FidelityReport:
    """Build the full pulse sequence for ``w`` and report its corrected fidelity."""
    params = PhysicsParams(w.V * V_scale, gamma)
    U = propagate_sequence(w.sequence(omega_scale), params)
    return FidelityReport.from_block(computational_block(U), target)


def grape_gradient(w: PhaseWaveform, objective=NOMINAL) -> np.ndarray:
    """Gradient of the (weighted) infidelity with respect to every ``xi_k``."""
    problem = GrapeProblem(w.N, w.duration, w.omega, w.V, objective)
    return problem.value_and_grad(w.xi)[1]


def objective_value(w: PhaseWaveform, objective=NOMINAL) -> float:
    return GrapeProblem(w.N, w.duration, w.omega, w.V, objective).infidelity(w.xi)


@dataclass
class OptimizationResult:
    waveform: PhaseWaveform
    infidelity: float
    converged: bool
    restart: int
    log: list[tuple[int, float, float]] = field(default_factory=list, repr=False)


class _Stop(Exception):
    pass


def _smooth_random(rng: np.random.Generator, N: int, modes: int, amplitude: float = math.pi) -> np.ndarray:
    t = (np.arange(N) + 0.5) / N
    k = np.arange(1, modes + 1)
    a = rng.uniform(-1, 1, modes) / k
    b = rng.uniform(-1, 1, modes) / k
    xi = np.sin(np.pi * np.outer(t, k)) @ a + np.cos(np.pi * np.outer(t, k)) @ b
    return amplitude * xi / max(np.abs(xi).max(), 1e-12)


def fourier_basis(N: int, modes: int) -> np.ndarray:
    """``(N, 2 modes)`` matrix of ``sin(k pi t/T)`` and ``cos(k pi t/T)``, k = 1..modes."""
    t = (np.arange(N) + 0.5) / N
    k = np.arange(1, modes + 1)
    return np.hstack([np.sin(np.pi * np.outer(t, k)), np.cos(np.pi * np.outer(t, k))])


def initial_guesses(config: OptimizerConfig, extra: Sequence[np.ndarray] = ()) -> list[np.ndarray]:
    """Flat start, any caller-supplied starts, then ``config.restarts`` seeded smooth random starts."""
    rng = np.random.default_rng(config.seed)
    starts = [np.zeros(config.N), *[np.asarray(x, float) for x in extra]]
    starts += [_smooth_random(rng, config.N, config.random_modes, config.random_amplitude) for _ in range(config.restarts)]
    return starts


class _BasisProblem:
    """Pulls a GRAPE problem back onto band-limited coefficients ``xi = B c``."""

    def __init__(self, problem: GrapeProblem, basis: np.ndarray):
        self.problem = problem
        self.basis = basis
        self._pinv = np.linalg.pinv(basis)

    def value_and_grad(self, c):
        f, g = self.problem.value_and_grad(self.basis @ c)
        return f, self.basis.T @ g

    def coefficients(self, xi):
        return self._pinv @ np.asarray(xi, float)


class _PenalisedProblem:
    """Adds ``weight * mean((d xi/dt)^2) / Omega^2`` to a GRAPE cost."""

    def __init__(self, problem: GrapeProblem, weight: float):
        self.problem = problem
        self.scale = weight / ((problem.duration / problem.N * problem.omega) ** 2 * max(problem.N - 1, 1))

    def penalty(self, xi):
        d = np.diff(xi)
        g = np.zeros_like(xi)
        g[:-1] -= 2 * d
        g[1:] += 2 * d
        return self.scale * float(d @ d), self.scale * g

    def value_and_grad(self, xi):
        f, g = self.problem.value_and_grad(xi)
        pf, pg = self.penalty(xi)
        return f + pf, g + pg


def _run_single(problem, x0: np.ndarray, config: OptimizerConfig, stop_at: float | None):
    if config.detuning_weight:
        sub = _PenalisedProblem(problem, config.detuning_weight)
        return _run_single(sub, x0, replace(config, detuning_weight=0.0), stop_at)
    if config.basis_modes:
        sub = _BasisProblem(problem, fourier_basis(config.N, config.basis_modes))
        c, f, history = _run_single(sub, sub.coefficients(x0), replace(config, basis_modes=None), stop_at)
        return sub.basis @ c, f, history
    history: list[tuple[int, float, float]] = []
    best = {"x": np.array(x0, float), "f": math.inf}

    def fun(x):
        f, g = problem.value_and_grad(x)
        if f < best["f"]:
            best["x"], best["f"] = np.array(x), f
        history.append((len(history), f, float(np.linalg.norm(g))))
        if stop_at is not None and f <= stop_at:
            raise _Stop
        return f, g

    try:
        minimize(
            fun,
            x0,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": config.max_iter, "ftol": config.tol, "gtol": 1e-14, "maxcor": 30},
        )
    except _Stop:
        pass
    return best["x"], best["f"], history


def optimize(
    duration: float,
    config: OptimizerConfig = OptimizerConfig(),
    objective=NOMINAL,
    omega: float = math.sqrt(3) / 2,
    V: float = 1.0,
    extra_starts: Sequence[np.ndarray] = (),
    stop_early: bool = True,
) -> OptimizationResult:
    """Multi-start L-BFGS over the phase waveform; returns the best restart.

    With ``stop_early`` the search ends as soon as one restart reaches the
    target infidelity.  Restarts are seeded from ``config.seed`` and merged
    in restart order, so results do not depend on ``config.threads``.
    """
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    problem = GrapeProblem(config.N, duration, omega, V, objective)
    starts = initial_guesses(config, extra_starts)
    stop_at = config.target_infidelity if stop_early else None

    def run(i):
        return _run_single(problem, starts[i], config, stop_at)

    results = []
    if config.threads > 1 and not stop_early:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(run, range(len(starts))))
    else:
        for i in range(len(starts)):
            results.append(run(i))
            if stop_early and results[-1][1] <= config.target_infidelity:
                break
    i_best = min(range(len(results)), key=lambda i: (results[i][1], i))
    x, f, hist = results[i_best]
    if config.detuning_weight:
        f = problem.infidelity(x)
    w = PhaseWaveform(x, duration, omega, V)
    converged = f <= config.target_infidelity
    log.debug("optimize duration=%.6g best=%.3e restart=%d", duration, f, i_best)
    return OptimizationResult(w, float(f), converged, i_best, hist)


@dataclass
class SearchResult:
    duration: float
    waveform: PhaseWaveform
    infidelity: float
    history: list[tuple[float, float, bool]]
    log: list[tuple[int, float, float]] = field(default_factory=list, repr=False)


def default_bracket(omega: float, V: float) -> tuple[float, float]:
    return math.pi / V, 4.0 * (2 * math.pi / omega + 2 * math.pi / V)


def time_optimal_search(
    omega: float,
    V: float = 1.0,
    config: OptimizerConfig = OptimizerConfig(),
    bracket: tuple[float, float] | None = None,
    resolution: float = 1e-3,
) -> SearchResult:
    """Shortest target-pulse duration with nominal infidelity below the target.

    Binary search over the duration; each probe is a multi-start GRAPE run
    seeded additionally with the shortest feasible waveform found so far.
    """
    lo, hi = bracket or default_bracket(omega, V)
    history = []
    best = optimize(hi, config, NOMINAL, omega, V)
    history.append((hi, best.infidelity, best.converged))
    if not best.converged:
        raise RuntimeError(f"upper bracket {hi:.6g} is not feasible (best infidelity {best.infidelity:.3e})")
    while (hi - lo) > resolution * hi:
        mid = 0.5 * (lo + hi)
        warm = best.waveform.resampled(mid).xi
        res = optimize(mid, config, NOMINAL, omega, V, extra_starts=[warm])
        history.append((mid, res.infidelity, res.converged))
        log.info("duration %.6f infidelity %.3e feasible=%s", mid, res.infidelity, res.converged)
        if res.converged:
            hi, best = mid, res
        else:
            lo = mid
    return SearchResult(hi, best.waveform, best.infidelity, history, best.log)


def robust_optimize(
    duration: float,
    robust: RobustSpec = RobustSpec(),
    config: OptimizerConfig = ROBUST_CONFIG,
    omega: float = math.sqrt(3) / 2,
    V: float = 1.0,
    extra_starts: Sequence[np.ndarray] = (),
) -> OptimizationResult:
    """Maximise ``2F(q) + F(0.95q) + F(1.05q)`` (with the default ``RobustSpec``) over the phase waveform."""
    res = optimize(duration, config, robust, omega, V, extra_starts=extra_starts, stop_early=False)
    flat = PhaseWaveform.flat(config.N, duration, omega, V)
    if objective_value(flat, robust) < res.infidelity:
        return OptimizationResult(flat, objective_value(flat, robust), False, -1, res.log)
    return res


def robust_score(w: PhaseWaveform, robust: RobustSpec) -> float:
    """Weighted fidelity sum ``sum_i w_i F_i``."""
    total = sum(robust.weights)
    return total * (1.0 - objective_value(w, robust))


def _scaled_error(w: PhaseWaveform, parameter: str, frac: float, gamma: float) -> float:
    if parameter == "rabi":
        rep = evaluate_waveform(w, gamma, omega_scale=1.0 + frac)
    elif parameter == "interaction":
        rep = evaluate_waveform(w, gamma, V_scale=1.0 + frac)
    else:
        raise ValueError(f"parameter must be 'rabi' or 'interaction', got {parameter!r}")
    return rep.infidelity


def weighted_average_error(w: PhaseWaveform, noise: NoiseModel, gamma: float = 0.0, nodes: int = 15) -> float:
    """Gaussian-weighted infidelity over static fractional Rabi errors.

    Gauss-Hermite quadrature: ``delta = sqrt(2) sigma x_i`` with weights
    ``w_i / sqrt(pi)``.
    """
    x, wts = np.polynomial.hermite.hermgauss(nodes)
    fracs = math.sqrt(2.0) * noise.sigma * x
    errs = np.array([_scaled_error(w, "rabi", f, gamma) for f in fracs])
    return float(np.dot(wts, errs) / math.sqrt(math.pi))


def fidelity_scan(w: PhaseWaveform, parameter: str, grid, gamma: float = 0.0) -> list[tuple[float, float]]:
    """``(fractional error, 1 - F*)`` pairs across ``grid``."""
    grid = np.asarray(grid, dtype=float)
    if np.any(np.abs(grid) > 0.1 + 1e-12):
        raise ValueError("scan grid must lie within +-10%")
    return [(float(f), _scaled_error(w, parameter, float(f), gamma)) for f in grid]


@dataclass
class AverageErrorPoint:
    ratio: float
    waveform: PhaseWaveform
    error_no_decay: float
    error_with_decay: float
    flat_no_decay: float
    flat_with_decay: float


def average_error_sweep(
    noise: NoiseModel = NoiseModel(),
    omega_over_gamma: float = 2 * math.pi * 150,
    multiples: Sequence[float] = DURATION_MULTIPLES,
    config: OptimizerConfig = ROBUST_CONFIG,
    omega: float = math.sqrt(3) / 2,
    V: float = 1.0,
    t_opt: float | None = None,
    nodes: int = 15,
) -> list[AverageErrorPoint]:
    """Rabi-robust waveforms at ``t_opt`` multiples and their averaged errors.

    Optimisation is decay free; the decay-inclusive column uses
    ``Gamma = omega / omega_over_gamma``.  ``t_opt`` defaults to ``2 pi / V``
    and the flat columns repeat the analytic pulse of that duration as the
    reference.
    """
    t_opt = t_opt or 2 * math.pi / V
    gamma = omega / omega_over_gamma
    flat = PhaseWaveform.flat(1, t_opt, omega, V)
    flat_errs = (weighted_average_error(flat, noise, 0.0, nodes), weighted_average_error(flat, noise, gamma, nodes))
    out = []
    for m in multiples:
        w = robust_optimize(m * t_opt, RobustSpec("rabi"), config, omega, V).waveform
        out.append(
            AverageErrorPoint(
                float(m),
                w,
                weighted_average_error(w, noise, 0.0, nodes),
                weighted_average_error(w, noise, gamma, nodes),
                *flat_errs,
            )
        )
    return out
