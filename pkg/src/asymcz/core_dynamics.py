"""Two-atom Hamiltonians and exact propagation over piecewise-constant pulses.

Each atom carries the levels ``|0>, |1>, |r>`` (indices 0, 1, 2).  The
two-atom index is ``3 * control + target`` so the computational states
``|00>, |01>, |10>, |11>`` sit at indices ``0, 1, 3, 4``.  ``|1>`` is never
driven.

Hamiltonian (hbar = 1), with ``s = PhysicsParams.frame_sign``::

    H = (Oc/2) (|0><r| + |r><0|)_c
      + (Ot/2) (e^{i xi} |0><r| + e^{-i xi} |r><0|)_t
      + s * (Delta |r><r|_t - V |rr><rr|)
      - i (Gamma/2) (|r><r|_c + |r><r|_t)

With the default ``s = +1`` a detuned 2pi loop on the target returns with
amplitude ``exp(-i (pi + Delta t / 2))`` and with the control in ``|r>`` the
loop sees the effective detuning ``Delta - V``.  ``s = -1`` is the textbook
rotating frame ``-Delta |r><r| + V |rr><rr|``; every gate phase comes out
complex conjugated there, fidelities are identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.linalg import expm

# single-atom levels
G0, G1, RYD = 0, 1, 2
DIM = 9
COMPUTATIONAL = (0, 1, 3, 4)
COMPUTATIONAL_LABELS = ("00", "01", "10", "11")


def index(control: int, target: int) -> int:
    """Two-atom basis index for single-atom levels (0, 1 or 2)."""
    return 3 * control + target


def _single(op: np.ndarray, atom: str) -> np.ndarray:
    eye = np.eye(3)
    return np.kron(op, eye) if atom == "control" else np.kron(eye, op)


_LOWER = np.zeros((3, 3), dtype=complex)
_LOWER[G0, RYD] = 1.0  # |0><r|
_PROJ_R = np.zeros((3, 3))
_PROJ_R[RYD, RYD] = 1.0

SIGMA_CONTROL = _single(_LOWER, "control")  # |0><r| on control
SIGMA_TARGET = _single(_LOWER, "target")
PROJ_R_CONTROL = _single(_PROJ_R, "control")
PROJ_R_TARGET = _single(_PROJ_R, "target")
PROJ_RR = PROJ_R_CONTROL @ PROJ_R_TARGET
# Rydberg number operator; |rr> counts twice (two decay channels)
RYDBERG_NUMBER = PROJ_R_CONTROL + PROJ_R_TARGET


@dataclass(frozen=True)
class PhysicsParams:
    """Interaction strength, Rydberg decay rate and frame convention.

    Parameters
    ----------
    V : float
        Rydberg-Rydberg interaction (angular frequency), must be positive.
    gamma : float
        Rydberg decay rate ``1 / tau``.  Decay is modelled as pure loss.
    frame_sign : int
        +1 (default) or -1, see the module docstring.
    """

    V: float = 1.0
    gamma: float = 0.0
    frame_sign: int = 1

    def __post_init__(self):
        if not (self.V > 0 and math.isfinite(self.V)):
            raise ValueError(f"interaction V must be positive and finite, got {self.V}")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ValueError(f"decay rate gamma must be >= 0, got {self.gamma}")
        if self.frame_sign not in (1, -1):
            raise ValueError("frame_sign must be +1 or -1")

    @property
    def tau(self) -> float:
        return math.inf if self.gamma == 0 else 1.0 / self.gamma

    def replace(self, **changes) -> "PhysicsParams":
        return PhysicsParams(**{**asdict(self), **changes})


@dataclass(frozen=True)
class PulseSegment:
    """Constant drive held for ``duration``.

    ``omega_control`` is resonant; ``xi`` and ``delta`` apply to the target
    drive only.
    """

    duration: float
    omega_control: float = 0.0
    omega_target: float = 0.0
    xi: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if not self.duration >= 0:
            raise ValueError(f"segment duration must be >= 0, got {self.duration}")


@dataclass(frozen=True)
class ControlImpulse:
    """Resonant control pulse of given area applied in zero time.

    This is the ``p -> infinity`` limit of a control pulse: an exact unitary
    ``exp(-i area/2 (|0><r| + |r><0|))`` on the control atom, with no
    duration and no decay.
    """

    area: float = math.pi
    duration: float = field(default=0.0, init=False)


Element = Union[PulseSegment, ControlImpulse]


@dataclass(frozen=True)
class PulseSequence:
    """Time-ordered pulse elements; the first element acts first."""

    elements: tuple[Element, ...] = ()

    def __init__(self, elements: Iterable[Element] = ()):
        object.__setattr__(self, "elements", tuple(elements))

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def __add__(self, other: "PulseSequence") -> "PulseSequence":
        return PulseSequence(self.elements + other.elements)

    @property
    def duration(self) -> float:
        return math.fsum(e.duration for e in self.elements)

    # -- JSON -----------------------------------------------------------
    def to_dict(self, units: dict | None = None) -> dict:
        segs = []
        for e in self.elements:
            if isinstance(e, ControlImpulse):
                segs.append({"impulse": "control", "area": e.area})
            else:
                segs.append(
                    {
                        "duration": e.duration,
                        "omega_control": e.omega_control,
                        "omega_target": e.omega_target,
                        "xi": e.xi,
                        "delta": e.delta,
                    }
                )
        return {"units": units or {"V": 1.0}, "segments": segs}

    def to_json(self, path: str | Path | None = None, units: dict | None = None) -> str:
        text = json.dumps(self.to_dict(units), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_dict(cls, data: dict | list) -> "PulseSequence":
        """Accept either a bare segment array or ``{"units": ..., "segments": [...]}``.

        A ``units`` object with key ``V`` rescales the file into V = 1 units
        (frequencies divided by V, durations multiplied by V).
        """
        if isinstance(data, list):
            segs, scale = data, 1.0
        else:
            segs = data["segments"]
            scale = float(data.get("units", {}).get("V", 1.0))
        out: list[Element] = []
        for s in segs:
            if s.get("impulse") == "control":
                out.append(ControlImpulse(area=float(s.get("area", math.pi))))
                continue
            out.append(
                PulseSegment(
                    duration=float(s["duration"]) * scale,
                    omega_control=float(s.get("omega_control", 0.0)) / scale,
                    omega_target=float(s.get("omega_target", 0.0)) / scale,
                    xi=float(s.get("xi", 0.0)),
                    delta=float(s.get("delta", 0.0)) / scale,
                )
            )
        return cls(out)

    @classmethod
    def from_json(cls, text_or_path: str | Path) -> "PulseSequence":
        p = Path(text_or_path)
        text = p.read_text() if p.suffix == ".json" and p.exists() else str(text_or_path)
        return cls.from_dict(json.loads(text))


def build_hamiltonian(segment: PulseSegment, params: PhysicsParams) -> np.ndarray:
    """9x9 Hamiltonian for one constant segment (Hermitian when gamma == 0)."""
    s = params.frame_sign
    drive_c = 0.5 * segment.omega_control * SIGMA_CONTROL
    drive_t = 0.5 * segment.omega_target * np.exp(1j * segment.xi) * SIGMA_TARGET
    H = drive_c + drive_c.conj().T + drive_t + drive_t.conj().T
    H = H + s * (segment.delta * PROJ_R_TARGET - params.V * PROJ_RR)
    if params.gamma:
        H = H - 0.5j * params.gamma * RYDBERG_NUMBER
    return H


def propagate_segment(H: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i H t)`` by scaling and squaring."""
    H = np.asarray(H)
    if t < 0:
        raise ValueError(f"propagation time must be >= 0, got {t}")
    if not np.all(np.isfinite(H)):
        raise ValueError("Hamiltonian has non-finite entries")
    if t == 0:
        return np.eye(H.shape[0], dtype=complex)
    return expm(-1j * t * H)


def impulse_propagator(pulse: ControlImpulse) -> np.ndarray:
    """Exact control rotation of the given area: ``|0> -> -i|r>`` for area pi."""
    half = 0.5 * pulse.area
    x = SIGMA_CONTROL + SIGMA_CONTROL.T
    # x restricted to the {0, r} control subspace squares to the projector
    on = x @ x
    return np.eye(DIM) - on + math.cos(half) * on - 1j * math.sin(half) * x


def element_propagator(element: Element, params: PhysicsParams) -> np.ndarray:
    if isinstance(element, ControlImpulse):
        return impulse_propagator(element)
    return propagate_segment(build_hamiltonian(element, params), element.duration)


def propagate_sequence(seq: PulseSequence | Sequence[Element], params: PhysicsParams) -> np.ndarray:
    """Time-ordered product of element propagators (last element leftmost)."""
    U = np.eye(DIM, dtype=complex)
    for element in seq:
        U = element_propagator(element, params) @ U
    return U


def basis_state(label: str) -> np.ndarray:
    """State vector for a two-character label such as ``"01"`` or ``"r0"``."""
    lv = {"0": G0, "1": G1, "r": RYD}
    psi = np.zeros(DIM, dtype=complex)
    psi[index(lv[label[0]], lv[label[1]])] = 1.0
    return psi


def evolve_state(seq: PulseSequence, params: PhysicsParams, initial: np.ndarray) -> list[np.ndarray]:
    """States at every element boundary, starting with ``initial``."""
    states = [np.asarray(initial, dtype=complex)]
    for element in seq:
        states.append(element_propagator(element, params) @ states[-1])
    return states


def _segment_population_operator(H: np.ndarray, t: float, N: np.ndarray) -> np.ndarray:
    """``int_0^t exp(iHs) N exp(-iHs) ds`` for Hermitian H.

    The integral is the upper-right block of a block-triangular exponential
    (Van Loan); for ``A = [[iH, N], [0, iH]]``, ``expm(A t)[0, 1] = Q exp(iHt)``.
    """
    n = H.shape[0]
    A = np.zeros((2 * n, 2 * n), dtype=complex)
    A[:n, :n] = 1j * H
    A[n:, n:] = 1j * H
    A[:n, n:] = N
    E = expm(A * t)
    return E[:n, n:] @ E[n:, n:].conj().T


def integrated_rydberg_population(
    seq: PulseSequence,
    params: PhysicsParams,
    initial: np.ndarray,
) -> float:
    """Time-integrated Rydberg number ``int dt <n_r(t)>`` along the trajectory.

    Double excitation ``|rr>`` is counted twice.  The trajectory must be
    unitary, so ``params.gamma`` has to be zero.
    """
    if params.gamma != 0:
        raise ValueError("integrated population is defined on the decay-free trajectory (gamma must be 0)")
    psi = np.asarray(initial, dtype=complex)
    total = 0.0
    for element in seq:
        if isinstance(element, PulseSegment) and element.duration > 0:
            H = build_hamiltonian(element, params)
            Q = _segment_population_operator(H, element.duration, RYDBERG_NUMBER)
            total += float(np.real(psi.conj() @ Q @ psi))
        psi = element_propagator(element, params) @ psi
    return total


def average_rydberg_population(seq: PulseSequence, params: PhysicsParams) -> float:
    """Integrated Rydberg population averaged over the four computational states."""
    return float(np.mean([integrated_rydberg_population(seq, params, basis_state(lbl)) for lbl in COMPUTATIONAL_LABELS]))
