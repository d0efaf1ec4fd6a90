import numpy as np
import pytest
from scipy.integrate import solve_ivp

from asymcz.core_dynamics import DIM, PhysicsParams, PulseSegment, build_hamiltonian


def ode_propagator(H, t, rtol=1e-13, atol=1e-15):
    """Independent oracle: integrate dU/dt = -i H U with an adaptive Runge-Kutta scheme."""
    n = H.shape[0]

    def rhs(_, y):
        U = y.view(complex).reshape(n, n)
        return (-1j * H @ U).ravel().view(float)

    y0 = np.eye(n, dtype=complex).ravel().view(float)
    sol = solve_ivp(rhs, (0.0, t), y0, method="DOP853", rtol=rtol, atol=atol)
    return sol.y[:, -1].view(complex).reshape(n, n)


def ode_sequence(seq, params):
    from asymcz.core_dynamics import ControlImpulse, impulse_propagator

    U = np.eye(DIM, dtype=complex)
    for e in seq:
        if isinstance(e, ControlImpulse):
            U = impulse_propagator(e) @ U
        elif e.duration > 0:
            U = ode_propagator(build_hamiltonian(e, params), e.duration) @ U
    return U


def random_segment(rng, scale=2.0):
    return PulseSegment(
        duration=float(rng.uniform(0.1, 3.0)),
        omega_control=float(rng.normal(0, scale)),
        omega_target=float(rng.normal(0, scale)),
        xi=float(rng.uniform(-np.pi, np.pi)),
        delta=float(rng.normal(0, scale)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def params():
    return PhysicsParams(V=1.0)
