import math

import numpy as np
import pytest
from conftest import ode_sequence

from asymcz.core_dynamics import PhysicsParams
from asymcz.fidelity import computational_block, corrected_fidelity
from asymcz.pulse_optimizer import (
    GrapeProblem,
    NoiseModel,
    OptimizerConfig,
    PhaseWaveform,
    RobustSpec,
    evaluate_waveform,
    fidelity_scan,
    grape_gradient,
    objective_value,
    optimize,
    robust_optimize,
    robust_score,
    weighted_average_error,
)

OM = math.sqrt(3) / 2
T_OPT = 2 * math.pi


def random_waveform(rng, N, duration=None):
    return PhaseWaveform(rng.uniform(-math.pi, math.pi, N), duration or rng.uniform(3, 12), OM)


def fd_gradient(problem, xi, h=1e-6):
    g = np.zeros_like(xi)
    for k in range(xi.size):
        e = np.zeros_like(xi)
        e[k] = h
        g[k] = (problem.infidelity(xi + e) - problem.infidelity(xi - e)) / (2 * h)
    return g


# -- waveform -------------------------------------------------------------------

def test_flat_waveform_is_analytic_gate():
    w = PhaseWaveform.flat(1, T_OPT, OM)
    assert evaluate_waveform(w).infidelity <= 1e-10
    assert evaluate_waveform(PhaseWaveform.flat(16, T_OPT, OM)).infidelity <= 1e-10


def test_waveform_validation_and_detuning():
    with pytest.raises(ValueError):
        PhaseWaveform([], 1.0, OM)
    with pytest.raises(ValueError):
        PhaseWaveform([0.0, 1.0], 0.0, OM)
    w = PhaseWaveform([0.0, 0.5, 0.5 - 2 * math.pi + 0.2], 3.0, OM)
    np.testing.assert_allclose(w.instantaneous_detuning(), [0.5, 0.2])
    assert w.max_detuning == pytest.approx(0.5)


def test_waveform_json_roundtrip(tmp_path, rng):
    w = random_waveform(rng, 8)
    w.to_json(tmp_path / "w.json")
    back = PhaseWaveform.from_json(tmp_path / "w.json")
    np.testing.assert_array_equal(back.xi, w.xi)
    assert (back.duration, back.omega, back.V) == (w.duration, w.omega, w.V)
    with pytest.raises(ValueError):
        PhaseWaveform.from_dict({"N": 3, "duration": 1, "omega": 1, "xi": [0, 1]})


def test_constant_shift_leaves_fidelity(rng):
    w = random_waveform(rng, 12)
    base = evaluate_waveform(w).fidelity
    for c in (0.4, -2.2):
        shifted = PhaseWaveform(w.xi + c, w.duration, w.omega)
        assert evaluate_waveform(shifted).fidelity == pytest.approx(base, abs=1e-10)


def test_evaluate_matches_ode_oracle(rng):
    w = random_waveform(rng, 6)
    for gamma in (0.0, 0.01):
        U = ode_sequence(w.sequence(), PhysicsParams(w.V, gamma))
        assert evaluate_waveform(w, gamma).fidelity == pytest.approx(corrected_fidelity(computational_block(U)), abs=1e-9)


def test_problem_agrees_with_full_evaluation(rng):
    w = random_waveform(rng, 10)
    for robust in ("nominal", RobustSpec("rabi"), RobustSpec("interaction")):
        p = GrapeProblem(w.N, w.duration, w.omega, w.V, robust)
        direct = []
        for weight, so, sv in p.variants:
            direct.append(weight * evaluate_waveform(w, omega_scale=so, V_scale=sv).infidelity)
        assert p.infidelity(w.xi) == pytest.approx(sum(direct) / p._wsum, abs=1e-12)


# -- gradient ---------------------------------------------------------------------

@pytest.mark.parametrize("N, count", [(4, 20), (16, 20), (64, 10)])
def test_gradient_matches_finite_differences(rng, N, count):
    worst = 0.0
    for i in range(count):
        w = random_waveform(rng, N)
        robust = "nominal" if i % 2 == 0 else RobustSpec("rabi" if i % 4 == 1 else "interaction")
        p = GrapeProblem(N, w.duration, OM, 1.0, robust)
        g = p.value_and_grad(w.xi)[1]
        fd = fd_gradient(p, w.xi)
        worst = max(worst, np.max(np.abs(g - fd)) / np.max(np.abs(fd)))
    assert worst <= 1e-5


def test_gradient_vanishes_at_analytic_point():
    w = PhaseWaveform.flat(8, T_OPT, OM)
    assert np.linalg.norm(grape_gradient(w)) <= 1e-8


def test_gradient_orthogonal_to_constant_shift(rng):
    for _ in range(5):
        w = random_waveform(rng, 16)
        assert abs(np.sum(grape_gradient(w))) <= 1e-10


# -- optimiser ----------------------------------------------------------------------

def test_optimum_found_immediately_at_analytic_duration():
    res = optimize(T_OPT, OptimizerConfig(N=16, restarts=2))
    assert res.converged and res.restart == 0 and len(res.log) <= 5


def test_below_time_optimal_is_infeasible():
    res = optimize(0.9 * T_OPT, OptimizerConfig(N=32, restarts=3, max_iter=300))
    assert not res.converged and res.infidelity > 1e-8


def test_optimize_is_deterministic():
    cfg = OptimizerConfig(N=16, restarts=3, max_iter=60, seed=7)
    a = optimize(1.2 * T_OPT, cfg, stop_early=False)
    b = optimize(1.2 * T_OPT, cfg, stop_early=False)
    np.testing.assert_array_equal(a.waveform.xi, b.waveform.xi)
    c = optimize(1.2 * T_OPT, OptimizerConfig(N=16, restarts=3, max_iter=60, seed=7, threads=3), stop_early=False)
    np.testing.assert_array_equal(a.waveform.xi, c.waveform.xi)


def test_optimize_rejects_bad_duration():
    with pytest.raises(ValueError):
        optimize(0.0)


def test_robust_never_worse_than_flat():
    robust = RobustSpec("rabi")
    d = 1.3 * T_OPT
    cfg = OptimizerConfig(N=32, restarts=1, max_iter=40, detuning_weight=1e-5)
    res = robust_optimize(d, robust, cfg)
    flat = PhaseWaveform.flat(32, d, OM)
    assert robust_score(res.waveform, robust) >= robust_score(flat, robust) - 1e-12
    assert objective_value(res.waveform, robust) == pytest.approx(res.infidelity, abs=1e-12)


def test_robust_settings_validation():
    with pytest.raises(ValueError):
        RobustSpec("detuning")
    with pytest.raises(ValueError):
        RobustSpec("rabi", spread=0.0)
    with pytest.raises(ValueError):
        NoiseModel(0.0)


# -- averaged error and scans -----------------------------------------------------------

def test_weighted_error_narrow_noise_limit(rng):
    w = random_waveform(rng, 8)
    nominal = evaluate_waveform(w).infidelity
    assert weighted_average_error(w, NoiseModel(1e-7)) == pytest.approx(nominal, rel=1e-6)


def test_weighted_error_quadrature_converged(rng):
    w = PhaseWaveform.flat(1, T_OPT, OM)
    for gamma in (0.0, OM / (2 * math.pi * 150)):
        a = weighted_average_error(w, NoiseModel(0.02), gamma, nodes=15)
        b = weighted_average_error(w, NoiseModel(0.02), gamma, nodes=31)
        assert a == pytest.approx(b, rel=1e-3)


def test_weighted_error_flat_matches_second_moment():
    # quadratic mismatch: 1 - F(d) ~ c d^2, so the Gaussian average is c sigma^2
    w = PhaseWaveform.flat(1, T_OPT, OM)
    c = evaluate_waveform(w, omega_scale=1.001).infidelity / 1e-6
    assert weighted_average_error(w, NoiseModel(0.002)) == pytest.approx(c * 0.002**2, rel=0.02)


def test_scan_properties():
    w = PhaseWaveform.flat(1, T_OPT, OM)
    grid = np.linspace(-0.1, 0.1, 41)
    pts = fidelity_scan(w, "rabi", grid)
    err = np.array([e for _, e in pts])
    assert pts[20][0] == 0.0 and err[20] == pytest.approx(evaluate_waveform(w).infidelity, abs=1e-15)
    assert np.argmin(err) == 20
    small = err[19:22]
    assert small[0] == pytest.approx(small[2], rel=0.05)
    with pytest.raises(ValueError):
        fidelity_scan(w, "rabi", [0.2])
    with pytest.raises(ValueError):
        fidelity_scan(w, "detuning", [0.0])
