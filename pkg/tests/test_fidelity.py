import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymcz.analytic_gate import design_cz, simulate_design
from asymcz.core_dynamics import DIM, PhysicsParams, index, propagate_sequence
from asymcz.fidelity import (
    CZ,
    FidelityReport,
    average_gate_fidelity,
    computational_block,
    controlled_phase,
    corrected_fidelity,
    decay_error,
    fidelity_gradient_matrix,
    local_z,
    optimize_local_phases,
    phase_gate,
)

angles = st.floats(-math.pi, math.pi, allow_nan=False)


def random_diagonal(rng):
    return np.diag(np.exp(1j * rng.uniform(-np.pi, np.pi, 4)))


def random_contraction(rng, scale=0.9):
    A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    Q, _ = np.linalg.qr(A)
    return scale * Q


def test_block_of_identity():
    np.testing.assert_array_equal(computational_block(np.eye(DIM)), np.eye(4))


def test_leakage_reported():
    U = np.eye(DIM, dtype=complex)
    # move 10% of |00> into |r0>
    c, s = math.sqrt(0.9), math.sqrt(0.1)
    U[index(0, 0), index(0, 0)] = c
    U[index(2, 0), index(0, 0)] = s
    rep = FidelityReport.from_block(computational_block(U), np.eye(4))
    assert rep.leakage[0] == pytest.approx(0.1)
    assert rep.leakage[1:] == pytest.approx([0, 0, 0], abs=1e-15)


def test_fidelity_reference_values():
    assert average_gate_fidelity(CZ, CZ) == pytest.approx(1.0)
    assert average_gate_fidelity(np.eye(4), CZ) == pytest.approx(0.4)
    r = optimize_local_phases(np.eye(4), CZ)
    assert r.fidelity == pytest.approx(0.6, abs=1e-12)
    assert average_gate_fidelity(np.eye(4), local_z(math.pi / 2, math.pi / 2)[:, None] * CZ) == pytest.approx(0.6)


def test_analytic_cz_is_exact():
    design, _ = design_cz(1.0, 1.0)
    assert 1 - corrected_fidelity(simulate_design(design)) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(st.lists(angles, min_size=4, max_size=4), angles, angles, angles)
def test_gauge_invariance(phases, a, b, g):
    M = np.diag(np.exp(1j * np.array(phases)))
    gauged = np.exp(1j * g) * local_z(a, b)[:, None] * M
    assert corrected_fidelity(gauged) == pytest.approx(corrected_fidelity(M), abs=1e-10)


def test_reduced_equals_numeric_on_diagonals(rng):
    for _ in range(100):
        M = random_diagonal(rng)
        a = optimize_local_phases(M, CZ, "reduced").fidelity
        b = optimize_local_phases(M, CZ, "numeric").fidelity
        assert a == pytest.approx(b, abs=1e-9)


def test_reduced_equals_numeric_on_general_blocks(rng):
    for _ in range(20):
        M = random_contraction(rng)
        a = optimize_local_phases(M, CZ, "reduced").fidelity
        b = optimize_local_phases(M, CZ, "numeric").fidelity
        assert a == pytest.approx(b, abs=1e-10)


def test_unknown_method():
    with pytest.raises(ValueError):
        optimize_local_phases(np.eye(4), CZ, "grid")


def test_bell_phase_defect_is_quadratic():
    deltas = np.geomspace(1e-4, 1e-2, 9)
    errs = [1 - corrected_fidelity(np.diag([1, 1, 1, -np.exp(1j * d)])) for d in deltas]
    slope, intercept = np.polyfit(np.log(deltas), np.log(errs), 1)
    assert slope == pytest.approx(2.0, abs=1e-3)
    # the best gauge leaves phases +-d/4, so |Tr|^2 = 16 - d^2 and 1 - F* = d^2 / 20
    assert math.exp(intercept) == pytest.approx(1 / 20, rel=1e-3)


def test_ordering_and_leakage_bound(rng):
    for _ in range(30):
        M = random_contraction(rng, scale=rng.uniform(0.6, 1.0)) @ random_diagonal(rng)
        rep = FidelityReport.from_block(M)
        assert 0 <= rep.raw_fidelity <= rep.fidelity <= 1 + 1e-10
        loss = 1 - np.real(np.vdot(M, M)) / 4
        assert 1 - rep.fidelity >= loss / 5 - 1e-10


def test_controlled_phase_and_phase_gate():
    assert controlled_phase(phase_gate(0.7)) == pytest.approx(0.7)
    assert controlled_phase(CZ) == pytest.approx(math.pi)
    assert corrected_fidelity(phase_gate(0.7), phase_gate(0.7)) == pytest.approx(1.0)


def test_gradient_matrix_matches_finite_differences(rng):
    M = random_contraction(rng) @ random_diagonal(rng)
    _, G = fidelity_gradient_matrix(M)
    h = 1e-6
    for _ in range(6):
        dM = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        fd = (corrected_fidelity(M + h * dM) - corrected_fidelity(M - h * dM)) / (2 * h)
        assert np.real(np.vdot(G, dM)) == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_decay_error():
    assert decay_error(0.0, 10.0) == 0.0
    with pytest.raises(ValueError):
        decay_error(1.0, 0.0)
    from asymcz.core_dynamics import average_rydberg_population

    _, seq = design_cz(1.0, 1.0)
    P = average_rydberg_population(seq, PhysicsParams())
    tau = 1e5
    assert decay_error(P, tau) == pytest.approx((11 / 8 + 1 / math.sqrt(3)) * math.pi / tau, rel=1e-10)
    M = computational_block(propagate_sequence(seq, PhysicsParams(gamma=1 / tau)))
    assert 1 - corrected_fidelity(M) == pytest.approx(decay_error(P, tau), rel=1e-2)


def test_report_json_has_full_precision():
    design, _ = design_cz(1.0, 1.0)
    M = simulate_design(design, gamma=1e-4)
    rep = FidelityReport.from_block(M, integrated_population=1.25)
    data = json.loads(rep.to_json())
    assert data["infidelity"] == pytest.approx(rep.infidelity, rel=1e-14)
    assert len(data["leakage"]) == 4
    mantissa = rep.to_json().split('"infidelity": ')[1].split("e")[0]
    assert len(mantissa.replace(".", "").replace("-", "")) >= 13
