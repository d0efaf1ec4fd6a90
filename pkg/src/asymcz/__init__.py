"""Design, simulation and phase-waveform optimisation for the asymmetric
pi-2pi-pi Rydberg controlled-phase gate.

Units: frequencies are angular and measured in units of the interaction
``V`` unless stated otherwise; times in ``1/V``.
"""

from .analytic_gate import (
    GateDesign,
    branch_phases,
    canonical_correction,
    design_branch,
    design_cz,
    design_phase_gate,
    detuning_branches,
    gate_duration,
    legacy_baselines,
    scattering_error,
    spacing_to_interaction_error,
    target_pulse_phases,
)
from .core_dynamics import (
    ControlImpulse,
    PhysicsParams,
    PulseSegment,
    PulseSequence,
    build_hamiltonian,
    integrated_rydberg_population,
    propagate_segment,
    propagate_sequence,
)
from .fidelity import (
    CZ,
    FidelityReport,
    average_gate_fidelity,
    computational_block,
    decay_error,
    optimize_local_phases,
)
from .pulse_optimizer import (
    NoiseModel,
    OptimizerConfig,
    PhaseWaveform,
    RobustSpec,
    evaluate_waveform,
    fidelity_scan,
    grape_gradient,
    optimize,
    robust_optimize,
    time_optimal_search,
    weighted_average_error,
)

__version__ = "0.1.0"
