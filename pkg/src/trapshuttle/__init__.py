"""Optimal harmonic-trap transport without final excitation."""

from .core import (
    BoundaryVerdict,
    ControlSample,
    PiecewiseTrajectory,
    Segment,
    StateVector,
    TransportSpec,
    check_boundary_conditions,
    control_of,
    evaluate,
    polynomial_ansatz,
    trap_trajectory,
)
from .dynamics import (
    HBAR,
    RB87_MASS,
    EnergyReport,
    IntegrationError,
    SimulationRecord,
    cost_JD,
    cost_JE,
    cost_JT,
    dimensionalize,
    energy_report,
    lr_phase,
    mean_potential_energy,
    nondimensionalize,
    simulate,
)
from .protocols import (
    FeasibilityClass,
    PmpCertificate,
    ProtocolKind,
    ProtocolResult,
    Structure,
    UnsupportedProtocolError,
    classify_feasibility,
    plan,
    plan_displacement_optimal,
    plan_energy_optimal,
    plan_polynomial,
    plan_time_optimal,
    pmp_certificate,
)

__version__ = "0.1.0"
