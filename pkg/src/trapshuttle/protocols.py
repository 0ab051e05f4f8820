"""Closed-form optimal transport protocols.

Three optimal planners are implemented, each with ``|u| <= delta``:

* minimum time: bang-bang, one switch at ``tf/2``;
* minimum time-averaged ``|u|``: bang-off-bang with a coasting middle;
* minimum time-averaged potential energy: a linear ramp in ``u`` when the
  bound is slack, bang-linear-bang when it is active.

Feasibility depends only on ``gamma = 4 d / (omega0^2 tf^2 delta)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from .core import PiecewiseTrajectory, Segment, TransportSpec, polynomial_ansatz
from .dynamics import cost_JD, cost_JE

GAMMA_RTOL = 1e-12


class ProtocolKind(str, enum.Enum):
    TIME_OPTIMAL = "TimeOptimal"
    DISPLACEMENT_OPTIMAL = "DisplacementOptimal"
    ENERGY_OPTIMAL_BOUNDED = "EnergyOptimalBounded"
    ENERGY_OPTIMAL_UNBOUNDED = "EnergyOptimalUnbounded"
    POLYNOMIAL_ANSATZ = "PolynomialAnsatz"


class FeasibilityClass(str, enum.Enum):
    INFEASIBLE = "Infeasible"
    DEGENERATE_BANG_BANG = "DegenerateBangBang"
    INTERIOR = "Interior"
    UNBOUNDED_REGIME = "UnboundedRegime"


class Structure(str, enum.Enum):
    BANG_BANG = "BangBang"
    BANG_OFF_BANG = "BangOffBang"
    BANG_LINEAR_BANG = "BangLinearBang"
    LINEAR = "Linear"


class UnsupportedProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolResult:
    """Planned protocol. ``trajectory`` is ``None`` when infeasible."""

    spec: TransportSpec
    kind: ProtocolKind
    feasibility: FeasibilityClass
    trajectory: PiecewiseTrajectory | None
    switch_times: tuple[float, ...] = ()
    v0: float = float("nan")
    costs: dict = field(default_factory=dict)
    tf_min: float | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.trajectory is not None

    @property
    def tf(self) -> float:
        return self.trajectory.tf if self.trajectory is not None else float("nan")

    def header(self) -> dict:
        """JSON-ready summary."""
        return {
            "kind": self.kind.value,
            "feasibility": self.feasibility.value,
            "mass": self.spec.mass,
            "omega0": self.spec.omega0,
            "d": self.spec.d,
            "tf": self.tf if self.feasible else self.spec.tf,
            "delta": self.spec.delta,
            "tf_min": self.tf_min,
            "switch_times": list(self.switch_times),
            "breakpoints": [] if self.trajectory is None else [float(b) for b in self.trajectory.breakpoints],
            "v0": self.v0,
            "costs": dict(self.costs),
            "diagnostics": {k: v for k, v in self.diagnostics.items()},
        }


def _gamma_margin(spec: TransportSpec) -> float:
    """``1 - gamma`` with values within ``GAMMA_RTOL`` of zero snapped to 0."""
    margin = 1.0 - spec.gamma
    if abs(margin) <= GAMMA_RTOL:
        return 0.0
    return margin


def classify_feasibility(spec: TransportSpec, kind: ProtocolKind | str = ProtocolKind.DISPLACEMENT_OPTIMAL) -> FeasibilityClass:
    """Classify ``spec`` from the dimensionless group ``gamma`` alone."""
    kind = ProtocolKind(kind)
    margin = _gamma_margin(spec)
    if margin < 0:
        return FeasibilityClass.INFEASIBLE
    if margin == 0:
        return FeasibilityClass.DEGENERATE_BANG_BANG
    if kind in (ProtocolKind.ENERGY_OPTIMAL_BOUNDED, ProtocolKind.ENERGY_OPTIMAL_UNBOUNDED):
        if spec.gamma <= 2.0 / 3.0 * (1.0 + GAMMA_RTOL):
            return FeasibilityClass.UNBOUNDED_REGIME
    return FeasibilityClass.INTERIOR


def _costs(trajectory: PiecewiseTrajectory, mass: float) -> dict:
    je = cost_JE(trajectory, mass)
    return {
        "J_T": trajectory.tf,
        "J_D": cost_JD(trajectory),
        "J_E": je,
        "Ep_bar": je / trajectory.tf,
    }


def _infeasible(spec: TransportSpec, kind: ProtocolKind) -> ProtocolResult:
    return ProtocolResult(
        spec=spec,
        kind=kind,
        feasibility=FeasibilityClass.INFEASIBLE,
        trajectory=None,
        tf_min=spec.tf_min,
        diagnostics={"gamma": spec.gamma},
    )


def _bang_bang(spec: TransportSpec, tf: float, kind: ProtocolKind, feasibility: FeasibilityClass) -> ProtocolResult:
    # Acceleration chosen so the two arcs meet exactly at tf/2.
    a = 4.0 * spec.d / tf**2
    t1 = tf / 2.0
    traj = PiecewiseTrajectory(
        [
            Segment(0.0, t1, 0.0, (0.0, 0.0, a / 2.0)),
            Segment(t1, tf, tf, (spec.d, 0.0, -a / 2.0)),
        ],
        spec.omega0,
        metadata={"structure": Structure.BANG_BANG.value},
    )
    return ProtocolResult(
        spec=spec,
        kind=kind,
        feasibility=feasibility,
        trajectory=traj,
        switch_times=(t1,),
        v0=a * t1,
        costs=_costs(traj, spec.mass),
        tf_min=tf if spec.delta is None else spec.tf_min,
        diagnostics={"delta_effective": a / spec.omega0**2},
    )


def plan_time_optimal(spec: TransportSpec) -> ProtocolResult:
    """Bang-bang protocol, ``u = -delta`` then ``+delta``; ``tf`` is an output."""
    if spec.delta is None:
        raise ValueError("time-optimal planning needs delta")
    tf = spec.tf_min
    res = _bang_bang(spec.replace(tf=tf), tf, ProtocolKind.TIME_OPTIMAL, FeasibilityClass.DEGENERATE_BANG_BANG)
    ep = 0.5 * spec.mass * spec.omega0**2 * spec.delta**2
    res.diagnostics["Ep_constant"] = ep
    return res


def plan_displacement_optimal(spec: TransportSpec) -> ProtocolResult:
    """Bang-off-bang protocol minimising the integral of ``|u|`` at fixed ``tf``."""
    if spec.delta is None or spec.tf is None:
        raise ValueError("displacement-optimal planning needs tf and delta")
    kind = ProtocolKind.DISPLACEMENT_OPTIMAL
    margin = _gamma_margin(spec)
    if margin < 0:
        return _infeasible(spec, kind)
    if margin == 0:
        return _bang_bang(spec, spec.tf, kind, FeasibilityClass.DEGENERATE_BANG_BANG)

    w2, delta, tf, d = spec.omega0**2, spec.delta, spec.tf, spec.d
    a = w2 * delta
    root = sqrt(margin)
    v0 = a * tf / 2.0 * (1.0 - root)
    v0_rejected = a * tf / 2.0 * (1.0 + root)
    t1 = v0 / a
    t2 = d / v0 - v0 / a
    traj = PiecewiseTrajectory(
        [
            Segment(0.0, t1, 0.0, (0.0, 0.0, a / 2.0)),
            Segment(t1, t1 + t2, 0.0, (-(v0**2) / (2.0 * a), v0)),
            Segment(t1 + t2, tf, tf, (d, 0.0, -a / 2.0)),
        ],
        spec.omega0,
        metadata={"structure": Structure.BANG_OFF_BANG.value},
    )
    return ProtocolResult(
        spec=spec,
        kind=kind,
        feasibility=FeasibilityClass.INTERIOR,
        trajectory=traj,
        switch_times=(t1, t1 + t2),
        v0=v0,
        costs=_costs(traj, spec.mass),
        tf_min=spec.tf_min,
        diagnostics={"gamma": spec.gamma, "t1": t1, "t2": t2, "v0_rejected": v0_rejected},
    )


def _energy_unbounded(spec: TransportSpec) -> ProtocolResult:
    tf, d = spec.tf, spec.d
    traj = PiecewiseTrajectory(
        [Segment(0.0, tf, 0.0, (0.0, 0.0, 3.0 * d / tf**2, -2.0 * d / tf**3))],
        spec.omega0,
        metadata={"structure": Structure.LINEAR.value},
    )
    delta0 = 6.0 * d / (spec.omega0**2 * tf**2)
    return ProtocolResult(
        spec=spec,
        kind=ProtocolKind.ENERGY_OPTIMAL_UNBOUNDED,
        feasibility=FeasibilityClass.UNBOUNDED_REGIME,
        trajectory=traj,
        switch_times=(),
        v0=1.5 * d / tf,
        costs=_costs(traj, spec.mass),
        tf_min=None if spec.delta is None else spec.tf_min,
        diagnostics={"delta0": delta0, "c1": 12.0 * d / (spec.omega0**2 * tf**3), "c2": delta0},
    )


def _energy_bounded(spec: TransportSpec, margin: float) -> ProtocolResult:
    """Bang-linear-bang branch; valid for ``0 <= margin <= 1/3``.

    Usable at both ends of that interval, where it reduces to the bang-bang
    and the linear-ramp solutions respectively.
    """
    w2, delta, tf, d = spec.omega0**2, spec.delta, spec.tf, spec.d
    a = w2 * delta
    root = sqrt(3.0) * sqrt(margin)
    t1 = tf / 2.0 * (1.0 - root)
    t1_rejected = tf / 2.0 * (1.0 + root)
    t2 = tf - 2.0 * t1
    v0 = a * tf / 2.0 * (1.0 - sqrt(3.0) / 2.0 * sqrt(margin))
    segments = []
    if t1 > 0:
        segments.append(Segment(0.0, t1, 0.0, (0.0, 0.0, a / 2.0)))
    if t2 > 0:
        c1 = 2.0 * delta / t2
        c3 = (d - v0 * tf) / 2.0
        # Middle cubic written about tf/2: -(w2 c1/6) s^3 + v0 (s + tf/2) + c3.
        segments.append(Segment(t1, t1 + t2, tf / 2.0, (v0 * tf / 2.0 + c3, v0, 0.0, -w2 * c1 / 6.0)))
    else:
        c1 = float("inf")
    if t1 > 0:
        segments.append(Segment(t1 + t2, tf, tf, (d, 0.0, -a / 2.0)))
    traj = PiecewiseTrajectory(segments, spec.omega0, metadata={"structure": Structure.BANG_LINEAR_BANG.value})
    switches = tuple(t for t in (t1, t1 + t2) if 0.0 < t < tf)
    if t2 <= 0:
        switches = (tf / 2.0,)
    return ProtocolResult(
        spec=spec,
        kind=ProtocolKind.ENERGY_OPTIMAL_BOUNDED,
        feasibility=FeasibilityClass.INTERIOR,
        trajectory=traj,
        switch_times=switches,
        v0=v0,
        costs=_costs(traj, spec.mass),
        tf_min=spec.tf_min,
        diagnostics={
            "gamma": spec.gamma,
            "t1": t1,
            "t2": t2,
            "t1_rejected": t1_rejected,
            "c1": c1,
            "c2": c1 * tf / 2.0,
            "c3": (d - v0 * tf) / 2.0,
            "delta0": 6.0 * d / (w2 * tf**2),
        },
    )


def plan_energy_optimal(spec: TransportSpec) -> ProtocolResult:
    """Minimise the time-averaged potential energy ``mean(m omega0^2 u^2 / 2)``."""
    if spec.tf is None:
        raise ValueError("energy-optimal planning needs tf")
    if spec.delta is None:
        return _energy_unbounded(spec)
    kind = ProtocolKind.ENERGY_OPTIMAL_BOUNDED
    feasibility = classify_feasibility(spec, kind)
    if feasibility is FeasibilityClass.INFEASIBLE:
        return _infeasible(spec, kind)
    if feasibility is FeasibilityClass.DEGENERATE_BANG_BANG:
        return _bang_bang(spec, spec.tf, kind, feasibility)
    if feasibility is FeasibilityClass.UNBOUNDED_REGIME:
        return _energy_unbounded(spec)
    return _energy_bounded(spec, _gamma_margin(spec))


def plan_polynomial(spec: TransportSpec) -> ProtocolResult:
    """Quintic baseline wrapped as a result; it carries no optimality claim."""
    traj = polynomial_ansatz(spec)
    peak_u = 10.0 * spec.d / (sqrt(3.0) * spec.omega0**2 * spec.tf**2)
    diagnostics = {"peak_u": peak_u, "representation": traj.metadata["representation"]}
    if spec.delta is not None:
        diagnostics["bound_violated"] = bool(peak_u > spec.delta)
        feasibility = classify_feasibility(spec, ProtocolKind.POLYNOMIAL_ANSATZ)
    else:
        feasibility = FeasibilityClass.UNBOUNDED_REGIME
    return ProtocolResult(
        spec=spec,
        kind=ProtocolKind.POLYNOMIAL_ANSATZ,
        feasibility=feasibility,
        trajectory=traj,
        switch_times=(),
        v0=15.0 * spec.d / (8.0 * spec.tf),
        costs=_costs(traj, spec.mass),
        tf_min=None if spec.delta is None else spec.tf_min,
        diagnostics=diagnostics,
    )


PLANNERS = {
    "time": plan_time_optimal,
    "displacement": plan_displacement_optimal,
    "energy": plan_energy_optimal,
    "poly": plan_polynomial,
}


def plan(spec: TransportSpec, protocol: str) -> ProtocolResult:
    try:
        planner = PLANNERS[protocol]
    except KeyError:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {sorted(PLANNERS)}") from None
    return planner(spec)


# ---------------------------------------------------------------------------
# Pontryagin certificate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PmpCertificate:
    """Affine costate ``p2(t) = -c1 t + c2`` and its consistency checks.

    ``normalization`` is the value of ``p0`` the constants refer to. ``valid``
    needs the switching rule driven by ``p2`` to reproduce the planned
    control, the control Hamiltonian to stay constant, and the predicted
    switches to match the planned ones.
    """

    c1: float
    c2: float
    normalization: str
    structure: Structure
    predicted_switches: tuple[float, ...]
    valid: bool
    control_mismatch: float
    hamiltonian_spread: float

    def p2(self, t):
        return -self.c1 * np.asarray(t, dtype=float) + self.c2


def _structure_of(result: ProtocolResult) -> Structure:
    if result.kind is ProtocolKind.POLYNOMIAL_ANSATZ:
        raise UnsupportedProtocolError("the polynomial ansatz carries no optimality certificate")
    if result.trajectory is None:
        raise ValueError("cannot certify an infeasible result")
    if result.feasibility is FeasibilityClass.DEGENERATE_BANG_BANG or result.kind is ProtocolKind.TIME_OPTIMAL:
        return Structure.BANG_BANG
    if result.kind is ProtocolKind.DISPLACEMENT_OPTIMAL:
        return Structure.BANG_OFF_BANG
    if result.kind is ProtocolKind.ENERGY_OPTIMAL_UNBOUNDED:
        return Structure.LINEAR
    return Structure.BANG_LINEAR_BANG


def pmp_certificate(result: ProtocolResult, samples: int = 4001, tol: float = 1e-9) -> PmpCertificate:
    """Reconstruct the costate from the switch times and test it against the plan."""
    structure = _structure_of(result)
    traj = result.trajectory
    spec = result.spec
    tf, w2 = traj.tf, spec.omega0**2
    switches = tuple(result.switch_times)
    # Bound actually met by the bang arcs (equal to delta up to rounding).
    delta = abs(traj.control_limit(0.0))

    if structure is Structure.BANG_BANG:
        # p0 = -1, H = 0 (free final time); u = -delta for p2 > 0.
        (t1,) = switches
        c2 = 1.0 / (w2 * delta)
        c1 = c2 / t1
        p0, normalization = -1.0, "p0=-1"

        def rule(p2):
            return np.where(p2 > 0, -delta, delta)

        def running_cost(u):
            return np.ones_like(u)

        predicted = (c2 / c1,)
    elif structure is Structure.BANG_OFF_BANG:
        # p0 = -omega0^2; p2 = +1 at t1 and -1 at t1 + t2.
        t1, t12 = switches
        c1 = 2.0 / (t12 - t1)
        c2 = 1.0 + c1 * t1
        p0, normalization = -w2, "p0=-omega0^2"

        def rule(p2):
            return np.where(p2 > 1, -delta, np.where(p2 < -1, delta, 0.0))

        def running_cost(u):
            return np.abs(u)

        predicted = ((c2 - 1.0) / c1, (c2 + 1.0) / c1)
    else:
        # p0 = -1/m; u = -p2 clipped to [-delta, delta].
        if structure is Structure.LINEAR:
            c1 = 12.0 * spec.d / (w2 * tf**3)
            c2 = 6.0 * spec.d / (w2 * tf**2)
            bound = np.inf
        else:
            t1, t12 = switches
            c1 = 2.0 * delta / (t12 - t1)
            c2 = c1 * tf / 2.0
            bound = delta
        p0, normalization = -1.0 / spec.mass, "p0=-1/m"

        def rule(p2):
            return np.clip(-p2, -bound, bound)

        def running_cost(u):
            return 0.5 * spec.mass * w2 * u**2

        predicted = () if structure is Structure.LINEAR else ((c2 - bound) / c1, (c2 + bound) / c1)

    t = np.linspace(0.0, tf, samples)[1:-1]
    near = np.zeros_like(t, dtype=bool)
    for s in switches:
        near |= np.abs(t - s) <= 1e-9 * tf
    t = t[~near]
    u = traj.control_limit(t)
    p2 = -c1 * t + c2
    u_scale = delta if np.isfinite(delta) and delta > 0 else np.max(np.abs(u))
    mismatch = float(np.max(np.abs(rule(p2) - u)) / u_scale)

    x2 = traj.velocity(t)
    hamiltonian = p0 * running_cost(u) + c1 * x2 - p2 * w2 * u
    h_scale = np.max(np.abs(c1 * x2)) + np.max(np.abs(p2 * w2 * u)) + 1e-300
    spread = float((np.max(hamiltonian) - np.min(hamiltonian)) / h_scale)
    if structure is Structure.BANG_BANG:
        spread = max(spread, float(np.max(np.abs(hamiltonian)) / h_scale))

    expected_count = {Structure.BANG_BANG: 1, Structure.BANG_OFF_BANG: 2, Structure.BANG_LINEAR_BANG: 2, Structure.LINEAR: 0}[structure]
    switches_ok = len(predicted) == len(switches) == expected_count and all(
        abs(p - s) <= tol * tf for p, s in zip(predicted, switches)
    )
    valid = bool(switches_ok and mismatch <= tol and spread <= tol and np.isfinite(c1) and c1 > 0)
    return PmpCertificate(
        c1=float(c1),
        c2=float(c2),
        normalization=normalization,
        structure=structure,
        predicted_switches=tuple(float(p) for p in predicted),
        valid=valid,
        control_mismatch=mismatch,
        hamiltonian_spread=spread,
    )
