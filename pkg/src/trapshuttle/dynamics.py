"""Classical simulation, cost functionals and transport-mode energies."""

from __future__ import annotations

from dataclasses import dataclass
from math import isfinite, sqrt
from typing import Callable

import numpy as np
from scipy.integrate import simpson

from .core import PiecewiseTrajectory, StateVector, TransportSpec

HBAR = 1.054571817e-34  # J s
RB87_MASS = 1.44316e-25  # kg


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} at t={t!r}")
        self.t = t


def aligned_grid(tf: float, steps: int, breakpoints=()) -> tuple[np.ndarray, np.ndarray]:
    """Time grid of about ``steps`` intervals in which every breakpoint is a node.

    Each piece between consecutive breakpoints gets an even number (>= 2) of
    equal steps, so no step straddles a discontinuity and composite Simpson
    applies piecewise. Returns ``(times, piece_starts)`` where
    ``piece_starts`` are node indices of the breakpoints, ``0`` and the last
    node included.
    """
    knots = sorted({0.0, float(tf), *(float(b) for b in breakpoints if 0.0 < b < tf)})
    times = [np.array([0.0])]
    starts = [0]
    count = 0
    for a, b in zip(knots, knots[1:]):
        n = max(2, 2 * int(round(steps * (b - a) / tf / 2.0)))
        piece = np.linspace(a, b, n + 1)[1:]
        times.append(piece)
        count += n
        starts.append(count)
    return np.concatenate(times), np.array(starts)


def _trap_sampler(trap) -> Callable[[np.ndarray, str], np.ndarray]:
    if hasattr(trap, "trap_limit"):
        return lambda t, side: np.asarray(trap.trap_limit(t, side), dtype=float)
    if hasattr(trap, "trajectory") and hasattr(trap.trajectory, "trap_limit"):
        return lambda t, side: np.asarray(trap.trajectory.trap_limit(t, side), dtype=float)
    if callable(trap):
        # One-sided limits of an arbitrary callable: nudge by one ulp.
        def sample(t, side):
            direction = np.inf if side == "right" else -np.inf
            return np.array([float(trap(x)) for x in np.nextafter(np.atleast_1d(t), direction)])

        return sample
    raise TypeError("trap must be a callable t -> q0 or a trajectory")


@dataclass(frozen=True)
class SimulationRecord:
    """Sampled result of :func:`simulate`.

    ``controls`` and ``trap_positions`` hold right-hand limits at each node
    (left-hand at ``tf``); ``controls_left`` holds the left-hand limits
    needed for quadrature across jumps.
    """

    spec: TransportSpec
    times: np.ndarray
    states: np.ndarray  # shape (n, 2): x1 = q_c, x2 = q_c'
    controls: np.ndarray
    controls_left: np.ndarray
    trap_positions: np.ndarray
    Ep_series: np.ndarray
    final_excitation: float
    piece_starts: np.ndarray

    def state(self, i: int) -> StateVector:
        return StateVector(float(self.states[i, 0]), float(self.states[i, 1]))


def simulate(spec: TransportSpec, trap, steps: int = 10_000, tf: float | None = None, breakpoints=None) -> SimulationRecord:
    """Integrate ``x1' = x2, x2' = -omega0^2 (x1 - q0(t))`` from rest with RK4.

    ``trap`` is a trajectory (anything with ``trap_limit(t, side)``), a
    planner result, or a plain callable. Within each step the trap is
    sampled from the inside of the step, so jumps at breakpoints never enter
    a stage.
    """
    if steps < 100:
        raise ValueError("steps must be at least 100")
    if tf is None:
        tf = spec.tf if spec.tf is not None else getattr(trap, "tf", None)
    if tf is None:
        raise ValueError("simulation horizon unknown: give spec.tf or tf")
    if breakpoints is None:
        owner = getattr(trap, "trajectory", trap)
        breakpoints = getattr(owner, "breakpoints", ())
    sample = _trap_sampler(trap)
    times, starts = aligned_grid(tf, steps, breakpoints)
    t0, t1 = times[:-1], times[1:]
    h = t1 - t0
    q_start = sample(t0, "right")
    q_mid = sample(t0 + h / 2.0, "right")
    q_end = sample(t1, "left")
    for arr, where in ((q_start, t0), (q_mid, t0 + h / 2.0), (q_end, t1)):
        bad = ~np.isfinite(arr)
        if bad.any():
            raise IntegrationError("non-finite trap position", float(where[np.argmax(bad)]))

    w2 = spec.omega0**2
    n = len(times)
    x1 = np.empty(n)
    x2 = np.empty(n)
    a, b = 0.0, 0.0
    x1[0], x2[0] = a, b
    for i in range(n - 1):
        dt = h[i]
        qa, qm, qe = q_start[i], q_mid[i], q_end[i]
        k1a, k1b = b, -w2 * (a - qa)
        k2a, k2b = b + 0.5 * dt * k1b, -w2 * (a + 0.5 * dt * k1a - qm)
        k3a, k3b = b + 0.5 * dt * k2b, -w2 * (a + 0.5 * dt * k2a - qm)
        k4a, k4b = b + dt * k3b, -w2 * (a + dt * k3a - qe)
        a += dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        b += dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        if not (isfinite(a) and isfinite(b)):
            raise IntegrationError("state diverged", float(t1[i]))
        x1[i + 1], x2[i + 1] = a, b

    q_right = np.append(q_start, q_end[-1])
    q_left = np.insert(q_end, 0, q_start[0])
    u = x1 - q_right
    u_left = x1 - q_left
    m = spec.mass
    d = spec.d
    excitation = 0.5 * m * x2[-1] ** 2 + 0.5 * m * w2 * (x1[-1] - d) ** 2
    return SimulationRecord(
        spec=spec,
        times=times,
        states=np.column_stack([x1, x2]),
        controls=u,
        controls_left=u_left,
        trap_positions=q_right,
        Ep_series=0.5 * m * w2 * u**2,
        final_excitation=float(excitation),
        piece_starts=starts,
    )


def _record_integral(record: SimulationRecord, f: Callable[[np.ndarray], np.ndarray]) -> float:
    total = 0.0
    s = record.piece_starts
    for i, j in zip(s, s[1:]):
        y = f(record.controls[i : j + 1].copy())
        y[-1] = f(record.controls_left[j : j + 1])[0]
        total += simpson(y, x=record.times[i : j + 1])
    return float(total)


def _split_at_roots(a: float, b: float, poly: np.polynomial.Polynomial) -> list[float]:
    pts = [a, b]
    if poly.degree() > 0:
        for r in poly.roots():
            if abs(r.imag) < 1e-12 * max(1.0, abs(r.real)) and a < r.real < b:
                pts.append(float(r.real))
    return sorted(pts)


def cost_JT(obj) -> float:
    """Transport time."""
    if isinstance(obj, SimulationRecord):
        return float(obj.times[-1])
    return float(getattr(obj, "trajectory", obj).tf)


def cost_JD(obj) -> float:
    """Integral of ``|u|`` over ``(0, tf)``: exact per segment, Simpson on records."""
    if isinstance(obj, SimulationRecord):
        return _record_integral(obj, np.abs)
    traj: PiecewiseTrajectory = getattr(obj, "trajectory", obj)
    total = 0.0
    for a, b, u in traj.control_polynomials():
        anti = u.integ()
        pts = _split_at_roots(a, b, u)
        for lo, hi in zip(pts, pts[1:]):
            total += abs(anti(hi) - anti(lo))
    return float(total)


def cost_JE(obj, mass: float | None = None) -> float:
    """Integral of ``m omega0^2 u^2 / 2`` over ``(0, tf)``."""
    if isinstance(obj, SimulationRecord):
        m = obj.spec.mass if mass is None else mass
        return 0.5 * m * obj.spec.omega0**2 * _record_integral(obj, np.square)
    if mass is None:
        mass = obj.spec.mass
    traj: PiecewiseTrajectory = getattr(obj, "trajectory", obj)
    total = 0.0
    for a, b, u in traj.control_polynomials():
        anti = (u * u).integ()
        total += anti(b) - anti(a)
    return float(0.5 * mass * traj.omega0**2 * total)


def mean_potential_energy(obj, mass: float | None = None) -> float:
    """Time average ``J_E / tf``."""
    return cost_JE(obj, mass) / cost_JT(obj)


@dataclass(frozen=True)
class EnergyReport:
    n: int
    internal: float
    Ec: float
    Ep: float
    mean_potential: float
    Ep_bar: float


def energy_report(trajectory: PiecewiseTrajectory, spec: TransportSpec, n: int, t: float, hbar: float = HBAR) -> EnergyReport:
    """Instantaneous energies of transport mode ``n`` at time ``t``.

    ``Ep`` uses the interior branch of ``u`` also at ``t = 0`` and ``t = tf``.
    """
    if n < 0:
        raise ValueError("mode index must be non-negative")
    m, w = spec.mass, spec.omega0
    u = trajectory.control_limit(t)
    internal = hbar * w * (n + 0.5)
    ep = 0.5 * m * w**2 * u**2
    return EnergyReport(
        n=n,
        internal=internal,
        Ec=0.5 * m * trajectory.velocity(t) ** 2,
        Ep=ep,
        mean_potential=0.5 * hbar * w * (n + 0.5) + ep,
        Ep_bar=mean_potential_energy(trajectory, m),
    )


def lr_phase(trajectory: PiecewiseTrajectory, spec: TransportSpec, n: int, t: float, hbar: float = HBAR) -> float:
    """Lewis-Riesenfeld phase ``-(1/hbar) * integral_0^t (E_n + m q_c'^2 / 2)``."""
    if not 0.0 <= t <= trajectory.tf:
        raise ValueError(f"t outside [0, {trajectory.tf!r}]")
    kinetic = 0.0
    for a, b, v in trajectory.velocity_polynomials():
        if a >= t:
            break
        anti = (v * v).integ()
        kinetic += anti(min(b, t)) - anti(a)
    level = (n + 0.5) * hbar * spec.omega0
    return float(-(level * t + 0.5 * spec.mass * kinetic) / hbar)


@dataclass(frozen=True)
class Scales:
    """Units with ``m = hbar = omega0 = 1``."""

    length: float
    time: float
    mass: float
    energy: float
    hbar: float


def nondimensionalize(spec: TransportSpec, hbar: float = HBAR) -> tuple[TransportSpec, Scales]:
    length = sqrt(hbar / (spec.mass * spec.omega0))
    scales = Scales(length=length, time=1.0 / spec.omega0, mass=spec.mass, energy=hbar * spec.omega0, hbar=hbar)
    scaled = TransportSpec(
        mass=1.0,
        omega0=1.0,
        d=spec.d / length,
        tf=None if spec.tf is None else spec.tf / scales.time,
        delta=None if spec.delta is None else spec.delta / length,
    )
    return scaled, scales


def dimensionalize(scaled: TransportSpec, scales: Scales) -> TransportSpec:
    return TransportSpec(
        mass=scaled.mass * scales.mass,
        omega0=scaled.omega0 / scales.time,
        d=scaled.d * scales.length,
        tf=None if scaled.tf is None else scaled.tf * scales.time,
        delta=None if scaled.delta is None else scaled.delta * scales.length,
    )
