"""Problem statement and exact piecewise-polynomial trajectories.

A trajectory is the centre-of-mass path ``q_c(t)`` of the transported atom,
stored segment by segment as polynomials in ``(t - center)``. Everything
else (the control ``u`` and the trap path ``q0``) is derived from it through
Newton's equation in the moving harmonic trap::

    q_c'' + omega0**2 * (q_c - q0) = 0   =>   u = q_c - q0 = -q_c'' / omega0**2
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import isfinite
from typing import Literal, Sequence

import numpy as np

Side = Literal["left", "right"]


@dataclass(frozen=True)
class TransportSpec:
    """Physical transport problem in SI units.

    ``tf`` may be omitted for pure time minimisation and ``delta`` (the bound
    on the relative displacement ``|u|``) for unbounded energy planning.
    """

    mass: float
    omega0: float
    d: float
    tf: float | None = None
    delta: float | None = None

    def __post_init__(self):
        for name in ("mass", "omega0", "d"):
            value = getattr(self, name)
            if not (isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")
        for name in ("tf", "delta"):
            value = getattr(self, name)
            if value is not None and not (isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive when given, got {value!r}")

    @property
    def gamma(self) -> float:
        """Feasibility group ``4 d / (omega0^2 tf^2 delta)``."""
        if self.tf is None or self.delta is None:
            raise ValueError("gamma needs both tf and delta")
        return 4.0 * self.d / (self.omega0**2 * self.tf**2 * self.delta)

    @property
    def tf_min(self) -> float:
        """Shortest transport time compatible with ``|u| <= delta``."""
        if self.delta is None:
            raise ValueError("tf_min needs delta")
        return 2.0 / self.omega0 * np.sqrt(self.d / self.delta)

    def replace(self, **changes) -> "TransportSpec":
        values = dict(mass=self.mass, omega0=self.omega0, d=self.d, tf=self.tf, delta=self.delta)
        values.update(changes)
        return TransportSpec(**values)


@dataclass(frozen=True)
class StateVector:
    x1: float
    x2: float


@dataclass(frozen=True)
class ControlSample:
    t: float
    u: float


@dataclass(frozen=True)
class Segment:
    """One polynomial piece, ``q_c(t) = sum_k coeffs[k] * (t - center)**k``."""

    start: float
    end: float
    center: float
    coeffs: tuple[float, ...]

    def polynomial(self, order: int = 0) -> np.polynomial.Polynomial:
        """Derivative of the given order, still in the variable ``t - center``."""
        return np.polynomial.Polynomial(self.coeffs).deriv(order)


class PiecewiseTrajectory:
    """Centre-of-mass trajectory made of polynomial segments on ``[0, tf]``.

    Position and velocity are continuous; the acceleration (and therefore the
    control) may jump at breakpoints. At an interior breakpoint the
    right-hand segment is used unless ``side="left"`` is requested; at ``tf``
    the last segment is always used.
    """

    def __init__(self, segments: Sequence[Segment], omega0: float, metadata: dict | None = None):
        if not segments:
            raise ValueError("a trajectory needs at least one segment")
        segments = tuple(segments)
        if segments[0].start != 0.0:
            raise ValueError("trajectory must start at t = 0")
        for a, b in zip(segments, segments[1:]):
            if a.end != b.start:
                raise ValueError("segments must be contiguous")
        if any(s.end <= s.start for s in segments):
            raise ValueError("segments must have positive length")
        self._segments = segments
        self._omega0 = float(omega0)
        self._metadata = dict(metadata or {})

        degree = max(len(s.coeffs) for s in segments)
        coeffs = np.zeros((len(segments), degree))
        for i, s in enumerate(segments):
            coeffs[i, : len(s.coeffs)] = s.coeffs
        derivs = [coeffs]
        for _ in range(2):
            c = derivs[-1]
            dc = np.zeros_like(c)
            dc[:, :-1] = c[:, 1:] * np.arange(1, degree)
            derivs.append(dc)
        for arr in derivs:
            arr.setflags(write=False)
        self._coeffs = derivs
        self._centers = np.array([s.center for s in segments])
        self._breaks = np.array([s.start for s in segments] + [segments[-1].end])
        self._centers.setflags(write=False)
        self._breaks.setflags(write=False)

    @property
    def segments(self) -> tuple[Segment, ...]:
        return self._segments

    @property
    def omega0(self) -> float:
        return self._omega0

    @property
    def metadata(self) -> dict:
        return dict(self._metadata)

    @property
    def breakpoints(self) -> np.ndarray:
        return self._breaks

    @property
    def tf(self) -> float:
        return float(self._breaks[-1])

    @property
    def d(self) -> float:
        return float(self.position(self.tf))

    def __repr__(self):
        return f"PiecewiseTrajectory(segments={len(self._segments)}, tf={self.tf:.6g}, omega0={self._omega0:.6g})"

    def _index(self, t: np.ndarray, side: Side) -> np.ndarray:
        inner = self._breaks[1:-1]
        if side == "right":
            return np.searchsorted(inner, t, side="right")
        if side == "left":
            return np.searchsorted(inner, t, side="left")
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")

    def _derivative(self, t, order: int, side: Side):
        tt = np.asarray(t, dtype=float)
        idx = self._index(tt, side)
        c = self._coeffs[order][idx]
        x = tt - self._centers[idx]
        out = np.zeros_like(x)
        for k in range(c.shape[-1] - 1, -1, -1):
            out = out * x + c[..., k]
        return out if np.ndim(t) else float(out)

    def position(self, t, side: Side = "right"):
        return self._derivative(t, 0, side)

    def velocity(self, t, side: Side = "right"):
        return self._derivative(t, 1, side)

    def acceleration(self, t, side: Side = "right"):
        return self._derivative(t, 2, side)

    def control_limit(self, t, side: Side = "right"):
        """One-sided limit of ``u = -q_c''/omega0^2`` on ``[0, tf]``, edges included."""
        return -self._derivative(t, 2, side) / self._omega0**2

    def trap_limit(self, t, side: Side = "right"):
        """One-sided limit of the trap centre ``q_c - u`` on ``[0, tf]``."""
        return self._derivative(t, 0, side) - self.control_limit(t, side)

    def control(self, t, side: Side = "right"):
        """Relative displacement; zero for ``t <= 0`` and ``t >= tf``."""
        tt = np.asarray(t, dtype=float)
        u = self.control_limit(np.clip(tt, 0.0, self.tf), side)
        u = np.where((tt <= 0.0) | (tt >= self.tf), 0.0, u)
        return u if np.ndim(t) else float(u)

    def trap_position(self, t, side: Side = "right"):
        """Trap centre ``q0 = q_c - u``; 0 before the transport and ``d`` after it."""
        tt = np.asarray(t, dtype=float)
        q0 = self.trap_limit(np.clip(tt, 0.0, self.tf), side)
        q0 = np.where(tt <= 0.0, 0.0, q0)
        q0 = np.where(tt >= self.tf, self.d, q0)
        return q0 if np.ndim(t) else float(q0)

    def control_polynomials(self) -> list[tuple[float, float, np.polynomial.Polynomial]]:
        """Per segment ``(start, end, u)`` with ``u`` a polynomial in plain ``t``."""
        out = []
        for s in self._segments:
            shift = np.polynomial.Polynomial([-s.center, 1.0])
            u = -s.polynomial(2)(shift) / self._omega0**2
            out.append((s.start, s.end, u))
        return out

    def velocity_polynomials(self) -> list[tuple[float, float, np.polynomial.Polynomial]]:
        out = []
        for s in self._segments:
            shift = np.polynomial.Polynomial([-s.center, 1.0])
            out.append((s.start, s.end, s.polynomial(1)(shift)))
        return out


def _check_domain(trajectory: PiecewiseTrajectory, t) -> None:
    tt = np.asarray(t, dtype=float)
    tol = 1e-15 * trajectory.tf
    if np.any(tt < -tol) or np.any(tt > trajectory.tf + tol) or np.any(~np.isfinite(tt)):
        raise ValueError(f"t outside [0, {trajectory.tf!r}]")


def evaluate(trajectory: PiecewiseTrajectory, t):
    """Return ``(q_c, q_c', q_c'')`` at ``t`` in ``[0, tf]``."""
    _check_domain(trajectory, t)
    return trajectory.position(t), trajectory.velocity(t), trajectory.acceleration(t)


def control_of(trajectory: PiecewiseTrajectory, t):
    _check_domain(trajectory, t)
    return trajectory.control(t)


def trap_trajectory(trajectory: PiecewiseTrajectory, t):
    return trajectory.trap_position(t)


def polynomial_ansatz(spec: TransportSpec) -> PiecewiseTrajectory:
    """Quintic ``d (10 s^3 - 15 s^4 + 6 s^5)``, ``s = t / tf``.

    The lowest-degree polynomial meeting zero position, velocity and
    acceleration at both ends relative to the endpoints ``0`` and ``d``.
    """
    if spec.tf is None:
        raise ValueError("polynomial ansatz needs tf")
    tf, d = spec.tf, spec.d
    coeffs = (0.0, 0.0, 0.0, 10 * d / tf**3, -15 * d / tf**4, 6 * d / tf**5)
    return PiecewiseTrajectory(
        [Segment(0.0, tf, 0.0, coeffs)],
        spec.omega0,
        metadata={"representation": "exact-quintic"},
    )


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    scale: float
    tol: float

    @property
    def ok(self) -> bool:
        return abs(self.value) <= self.tol * self.scale


@dataclass(frozen=True)
class BoundaryVerdict:
    checks: tuple[Check, ...]
    edge_jumps: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.ok]

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "residual": c.value, "scale": c.scale, "tol": c.tol, "ok": c.ok}
                for c in self.checks
            ],
            "edge_jumps": self.edge_jumps,
        }


def check_boundary_conditions(
    trajectory: PiecewiseTrajectory, spec: TransportSpec, tol: float = 1e-12
) -> BoundaryVerdict:
    """Verify start/end position and velocity and interior continuity.

    Positions are scaled by ``d`` and velocities by ``d / tf``. Acceleration
    values at the edges are reported in ``edge_jumps`` but never fail the
    check: a finite jump of the trap at ``t = 0`` and ``t = tf`` is allowed.
    """
    tf = trajectory.tf
    d = spec.d
    vscale = d / tf
    checks = [
        Check("initial_position", trajectory.position(0.0), d, tol),
        Check("initial_velocity", trajectory.velocity(0.0), vscale, tol),
        Check("final_position", trajectory.position(tf) - d, d, tol),
        Check("final_velocity", trajectory.velocity(tf), vscale, tol),
    ]
    if spec.tf is not None:
        checks.append(Check("duration", tf - spec.tf, spec.tf, tol))
    for tau in trajectory.breakpoints[1:-1]:
        checks.append(
            Check(
                f"position_continuity@{tau:.9g}",
                trajectory.position(tau, "right") - trajectory.position(tau, "left"),
                d,
                tol,
            )
        )
        checks.append(
            Check(
                f"velocity_continuity@{tau:.9g}",
                trajectory.velocity(tau, "right") - trajectory.velocity(tau, "left"),
                vscale,
                tol,
            )
        )
    edge_jumps = {
        "acceleration_at_start": trajectory.acceleration(0.0),
        "acceleration_at_end": trajectory.acceleration(tf),
        "u_at_start": -trajectory.acceleration(0.0) / trajectory.omega0**2,
        "u_at_end": -trajectory.acceleration(tf) / trajectory.omega0**2,
    }
    return BoundaryVerdict(tuple(checks), edge_jumps)
