from math import sqrt

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from trapshuttle import (
    RB87_MASS,
    FeasibilityClass,
    ProtocolKind,
    Structure,
    TransportSpec,
    UnsupportedProtocolError,
    check_boundary_conditions,
    classify_feasibility,
    plan,
    plan_displacement_optimal,
    plan_energy_optimal,
    plan_polynomial,
    plan_time_optimal,
    pmp_certificate,
)
from trapshuttle.protocols import _energy_bounded

from .conftest import D, DELTA, HANSCH_DELTA, OMEGA0, TF

# Frozen reference values, evaluated once at 40 significant digits.
TF_MIN_BANG = 0.020131684841794814014
V0_BANG = 0.15895341225273761975
EP_BANG = 1.8231575407969432044e-28
EP_HANSCH_DISPLACEMENT = 3.1194171602192251357e-29
EP_HANSCH_ENERGY = 2.8781294031615301087e-29
EP_UNBOUNDED_30MS = 2.7728152535282001206e-29
JD_HANSCH = 1.6211389382774043431e-6

def spec_at(tf, delta, d=D, omega0=OMEGA0):
    return TransportSpec(mass=RB87_MASS, omega0=omega0, d=d, tf=tf, delta=delta)


def sample_times(tf, n=401):
    return np.linspace(0.0, tf, n)


# --- time-optimal ---------------------------------------------------------


def test_time_optimal_reference(bang_spec):
    res = plan_time_optimal(bang_spec)
    assert res.tf == pytest.approx(TF_MIN_BANG, rel=1e-14)
    assert res.tf == pytest.approx(2 / OMEGA0 * sqrt(10), rel=1e-14)
    assert res.switch_times[0] == pytest.approx(res.tf / 2, rel=1e-15)
    assert res.v0 == pytest.approx(V0_BANG, rel=1e-12)
    assert res.costs["Ep_bar"] == pytest.approx(EP_BANG, rel=1e-12)
    assert res.diagnostics["Ep_constant"] == pytest.approx(8 * RB87_MASS * D**2 / (OMEGA0**2 * res.tf**4), rel=1e-12)
    assert res.costs["J_D"] == pytest.approx(DELTA * res.tf, rel=1e-12)
    assert res.costs["J_T"] == res.tf


def test_time_optimal_ignores_tf_and_needs_delta(bang_spec):
    assert plan_time_optimal(bang_spec.replace(tf=1.0)).tf == pytest.approx(TF_MIN_BANG, rel=1e-14)
    with pytest.raises(ValueError):
        plan_time_optimal(bang_spec.replace(delta=None))


def test_time_optimal_second_arc(bang_spec):
    res = plan_time_optimal(bang_spec)
    tf = res.tf
    t = np.linspace(tf / 2, tf, 40)[1:-1]
    expected = D - OMEGA0**2 * DELTA * (t - tf) ** 2 / 2
    assert np.allclose(res.trajectory.position(t), expected, rtol=1e-12, atol=1e-15 * D)


# --- displacement-optimal ---------------------------------------------------


def test_hansch_case(hansch):
    res = plan_displacement_optimal(hansch)
    t1, t12 = res.switch_times
    assert res.feasibility is FeasibilityClass.INTERIOR
    assert res.v0 == pytest.approx(0.08, rel=1e-12)
    assert t1 == pytest.approx(0.01, rel=1e-12)
    assert t12 - t1 == pytest.approx(0.01, rel=1e-12)
    assert res.trajectory.position(t1) == pytest.approx(0.4e-3, rel=1e-12)
    assert res.trajectory.position(t12) == pytest.approx(1.2e-3, rel=1e-12)
    assert res.costs["Ep_bar"] == pytest.approx(EP_HANSCH_DISPLACEMENT, rel=1e-12)
    assert res.costs["J_D"] == pytest.approx(JD_HANSCH, rel=1e-12)
    # The discarded root of the peak-velocity quadratic.
    assert res.diagnostics["v0_rejected"] == pytest.approx(OMEGA0**2 * HANSCH_DELTA * TF - 0.08, rel=1e-12)


def test_hansch_coast_segment(hansch):
    res = plan_displacement_optimal(hansch)
    t1, t12 = res.switch_times
    t = np.linspace(t1, t12, 20)
    a = OMEGA0**2 * HANSCH_DELTA
    assert np.allclose(res.trajectory.position(t), res.v0 * t - res.v0**2 / (2 * a), rtol=1e-12)
    assert np.all(res.trajectory.control_limit(t[:-1]) == 0.0)


def test_displacement_infeasible_carries_tf_min(hansch):
    spec = hansch.replace(tf=0.9 * hansch.tf_min)
    res = plan_displacement_optimal(spec)
    assert res.feasibility is FeasibilityClass.INFEASIBLE
    assert res.trajectory is None and not res.feasible
    assert res.tf_min == pytest.approx(2 / OMEGA0 * sqrt(D / HANSCH_DELTA), rel=1e-14)


def test_displacement_requires_tf_and_delta(hansch):
    with pytest.raises(ValueError):
        plan_displacement_optimal(hansch.replace(tf=None))
    with pytest.raises(ValueError):
        plan_displacement_optimal(hansch.replace(delta=None))


# --- energy-optimal -------------------------------------------------------


def test_energy_unbounded(unbounded):
    res = plan_energy_optimal(unbounded)
    assert res.kind is ProtocolKind.ENERGY_OPTIMAL_UNBOUNDED
    assert res.feasibility is FeasibilityClass.UNBOUNDED_REGIME
    assert res.costs["Ep_bar"] == pytest.approx(EP_UNBOUNDED_30MS, rel=1e-12)
    assert res.diagnostics["delta0"] == pytest.approx(6 * D / (OMEGA0**2 * TF**2), rel=1e-14)
    t = sample_times(TF)[1:-1]
    u = res.trajectory.control_limit(t)
    assert np.allclose(u, 6 * D / (OMEGA0**2 * TF**2) * (2 * t / TF - 1), rtol=1e-10, atol=1e-14 * D)
    q = res.trajectory.position(t)
    assert np.allclose(q, D * t**2 / TF**2 * (3 - 2 * t / TF), rtol=1e-12)


def test_energy_bounded_hansch(hansch):
    res = plan_energy_optimal(hansch)
    assert res.kind is ProtocolKind.ENERGY_OPTIMAL_BOUNDED
    assert res.costs["Ep_bar"] == pytest.approx(EP_HANSCH_ENERGY, rel=1e-12)
    margin = 1 - hansch.gamma
    t1 = TF / 2 * (1 - sqrt(3) * sqrt(margin))
    assert res.switch_times[0] == pytest.approx(t1, rel=1e-12)
    assert res.switch_times[1] == pytest.approx(TF - t1, rel=1e-12)
    assert res.diagnostics["t1_rejected"] == pytest.approx(TF - t1, rel=1e-12)
    v0 = OMEGA0**2 * HANSCH_DELTA * TF / 2 * (1 - sqrt(3) / 2 * sqrt(margin))
    assert res.v0 == pytest.approx(v0, rel=1e-12)
    # Interior control is the linear ramp c1 (t - tf/2).
    t = np.linspace(res.switch_times[0], res.switch_times[1], 50)[1:-1]
    c1 = res.diagnostics["c1"]
    assert np.allclose(res.trajectory.control_limit(t), c1 * (t - TF / 2), rtol=1e-10, atol=1e-14 * D)


def test_energy_boundaries_exact():
    lin = spec_at(TF, 6 * D / (OMEGA0**2 * TF**2))
    assert classify_feasibility(lin, ProtocolKind.ENERGY_OPTIMAL_BOUNDED) is FeasibilityClass.UNBOUNDED_REGIME
    br = _energy_bounded(lin, 1 - lin.gamma)
    assert br.diagnostics["t1"] == pytest.approx(0.0, abs=1e-12 * TF)
    bb_spec = spec_at(TF, 4 * D / (OMEGA0**2 * TF**2))
    res = plan_energy_optimal(bb_spec)
    assert res.feasibility is FeasibilityClass.DEGENERATE_BANG_BANG
    assert res.switch_times == pytest.approx((TF / 2,), rel=1e-14)
    br = _energy_bounded(bb_spec, 0.0)
    assert br.diagnostics["t1"] == pytest.approx(TF / 2, rel=1e-14)
    assert br.diagnostics["t2"] == 0.0


def test_energy_requires_tf(hansch):
    with pytest.raises(ValueError):
        plan_energy_optimal(hansch.replace(tf=None))


# --- polynomial baseline --------------------------------------------------


def test_polynomial_result(hansch):
    res = plan_polynomial(hansch)
    assert res.kind is ProtocolKind.POLYNOMIAL_ANSATZ
    assert res.v0 == pytest.approx(15 * D / (8 * TF), rel=1e-14)
    peak = 10 * D / (sqrt(3) * OMEGA0**2 * TF**2)
    assert res.diagnostics["peak_u"] == pytest.approx(peak, rel=1e-14)
    assert res.diagnostics["bound_violated"] is bool(peak > HANSCH_DELTA)


def test_plan_dispatch(hansch):
    assert plan(hansch, "poly").kind is ProtocolKind.POLYNOMIAL_ANSATZ
    with pytest.raises(ValueError):
        plan(hansch, "fastest")


# --- feasibility --------------------------------------------------------------


@pytest.mark.parametrize(
    "gamma, kind, expected",
    [
        (1.2, ProtocolKind.DISPLACEMENT_OPTIMAL, FeasibilityClass.INFEASIBLE),
        (1.0, ProtocolKind.DISPLACEMENT_OPTIMAL, FeasibilityClass.DEGENERATE_BANG_BANG),
        (1.0 + 5e-13, ProtocolKind.DISPLACEMENT_OPTIMAL, FeasibilityClass.DEGENERATE_BANG_BANG),
        (1.0 + 1e-9, ProtocolKind.DISPLACEMENT_OPTIMAL, FeasibilityClass.INFEASIBLE),
        (0.9, ProtocolKind.DISPLACEMENT_OPTIMAL, FeasibilityClass.INTERIOR),
        (0.5, ProtocolKind.DISPLACEMENT_OPTIMAL, FeasibilityClass.INTERIOR),
        (2 / 3, ProtocolKind.ENERGY_OPTIMAL_BOUNDED, FeasibilityClass.UNBOUNDED_REGIME),
        (0.7, ProtocolKind.ENERGY_OPTIMAL_BOUNDED, FeasibilityClass.INTERIOR),
        (0.5, ProtocolKind.ENERGY_OPTIMAL_BOUNDED, FeasibilityClass.UNBOUNDED_REGIME),
    ],
)
def test_classify(gamma, kind, expected):
    delta = 4 * D / (OMEGA0**2 * TF**2 * gamma)
    assert classify_feasibility(spec_at(TF, delta), kind) is expected


def test_degenerate_at_minimum_time(bang_spec):
    spec = bang_spec.replace(tf=plan_time_optimal(bang_spec).tf)
    assert classify_feasibility(spec) is FeasibilityClass.DEGENERATE_BANG_BANG


def test_minimum_time_consistency(bang_spec):
    ref = plan_time_optimal(bang_spec)
    spec = bang_spec.replace(tf=ref.tf)
    t = sample_times(ref.tf)
    for planner in (plan_displacement_optimal, plan_energy_optimal):
        res = planner(spec)
        assert res.feasibility is FeasibilityClass.DEGENERATE_BANG_BANG
        assert np.max(np.abs(res.trajectory.position(t) - ref.trajectory.position(t))) <= 1e-10 * D


# --- certificates -------------------------------------------------------------


def test_certificate_time(bang_spec):
    cert = pmp_certificate(plan_time_optimal(bang_spec))
    assert cert.valid and cert.structure is Structure.BANG_BANG
    t1 = cert.predicted_switches[0]
    assert t1 == pytest.approx(TF_MIN_BANG / 2, rel=1e-12)
    assert abs(cert.p2(t1)) <= 1e-12 * abs(cert.c2)
    assert cert.normalization == "p0=-1"


def test_certificate_displacement(hansch):
    res = plan_displacement_optimal(hansch)
    cert = pmp_certificate(res)
    assert cert.valid and cert.structure is Structure.BANG_OFF_BANG
    t1, t12 = res.switch_times
    assert cert.p2(t1) == pytest.approx(1.0, rel=1e-12)
    assert cert.p2(t12) == pytest.approx(-1.0, rel=1e-12)
    assert cert.c1 > 0  # monotone decrease
    assert cert.normalization == "p0=-omega0^2"


def test_certificate_energy(hansch, unbounded):
    res = plan_energy_optimal(hansch)
    cert = pmp_certificate(res)
    assert cert.valid and cert.structure is Structure.BANG_LINEAR_BANG
    t = np.linspace(*res.switch_times, 30)[1:-1]
    assert np.allclose(res.trajectory.control_limit(t), -cert.p2(t), rtol=1e-10, atol=1e-14 * D)
    for s, sign in zip(res.switch_times, (1, -1)):
        assert cert.p2(s) == pytest.approx(sign * HANSCH_DELTA, rel=1e-10)
    cert = pmp_certificate(plan_energy_optimal(unbounded))
    assert cert.valid and cert.structure is Structure.LINEAR and cert.predicted_switches == ()


def test_certificate_rejects_ansatz_and_infeasible(hansch):
    with pytest.raises(UnsupportedProtocolError):
        pmp_certificate(plan_polynomial(hansch))
    with pytest.raises(ValueError):
        pmp_certificate(plan_displacement_optimal(hansch.replace(tf=0.5 * hansch.tf_min)))


def test_certificate_detects_wrong_switch(hansch):
    # Same structure with a mislabelled switch time: the rule no longer reproduces u.
    res = plan_displacement_optimal(hansch)
    from dataclasses import replace

    t1, t12 = res.switch_times
    bogus = replace(res, switch_times=(1.1 * t1, t12))
    assert not pmp_certificate(bogus).valid


# --- properties -----------------------------------------------------------

feasible_params = st.tuples(st.floats(0.05, 0.999), st.floats(0.01, 0.08), st.floats(1e-4, 5e-3))


def _make(gamma, tf, d):
    delta = 4 * d / (OMEGA0**2 * tf**2 * gamma)
    return spec_at(tf, delta, d=d)


@settings(max_examples=40, deadline=None)
@given(feasible_params)
def test_all_planners_pass_boundary_checks_and_bound(params):
    spec = _make(*params)
    t = np.linspace(0.0, spec.tf, 801)[1:-1]
    for name in ("time", "displacement", "energy"):
        res = plan(spec, name)
        assert check_boundary_conditions(res.trajectory, res.spec).passed
        u = res.trajectory.control_limit(t * res.tf / spec.tf)
        assert np.max(np.abs(u)) <= spec.delta * (1 + 1e-12)
        assert all(0 < s < res.tf for s in res.switch_times)
        vmax = np.max(np.abs(res.trajectory.velocity(np.linspace(0, res.tf, 4001))))
        assert res.v0 == pytest.approx(vmax, rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(feasible_params)
def test_energy_and_displacement_ordering(params):
    spec = _make(*params)
    bound = 6 * spec.mass * spec.d**2 / (spec.omega0**2 * spec.tf**4)
    e = plan_energy_optimal(spec).costs
    dsp = plan_displacement_optimal(spec).costs
    assert e["Ep_bar"] <= dsp["Ep_bar"] * (1 + 1e-12)
    assert e["Ep_bar"] >= bound * (1 - 1e-12)
    assert dsp["Ep_bar"] >= bound * (1 - 1e-12)
    assert dsp["J_D"] <= e["J_D"] * (1 + 1e-12)
    poly = plan_polynomial(spec)
    if not poly.diagnostics["bound_violated"]:
        assert dsp["J_D"] <= poly.costs["J_D"] * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(feasible_params, st.floats(0.1, 10.0))
def test_scale_invariance(params, kappa):
    spec = _make(*params)
    scaled = spec.replace(d=kappa * spec.d, delta=kappa * spec.delta)
    for name in ("time", "displacement", "energy", "poly"):
        a, b = plan(spec, name).trajectory, plan(scaled, name).trajectory
        t = np.linspace(0.0, a.tf, 101)[1:-1]
        assert np.allclose(kappa * a.position(t), b.position(t), rtol=1e-11, atol=1e-13 * kappa * spec.d)
        # u jumps at breakpoints, which may move by an ulp under scaling.
        off = np.min(np.abs(t[:, None] - a.breakpoints[None, :]), axis=1) > 1e-9 * a.tf
        t = t[off]
        assert np.allclose(kappa * a.control(t), b.control(t), rtol=1e-9, atol=1e-12 * kappa * spec.delta)
        assert np.allclose(kappa * a.trap_position(t), b.trap_position(t), rtol=1e-11, atol=1e-12 * kappa * spec.d)


@settings(max_examples=30, deadline=None)
@given(feasible_params)
def test_time_reversal(params):
    spec = _make(*params)
    for name in ("time", "displacement", "energy"):
        traj = plan(spec, name).trajectory
        t = np.linspace(0.0, traj.tf, 201)
        assert np.allclose(traj.position(traj.tf - t), spec.d - traj.position(t), rtol=0, atol=1e-12 * spec.d)


@settings(max_examples=30, deadline=None)
@given(feasible_params)
def test_breakpoint_continuity(params):
    spec = _make(*params)
    for name in ("time", "displacement", "energy", "poly"):
        traj = plan(spec, name).trajectory
        for tau in traj.breakpoints[1:-1]:
            assert traj.position(tau, "left") == pytest.approx(traj.position(tau, "right"), rel=1e-12)
            assert traj.velocity(tau, "left") == pytest.approx(traj.velocity(tau, "right"), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-5, 1e-3), st.floats(1e-5, 1e-3))
def test_tf_min_decreasing_in_delta(d1, d2):
    assume(abs(d1 - d2) > 1e-9)
    lo, hi = sorted((d1, d2))
    base = TransportSpec(mass=RB87_MASS, omega0=OMEGA0, d=D, delta=lo)
    assert plan_time_optimal(base).tf > plan_time_optimal(base.replace(delta=hi)).tf


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 0.08), st.floats(1e-6, 1e-3))
def test_energy_continuous_across_linear_boundary(tf, eps):
    delta0 = 6 * D / (OMEGA0**2 * tf**2)
    above = plan_energy_optimal(spec_at(tf, delta0 * (1 + eps))).costs["Ep_bar"]
    below = plan_energy_optimal(spec_at(tf, delta0 * (1 - eps))).costs["Ep_bar"]
    bound = 6 * RB87_MASS * D**2 / (OMEGA0**2 * tf**4)
    assert above == pytest.approx(bound, rel=1e-12)
    # The bounded branch differs from the bound at second order in eps.
    assert below == pytest.approx(bound, rel=10 * eps)
    assert below >= bound * (1 - 1e-12)

