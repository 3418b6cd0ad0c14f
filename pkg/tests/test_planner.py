import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safeloco import ParameterError
from safeloco.planner import (BarrierSpec, PlannerLimits, PlannerState, SafetyHierarchy,
                              SplineReference, barrier_value, cbf_row, extended_barrier,
                              extended_barrier_rate, hierarchical_qp, hierarchical_qp_problem,
                              integrate, intermediate_qp, reference_tracker, zeta_margin)
from safeloco.qp import kkt_residuals, solve_qp

from conftest import grid_argmin

R = 0.15 * math.sqrt(2.0)
LIM = PlannerLimits(a_max=1.0, v_max=0.5, kappa=2.0)


def scenario_hierarchy(w=3.0, heavy_first=True):
    z = zeta_margin(R, 0.5, 0.4)
    heavy = BarrierSpec([1.0, -0.4], R, z, name="heavy")
    light = BarrierSpec([1.0, 0.4], R, z, name="light")
    order = (heavy, light) if heavy_first else (light, heavy)
    return SafetyHierarchy(order, w)


def random_state(rng, hier):
    # outside both inflated discs, moving at bounded speed
    while True:
        phi = rng.uniform([0.0, -1.2], [2.0, 1.2])
        st_ = PlannerState.at(phi, rng.uniform(-0.5, 0.5, 2))
        if all(barrier_value(b, st_) > 0 for b in hier.barriers):
            return st_


def test_barrier_examples():
    b = BarrierSpec([1.0, 2.0], 0.2121, 0.04)
    assert barrier_value(b, PlannerState.at([1.0, 2.0])) == pytest.approx(-(0.2121 ** 2 + 0.04))
    on = np.array([1.0, 2.0]) + b.inflated_radius * np.array([0.6, 0.8])
    assert abs(barrier_value(b, PlannerState.at(on))) < 1e-12
    assert barrier_value(b, PlannerState.at([1.5, 2.0])) == pytest.approx(0.25 - 0.0849864, abs=1e-6)
    assert barrier_value(BarrierSpec([0, 0], 0.2121, 0.04), PlannerState.at([0.5, 0])) == \
        pytest.approx(0.165, abs=1e-4)


def test_barrier_spec_validation():
    for kw in (dict(radius=-1.0), dict(radius=1.0, zeta=-0.1), dict(radius=1.0, alpha_slope=0.0)):
        with pytest.raises(ParameterError):
            BarrierSpec([0.0, 0.0], **kw)


def test_hierarchy_has_two_levels():
    b = BarrierSpec([0.0, 0.0], 0.1)
    with pytest.raises(ParameterError):
        SafetyHierarchy((b,))
    with pytest.raises(ParameterError):
        SafetyHierarchy((b, b), relaxation_weight=-1.0)


def test_zeta_examples():
    assert zeta_margin(R, 0.0, 0.4) == 0.0
    vbar = 0.5 * math.sqrt(2.0)
    closed = 2 * 0.2121 * vbar * 0.01 + (vbar * 0.01) ** 2
    assert abs(zeta_margin(0.2121, 0.5, 0.01, 41) - closed) < 1e-6
    with pytest.raises(ParameterError):
        zeta_margin(R, 0.5, 0.4, samples=1)


@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.floats(0.01, 1.0), st.integers(2, 30))
def test_zeta_monotone_in_speed(v1, v2, t, n):
    lo, hi = sorted((v1, v2))
    assert zeta_margin(R, lo, t, n) <= zeta_margin(R, hi, t, n)


def test_cbf_row_matches_rate_identity(rng):
    hier = scenario_hierarchy()
    for _ in range(20):
        s = random_state(rng, hier)
        u = rng.uniform(-1, 1, 2)
        a, b = cbf_row(hier.primary, s, 2.0)
        he = extended_barrier(hier.primary, s, 2.0)
        rate = extended_barrier_rate(hier.primary, s, u, 2.0)
        # a @ u - b == h_e_dot + alpha * h_e
        assert a @ u - b == pytest.approx(rate + hier.primary.alpha_slope * he, abs=1e-12)


def test_intermediate_returns_desired_when_safe():
    hier = scenario_hierarchy()
    s = PlannerState.at([-1.0, 0.0], [0.0, 0.0])
    u_des = np.array([0.3, -0.2])
    u, ok = intermediate_qp(hier, s, u_des, LIM)
    assert ok and np.array_equal(u, u_des)


def test_intermediate_single_active_constraint_is_projection():
    hier = scenario_hierarchy()
    s = PlannerState.at([0.62, 0.36], [0.3, 0.0])
    u_des = np.array([0.0, 0.0])
    a, b = cbf_row(hier.secondary, s, LIM.kappa)
    assert a @ u_des < b, "constraint must be active for this check"
    expected = u_des + max(0.0, (b - a @ u_des) / (a @ a)) * a
    assert np.all(np.abs(expected) < LIM.a_max)
    u, ok = intermediate_qp(hier, s, u_des, LIM)
    assert ok and np.allclose(u, expected, atol=1e-12)


def test_intermediate_matches_grid_oracle():
    rng = np.random.default_rng(11)
    hier = scenario_hierarchy()
    checked = 0
    for _ in range(100):
        s = random_state(rng, hier)
        u_des = rng.uniform(-2, 2, 2)
        u, ok = intermediate_qp(hier, s, u_des, LIM)
        a, b = cbf_row(hier.secondary, s, LIM.kappa)
        obj = lambda pts: np.sum((pts - u_des) ** 2, axis=1)
        xg, fg, spacing = grid_argmin(obj, [(a, b)], -LIM.a_max, LIM.a_max, n=201)
        if xg is None:
            assert not ok
            continue
        assert ok
        checked += 1
        assert np.all(np.abs(u - xg) <= max(spacing) + 1e-12)
        assert abs(obj(u[None])[0] - fg) < 1e-4
    assert checked >= 90


def test_hierarchical_matches_grid_oracle_and_kkt():
    rng = np.random.default_rng(12)
    hier = scenario_hierarchy()
    for _ in range(100):
        s = random_state(rng, hier)
        u_des = rng.uniform(-2, 2, 2)
        res = hierarchical_qp(hier, s, u_des, LIM)
        a1, b1 = cbf_row(hier.primary, s, LIM.kappa)
        a2, _ = cbf_row(hier.secondary, s, LIM.kappa)
        u_i = res.u_intermediate
        obj = lambda pts: (np.sum((pts - u_des) ** 2, axis=1)
                           + hier.relaxation_weight * ((pts - u_i) @ a2) ** 2)
        xg, fg, spacing = grid_argmin(obj, [(a1, b1)], -LIM.a_max, LIM.a_max, n=201)
        if xg is None:
            assert not res.feasible
            continue
        assert res.feasible
        assert np.all(np.abs(res.u_star - xg) <= max(spacing) + 1e-12)
        assert abs(obj(res.u_star[None])[0] - fg) < 1e-4
        assert a1 @ res.u_star >= b1 - 1e-9
        assert res.delta == pytest.approx(a2 @ (res.u_star - u_i), abs=1e-12)
        p = hierarchical_qp_problem(hier, s, u_des, u_i, LIM)
        assert max(kkt_residuals(p, solve_qp(p)).values()) < 1e-8


def test_hierarchical_passthrough_when_nothing_binds():
    hier = scenario_hierarchy()
    s = PlannerState.at([-1.0, 0.0])
    res = hierarchical_qp(hier, s, [0.2, 0.1], LIM)
    assert np.allclose(res.u_star, [0.2, 0.1], atol=1e-14)
    assert abs(res.delta) < 1e-14


def test_zero_weight_reduces_to_primary_cbf_qp(rng):
    hier = scenario_hierarchy(w=0.0)
    for _ in range(20):
        s = random_state(rng, hier)
        u_des = rng.uniform(-2, 2, 2)
        res = hierarchical_qp(hier, s, u_des, LIM)
        plain, ok = intermediate_qp(SafetyHierarchy(hier.barriers[::-1], 0.0), s, u_des, LIM)
        assert res.feasible == ok
        if ok:
            assert np.allclose(res.u_star, plain, atol=1e-12)


def test_infeasible_primary_is_flagged():
    hier = scenario_hierarchy()
    # deep inside the primary disc, rushing toward its center
    s = PlannerState.at([1.0, -0.35], [0.0, -0.5])
    res = hierarchical_qp(hier, s, [0.0, 0.0], LIM)
    assert not res.feasible


def test_batched_matches_single(rng):
    hier = scenario_hierarchy()
    states = [random_state(rng, hier) for _ in range(25)]
    u_des = rng.uniform(-2, 2, (25, 2))
    batch = hierarchical_qp(hier, PlannerState(np.array([s.phi for s in states]),
                                               np.array([s.phi_dot for s in states])), u_des, LIM)
    for i, s in enumerate(states):
        one = hierarchical_qp(hier, s, u_des[i], LIM)
        assert np.allclose(batch.u_star[i], one.u_star, atol=1e-12)


def rollout(hier, limits, t_end=20.0, dt=0.01):
    s = PlannerState.at([0.0, 0.0])
    ref = SplineReference([0.0, 0.0], [3.2, 0.0], 12.0)
    h1, h2 = [], []
    for k in range(round(t_end / dt)):
        pos, vel = ref(k * dt)
        u_des = reference_tracker(pos, s, 2.0, 2.8, vel, limits.a_max)
        res = hierarchical_qp(hier, s, u_des, limits)
        s = integrate(s, res.u_star, dt, limits.v_max)
        h1.append(barrier_value(hier.primary, s))
        h2.append(barrier_value(hier.secondary, s))
    return s, np.array(h1), np.array(h2)


def test_contradiction_rollout_keeps_primary_and_violates_secondary():
    limits = PlannerLimits(1.0, 0.5, 2.0, dt=0.01)
    s, h1, h2 = rollout(scenario_hierarchy(), limits)
    assert h1.min() >= 0.0
    assert h2.min() < 0.0
    assert np.hypot(*(s.phi - [3.2, 0.0])) < 0.1


def test_swapping_priority_swaps_the_protected_disc():
    limits = PlannerLimits(1.0, 0.5, 2.0, dt=0.01)
    _, h_heavy, h_light = rollout(scenario_hierarchy(heavy_first=True), limits)
    _, h_light2, h_heavy2 = rollout(scenario_hierarchy(heavy_first=False), limits)
    assert h_heavy.min() >= 0.0 > h_light.min()
    assert h_light2.min() >= 0.0 > h_heavy2.min()


def test_reference_tracker_zero_at_goal():
    s = PlannerState.at([3.2, 0.0])
    assert np.array_equal(reference_tracker([3.2, 0.0], s), [0.0, 0.0])


def test_spline_endpoints():
    ref = SplineReference([0.0, 0.0], [3.2, 0.0], 12.0)
    p0, v0 = ref(0.0)
    p1, v1 = ref(12.0)
    assert np.allclose(p0, [0, 0]) and np.allclose(v0, [0, 0], atol=1e-15)
    assert np.allclose(p1, [3.2, 0]) and np.allclose(v1, [0, 0])
    pe, ve = ref(12.0 - 1e-9)
    assert np.allclose(pe, [3.2, 0.0], atol=1e-8) and np.allclose(ve, 0.0, atol=1e-8)


def test_tracker_reaches_goal_in_15_s():
    s = PlannerState.at([0.0, 0.0])
    dt = 0.01
    for k in range(1500):
        s = integrate(s, reference_tracker([3.2, 0.0], s, 2.0, 2.8), dt, LIM.v_max)
        if np.hypot(*(s.phi - [3.2, 0.0])) < 0.05:
            break
    assert k * dt < 15.0


def test_integrate_is_exact_zoh():
    s = PlannerState.at([1.0, 2.0], [0.1, -0.2])
    nxt = integrate(s, [0.5, 0.4], 0.1, 10.0)
    assert np.allclose(nxt.phi, [1.0 + 0.01 + 0.0025, 2.0 - 0.02 + 0.002])
    assert np.allclose(nxt.phi_dot, [0.15, -0.16])


def test_velocity_aware_bounds_keep_speed_in_box():
    limits = PlannerLimits(1.0, 0.5, 2.0, dt=0.01)
    lo, hi = limits.input_bounds(np.array([0.498, -0.5]))
    assert hi[0] == pytest.approx(0.2) and lo[1] == 0.0
    assert np.all(lo <= hi)


def test_sampled_row_tends_to_continuous_row(rng):
    hier = scenario_hierarchy()
    for _ in range(20):
        s = random_state(rng, hier)
        a0, b0 = cbf_row(hier.primary, s, 2.0)
        a1, b1 = cbf_row(hier.primary, s, 2.0, 1e-7)
        assert np.allclose(a1, a0, atol=1e-5) and b1 == pytest.approx(b0, abs=1e-5)


def test_sampled_row_is_sufficient_for_one_held_tick(rng):
    hier = scenario_hierarchy()
    spec, dt, kappa = hier.primary, 0.01, 2.0
    checked = 0
    while checked < 500:
        s = random_state(rng, hier)
        u = rng.uniform(-1, 1, 2)
        a, b = cbf_row(spec, s, kappa, dt)
        if a @ u < b:
            continue
        nxt = PlannerState(s.phi + s.phi_dot * dt + 0.5 * u * dt * dt, s.phi_dot + u * dt)
        he0, he1 = extended_barrier(spec, s, kappa), extended_barrier(spec, nxt, kappa)
        assert he1 >= (1 - spec.alpha_slope * dt) * he0 - 1e-12
        checked += 1


def test_forward_invariance_from_certified_starts():
    hier = scenario_hierarchy()
    limits = PlannerLimits(1.0, 0.5, 2.0, dt=0.01)
    rng = np.random.default_rng(21)
    starts = []
    while len(starts) < 50:
        s = PlannerState.at(rng.uniform([0.0, -1.2], [2.0, 1.2]), rng.uniform(-0.5, 0.5, 2))
        if barrier_value(hier.primary, s) > 0 and extended_barrier(hier.primary, s, 2.0) >= 0:
            starts.append(s)
    st = PlannerState(np.array([s.phi for s in starts]), np.array([s.phi_dot for s in starts]))
    goal = np.array([3.2, 0.0])
    ok = np.ones(50, dtype=bool)
    worst = np.inf
    for _ in range(1000):
        res = hierarchical_qp(hier, st, reference_tracker(goal, st), limits)
        ok &= res.feasible
        st = integrate(st, res.u_star, 0.01, limits.v_max)
        worst = min(worst, float(barrier_value(hier.primary, st)[ok].min(initial=np.inf)))
    assert ok.all() and worst >= -1e-6
