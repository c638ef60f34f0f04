import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memcascade.bounds_cuts import (
    Interval,
    bound_violations,
    check_cuts,
    critical_y,
    derive_bounds,
    machine_limit_filter,
    z_lower,
    z_upper,
)
from memcascade.cascade import Configuration, ProblemSpec, enumerate_configurations, simulate
from memcascade.cases import CASE_NUMBERS, DEMO_CONFIGURATION, case, xylene_demo
from memcascade.errors import DomainError
from memcascade.optimizer import SearchSettings, _Problem, _feasible, candidate_configurations, restore
from memcascade.permeator import EPS_THETA, EPS_X

from oracles import z_extrema_grid


def all_specs():
    return [case(c) for c in CASE_NUMBERS] + [xylene_demo()]


def test_critical_point_closed_form():
    assert critical_y(4.0) == pytest.approx(2.0 / 3.0, rel=1e-15)


def test_case3_feed_upper_bound_is_purity_target():
    b = derive_bounds(case(3))
    assert all(sb.x_in.up == 0.69 for sb in b.stages)


def test_bounds_structure():
    for spec in all_specs():
        b = derive_bounds(spec)
        assert b.k.lo == spec.k_at(spec.u_lo) and b.k.up == spec.k_at(spec.u_up)
        assert b.k.lo <= b.k.up
        assert b.stages[-1].x_out.lo == EPS_X
        for sb in b.stages:
            assert sb.theta == Interval(0.0, 1.0 - EPS_THETA)
            assert sb.z_in.lo > 0 and sb.z_out.lo > 0
            for name in ("x_in", "x_out", "y_in", "y_out", "y_per", "z_in", "z_out"):
                iv = getattr(sb, name)
                assert iv.lo <= iv.up, name


def test_z_upper_straddling_case():
    s, k_up = 30.0, 0.02
    big = k_up * (s - 1) ** 2
    y_star = critical_y(s)
    assert z_upper(y_star - 0.1, y_star + 0.1, big, s) == pytest.approx(k_up * (math.sqrt(s) - 1) ** 2, rel=1e-14)


def _z_grid_gap(spec):
    b = derive_bounds(spec)
    s = spec.mixture.selectivity
    big_lo, big_up = b.k.lo * (s - 1) ** 2, b.k.up * (s - 1) ** 2
    worst = 0.0
    for sb in b.stages:
        for y, z in ((sb.y_in, sb.z_in), (sb.y_out, sb.z_out)):
            lo, _ = z_extrema_grid(y.lo, y.up, big_lo, s)
            _, up = z_extrema_grid(y.lo, y.up, big_up, s)
            worst = max(worst, abs(lo - z.lo), abs(up - z.up))
    return worst


def z_grid_agreement():
    """Worst gap between the z-bound formulas and a 10^4-point grid, over all instances."""
    return max(_z_grid_gap(spec) for spec in all_specs())


def test_z_bounds_match_grid_brute_force():
    assert z_grid_agreement() <= 1e-9


@given(st.floats(1.5, 300.0), st.floats(0.01, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
@settings(max_examples=300, deadline=None)
def test_z_bounds_bracket_grid_within_discretization(s, frac, a, b):
    # the grid can only miss the peak by at most half the curvature times the squared spacing
    y_lo, y_up = sorted((a, b))
    big = frac * (s - 1)
    lo, up = z_extrema_grid(y_lo, y_up, big, s)
    assert z_lower(y_lo, y_up, big, s) == pytest.approx(lo, abs=1e-15)
    formula = z_upper(y_lo, y_up, big, s)
    assert formula >= up - 1e-15
    y = np.linspace(y_lo, y_up, 10_000)
    z = big * y * (1 - y) / (s - (s - 1) * y)
    # curvature times squared spacing is the largest second difference
    assert formula - up <= 0.5 * np.max(np.abs(np.diff(z, 2))) * 1.01 + 1e-15


def _feasible_points(count, seed=3):
    """Spec-feasible operating points satisfying every cut, via restoration from random starts."""
    rng = np.random.default_rng(seed)
    specs = [case(12), case(8), xylene_demo(), case(9)]
    configs = candidate_configurations(4)
    st_ = SearchSettings()
    out = []
    tries = 0
    while len(out) < count and tries < 5000:
        tries += 1
        spec = specs[tries % len(specs)]
        config = configs[rng.integers(len(configs))]
        prob = _Problem(spec, config, True)
        v = rng.uniform(0.0, 1.0, prob.dim)
        v[1:] *= 1.0 - EPS_THETA
        w = restore(prob, v)
        if w is None or not _feasible(prob, w, st_):
            continue
        point = prob.point_of(w)
        state = simulate(spec, config, point.u, np.array(point.thetas))
        if check_cuts(state, spec).ok:
            out.append((spec, state))
    return out


def bound_validity(count=100):
    """(points checked, points with any variable outside the derived bounds)."""
    points = _feasible_points(count)
    bad = sum(1 for spec, state in points if bound_violations(state, derive_bounds(spec)))
    return len(points), bad


@pytest.mark.slow
def test_bounds_hold_on_feasible_points():
    checked, bad = bound_validity()
    assert checked == 100
    assert bad == 0


def test_single_stage_cuts_hold():
    spec = ProblemSpec.gas(1, 250.0, 0.3, 0.6, 0.5, 10.0)
    config = Configuration.decode("F1|B|N")
    for theta in (0.0, 0.2, 0.7, 1 - EPS_THETA):
        state = simulate(spec, config, spec.u_up, [theta])
        names = {v.cut for v in check_cuts(state, spec, use_p5=False).violations}
        assert not names


def test_demo_optimum_satisfies_cuts():
    from scipy.optimize import fsolve
    spec = xylene_demo()
    base = np.array([0.5776, 0.4044, 0.3903, 0.7575])

    def residual(v):
        th = base.copy()
        th[[0, 3]] = v
        s = simulate(spec, DEMO_CONFIGURATION, spec.u_up, th)
        return [s.permeate_flow - spec.permeate_flow, 100 * (s.permeate_purity - spec.y_target)]

    th = base.copy()
    th[[0, 3]] = fsolve(residual, base[[0, 3]], xtol=1e-14)
    state = simulate(spec, DEMO_CONFIGURATION, spec.u_up, th)
    report = check_cuts(state, spec)
    assert report.ok, str(report)


def test_reversed_cascade_flags_monotonicity():
    spec = ProblemSpec.gas(2, 250.0, 0.4, 0.8, 0.5, 15.0)
    state = simulate(spec, Configuration.decode("F2|B,R1|N"), spec.u_up, [0.9, 0.2])
    names = {v.cut for v in check_cuts(state, spec).violations}
    assert "x_out decreasing" in names
    assert not {v.cut for v in check_cuts(state, spec, use_p5=False).violations}


def test_machine_limit_filter():
    zero = [c for c in enumerate_configurations(4, allow_inactive=True) if machine_limit_filter(c, 0)]
    assert zero
    for c in zero:
        for j in c.active_stages():
            assert c.permeate_target(j) is None
    with pytest.raises(DomainError):
        machine_limit_filter(DEMO_CONFIGURATION, -1)


def test_machine_limit_named_cascades():
    one = Configuration.decode("F1|B,B,R1,-|N")
    assert machine_limit_filter(one, 1)
    assert machine_limit_filter(Configuration.decode("F1|B,R1,R2,R1|N"), 2)
    assert not machine_limit_filter(DEMO_CONFIGURATION, 2)
