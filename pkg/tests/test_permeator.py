import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memcascade.errors import AdmissibilityError, DomainError
from memcascade.permeator import (
    EPS_THETA,
    MixtureSpec,
    Phase,
    check_admissible,
    compute_k,
    crossflow_from_k,
    crossflow_solve,
    dy_dx,
    flux_difference,
    local_permeate_fraction,
    local_retentate_fraction,
    min_selectivity,
    perfect_mixing_solve,
)

from oracles import bisect_permeate, k_direct, rk4_crossflow

V_A, V_B = 1.233e-4, 1.215e-4
XYLENE = MixtureSpec(Phase.LIQUID, 50.0, V_A, V_B, 303.15)
O2N2 = MixtureSpec(Phase.GAS, 5.3)
CO2CH4 = MixtureSpec(Phase.GAS, 3.58)

fractions = st.floats(0.01, 0.99)
cuts = st.floats(0.005, 1.0 - EPS_THETA)


@st.composite
def stage_inputs(draw):
    """(mixture, u, x_in, theta) for gas or xylene-like liquid."""
    if draw(st.booleans()):
        mix = MixtureSpec(Phase.GAS, draw(st.floats(1.5, 200.0)))
        u = math.log(draw(st.floats(1.05, 30.0)))
    else:
        mix = MixtureSpec(Phase.LIQUID, draw(st.floats(5.0, 300.0)), V_A, V_B, 303.15)
        u = draw(st.floats(30e5, 107e5))
    return mix, u, draw(fractions), draw(cuts)


@st.composite
def physical_k(draw):
    """(k, S) reachable through compute_k from an admissible mixture and u."""
    mix, u, _, _ = draw(stage_inputs())
    return compute_k(mix, u), mix.selectivity


PROPS = settings(max_examples=300, deadline=None)


def test_k_zero_driving_force():
    assert compute_k(MixtureSpec(Phase.GAS, 2.0), 0.0) == 0.0


def test_k_underflow_at_tiny_u_is_not_rejection():
    assert compute_k(MixtureSpec(Phase.GAS, 3.0), 5e-324) == 0.0


def test_k_gas_o2n2_matches_direct():
    u = math.log(8.4)
    want = (4.3 - (5.3 / 8.4 - 1 / 8.4)) / 4.3 ** 2
    assert compute_k(O2N2, u) == pytest.approx(want, rel=1e-14)


def test_k_liquid_xylene_matches_direct():
    c = 1.0 / (8.314 * 303.15)
    want = k_direct(50.0, V_A * c, V_B * c, 107e5)
    assert compute_k(XYLENE, 107e5) == pytest.approx(want, rel=1e-12)
    assert want > 0


def test_k_rejects_negative_rejection():
    mix = MixtureSpec(Phase.LIQUID, 1.001, V_A, 3 * V_A, 303.15)
    with pytest.raises(AdmissibilityError):
        compute_k(mix, 50e5)


def test_permeate_endpoints():
    assert local_permeate_fraction(0.0, 0.3, 5.0) == 0.0
    assert local_permeate_fraction(1.0, 0.3, 5.0) == pytest.approx(1.0, abs=1e-15)


def test_permeate_o2n2_matches_bisection():
    k = compute_k(O2N2, math.log(8.4))
    assert local_permeate_fraction(0.205, k, 5.3) == pytest.approx(bisect_permeate(0.205, k, 5.3), abs=1e-14)


@given(fractions, st.floats(1e-4, 50.0), st.floats(1.01, 500.0))
@PROPS
def test_permeate_matches_bisection(x, k, s):
    assert local_permeate_fraction(x, k, s) == pytest.approx(bisect_permeate(x, k, s), abs=1e-13)


@given(fractions, physical_k())
@PROPS
def test_retentate_round_trip(x, ks):
    k, s = ks
    y = local_permeate_fraction(x, k, s)
    assert abs(local_retentate_fraction(y, k, s) - x) <= 1e-12


def test_retentate_of_zero():
    assert local_retentate_fraction(0.0, 0.7, 9.0) == 0.0


def test_retentate_unreachable_raises():
    with pytest.raises(DomainError):
        local_retentate_fraction(0.5, 40.0, 50.0)


def test_retentate_xylene_spec():
    k = compute_k(XYLENE, 30e5)
    x = local_retentate_fraction(0.995, k, 50.0)
    assert 0.0 < x < 0.995
    assert local_permeate_fraction(x, k, 50.0) == pytest.approx(0.995, abs=1e-13)


@given(fractions, fractions, st.floats(1e-4, 50.0), st.floats(1.01, 500.0))
@PROPS
def test_permeate_monotone_in_x(x1, x2, k, s):
    lo, hi = sorted((x1, x2))
    assert local_permeate_fraction(lo, k, s) <= local_permeate_fraction(hi, k, s)
    y = local_permeate_fraction(x1, k, s)
    assert dy_dx(x1, y, k, s) >= 0.0


@given(stage_inputs(), st.floats(0.0, 1.0))
@PROPS
def test_permeate_monotone_in_u(inputs, frac):
    mix, u, x, _ = inputs
    u_lo = u * frac if mix.phase is Phase.GAS else 30e5 + frac * (u - 30e5)
    if u_lo <= 0:
        return
    s = mix.selectivity
    assert local_permeate_fraction(x, compute_k(mix, u_lo), s) <= local_permeate_fraction(x, compute_k(mix, u), s) + 1e-15


def test_dy_dx_zero_and_o2n2():
    assert dy_dx(0.0, 0.0, 0.5, 5.0) == 0.0
    k = compute_k(O2N2, math.log(8.4))
    y = local_permeate_fraction(0.205, k, 5.3)
    assert dy_dx(0.205, y, k, 5.3) > 0


@given(st.floats(0.05, 0.95), physical_k())
@PROPS
def test_dy_dx_matches_central_difference(x, ks):
    k, s = ks
    h = 1e-6
    fd = (local_permeate_fraction(x + h, k, s) - local_permeate_fraction(x - h, k, s)) / (2 * h)
    y = local_permeate_fraction(x, k, s)
    assert dy_dx(x, y, k, s) == pytest.approx(fd, rel=1e-6)


def test_crossflow_theta_zero_is_bypass():
    r = crossflow_solve(O2N2, math.log(8.4), 0.205, 0.0)
    assert r.x_out == 0.205
    assert r.y_per == r.y_in == r.y_out


@pytest.mark.parametrize("mix,u,x_in,theta", [
    (O2N2, math.log(8.4), 0.205, 0.5),
    (CO2CH4, math.log(4.0), 0.60, 0.3),
])
def test_crossflow_reference_points_match_rk4(mix, u, x_in, theta):
    k = compute_k(mix, u)
    big_k = k * (mix.selectivity - 1) ** 2
    x_ref, y_ref = rk4_crossflow(big_k, mix.selectivity, np.array([x_in]), np.array([theta]))
    r = crossflow_solve(mix, u, x_in, theta)
    assert r.x_out == pytest.approx(x_ref[0], rel=1e-9)
    assert r.y_per == pytest.approx(y_ref[0], rel=1e-9)


@given(stage_inputs())
@PROPS
def test_crossflow_stage_properties(inputs):
    mix, u, x_in, theta = inputs
    r = crossflow_solve(mix, u, x_in, theta)
    assert r.x_out < x_in
    assert r.y_per >= x_in
    assert r.y_out <= r.y_per <= r.y_in
    assert r.z_in > 0 and r.z_out > 0
    assert abs((1 - theta) * r.x_out + theta * r.y_per - x_in) <= 1e-10


@given(stage_inputs())
@PROPS
def test_crossflow_x_out_decreases_with_theta(inputs):
    mix, u, x_in, theta = inputs
    other = 0.5 * theta
    assert crossflow_solve(mix, u, x_in, theta).x_out < crossflow_solve(mix, u, x_in, other).x_out


@given(stage_inputs())
@PROPS
def test_perfect_mixing_is_dominated(inputs):
    # with x_in and theta shared, the component balance ties the two
    # inequalities: a lower permeate purity forces a richer retentate
    mix, u, x_in, theta = inputs
    cf = crossflow_solve(mix, u, x_in, theta)
    pm = perfect_mixing_solve(mix, u, x_in, theta)
    assert pm.y_per <= cf.y_per + 1e-12
    assert pm.x_out >= cf.x_out - 1e-12
    assert abs((1 - theta) * pm.x_out + theta * pm.y_per - x_in) <= 1e-10


def test_perfect_mixing_limits():
    u = math.log(8.4)
    assert perfect_mixing_solve(O2N2, u, 0.205, 0.0).x_out == 0.205
    pm = perfect_mixing_solve(O2N2, u, 0.205, 1 - EPS_THETA)
    assert pm.y_per == pytest.approx(0.205, abs=2e-3)
    cf = crossflow_solve(O2N2, u, 0.205, 0.5)
    assert perfect_mixing_solve(O2N2, u, 0.205, 0.5).y_per < cf.y_per


def _random_samples(rng, count):
    out = []
    while len(out) < count:
        if rng.random() < 0.5:
            mix = MixtureSpec(Phase.GAS, float(rng.uniform(1.5, 200.0)))
            u = math.log(rng.uniform(1.05, 30.0))
        else:
            mix = MixtureSpec(Phase.LIQUID, float(rng.uniform(5.0, 300.0)), V_A, V_B, 303.15)
            u = float(rng.uniform(30e5, 107e5))
        out.append((mix, u, float(rng.uniform(0.02, 0.98)), float(rng.uniform(0.01, 1 - EPS_THETA))))
    return out


def rk4_agreement(count=200, seed=20240601):
    """Worst relative error of (x_out, y_per) against the RK4 oracle."""
    samples = _random_samples(np.random.default_rng(seed), count)
    worst = 0.0
    # all samples integrate together as one vectorized RK4 run
    ks = np.array([compute_k(m, u) for m, u, _, _ in samples])
    ss = np.array([m.selectivity for m, _, _, _ in samples])
    x_in = np.array([x for _, _, x, _ in samples])
    th = np.array([t for _, _, _, t in samples])
    x_ref, y_ref = rk4_crossflow(ks * (ss - 1) ** 2, ss, x_in, th, steps=10_000)
    for i, (mix, u, x, t) in enumerate(samples):
        r = crossflow_from_k(ks[i], ss[i], x, t)
        worst = max(worst, abs(r.x_out - x_ref[i]) / x_ref[i], abs(r.y_per - y_ref[i]) / y_ref[i])
    return worst


def test_crossflow_matches_rk4_on_random_samples():
    assert rk4_agreement() <= 1e-6


def test_min_selectivity_gas_and_symmetric_liquid():
    assert min_selectivity(MixtureSpec(Phase.GAS, 3.0), 0.1, 2.0) == 1.0
    sym = MixtureSpec(Phase.LIQUID, 3.0, V_A, V_A, 303.15)
    assert min_selectivity(sym, 30e5, 107e5) == pytest.approx(1.0, abs=1e-12)


def brute_threshold(mix, u_lo, u_up, points=20_001):
    u = np.linspace(u_lo, u_up, points)
    ca, cb = mix.c_a, mix.c_b
    a = np.expm1(-cb * u) / np.expm1(-ca * u)
    b = (cb / ca) * np.exp((ca - cb) * u)
    return float(np.max(np.maximum(a, b)))


def test_min_selectivity_xylene_admits_fifty():
    t = min_selectivity(XYLENE, 30e5, 107e5)
    assert t == pytest.approx(brute_threshold(XYLENE, 30e5, 107e5), rel=1e-9)
    assert t < 50
    check_admissible(XYLENE, 30e5, 107e5)


def test_min_selectivity_rejects_heavy_b():
    probe = MixtureSpec(Phase.LIQUID, 2.0, V_A, 3 * V_A, 303.15)
    t = brute_threshold(probe, 30e5, 107e5)
    assert min_selectivity(probe, 30e5, 107e5) == pytest.approx(t, rel=1e-9)
    with pytest.raises(AdmissibilityError):
        check_admissible(probe.with_selectivity(0.99 * t), 30e5, 107e5)
    check_admissible(probe.with_selectivity(1.01 * t), 30e5, 107e5)


@given(fractions, physical_k())
@PROPS
def test_flux_difference_consistent(x, ks):
    k, s = ks
    y = local_permeate_fraction(x, k, s)
    assert flux_difference(y, k, s) == pytest.approx(y - x, abs=1e-13)


def stage_property_failures(count=1000, seed=5):
    """Seeded samples violating P1-P4, stage mass balance or perfect-mixing dominance."""
    bad = []
    for mix, u, x, t in _random_samples(np.random.default_rng(seed), count):
        cf = crossflow_solve(mix, u, x, t)
        pm = perfect_mixing_solve(mix, u, x, t)
        ok = (cf.x_out < x and cf.y_per >= x and cf.y_out <= cf.y_per <= cf.y_in
              and cf.z_in > 0 and cf.z_out > 0
              and abs((1 - t) * cf.x_out + t * cf.y_per - x) <= 1e-10
              and pm.y_per <= cf.y_per + 1e-12 and pm.x_out >= cf.x_out - 1e-12)
        if not ok:
            bad.append((mix.phase.value, mix.selectivity, u, x, t))
    return bad


def test_seeded_stage_properties():
    assert stage_property_failures(300) == []
