import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from glacial_cycles.integrator import IntegratorConfig, evolve_hybrid
from glacial_cycles.model import (
    BoundaryKind,
    ModelParameters,
    Regime,
    classify_boundary_point,
    epsilon_bound,
    eta_nullcline,
    regime_saddle,
    regime_sink,
    switching_function,
    tangency_curve,
    vector_field,
)
from glacial_cycles.section import (
    MapUndefined,
    NoOrbitFound,
    OrbitResult,
    Region,
    SectionPoint,
    advance_separatrix,
    composite_map,
    default_seed,
    estimate_contraction,
    find_periodic_orbit,
    guard_set_membership,
    orbit_region,
    partner_seed,
    random_admissible_seeds,
    section_map_minus,
    section_map_plus,
)

P = ModelParameters()
EPSILONS = [0.003, 0.03, 0.3]


@pytest.fixture(scope="module", params=EPSILONS, ids=lambda e: f"eps={e}")
def orbit_case(request):
    params = P.with_updates(epsilon=request.param)
    return params, find_periodic_orbit(None, params)


# -- section points ----------------------------------------------------------------------


@given(
    st.floats(-20, 10), st.floats(0.3, 1.0), st.floats(-20, 10), st.floats(0.3, 1.0),
)
def test_embedded_and_planar_norms_bound_each_other(w1, e1, w2, e2):
    x, y = SectionPoint(w1, e1), SectionPoint(w2, e2)
    planar = x.distance(y, P, "planar")
    sigma = x.distance(y, P)
    factor = math.sqrt(1 + (1 + P.a / P.b) ** 2)
    assert planar <= sigma * (1 + 1e-12)
    assert sigma <= factor * planar * (1 + 1e-12)


def test_section_point_lies_on_plane():
    x = SectionPoint(2.0, 0.8)
    assert switching_function(x.state(P), P) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        x.distance(x, P, norm="max")


# -- guard set ------------------------------------------------------------------------------


def test_separatrix_passes_through_saddle():
    sep = advance_separatrix(P)
    saddle = regime_saddle(P, Regime.ADVANCE)
    assert float(sep(saddle.eta)) == pytest.approx(saddle.w, abs=1e-6)
    assert sep.eta[0] <= 0.0 + 1e-9 or sep.w[0] <= -60 + 1e-6
    assert np.all(np.diff(sep.eta) > 0)


def test_guard_set_examples():
    sink = regime_sink(P, Regime.ADVANCE)
    assert guard_set_membership(SectionPoint(sink.w, sink.eta), P)
    assert not guard_set_membership(SectionPoint(-100.0, 0.25), P)
    sep = advance_separatrix(P)
    on_curve = SectionPoint(float(sep(0.8)), 0.8)
    assert not guard_set_membership(on_curve, P)


def _planar_advance_fate(w, eta, t_end=200.0):
    def rhs(t, y):
        return vector_field((y[0], y[1], 0.0), Regime.ADVANCE, P)[:2]

    sol = solve_ivp(rhs, (0, t_end), [w, eta], rtol=1e-10, atol=1e-12)
    return sol.y[:, -1]


@pytest.mark.parametrize("eta", [0.2, 0.6, 0.9])
def test_separatrix_splits_basins(eta):
    # independent integration: above the curve the advance sink attracts, below it does not
    sink = regime_sink(P, Regime.ADVANCE)
    m = float(advance_separatrix(P)(eta))
    above = _planar_advance_fate(m + 0.2, eta)
    below = _planar_advance_fate(m - 0.2, eta)
    assert np.allclose(above, [sink.w, sink.eta], atol=1e-4)
    assert not np.allclose(below, [sink.w, sink.eta], atol=1e-1)


# -- section maps ----------------------------------------------------------------------------


def test_minus_map_near_switching_at_tiny_epsilon():
    params = P.with_updates(epsilon=0.003)
    y, t = section_map_minus(default_seed(params), params)
    target = partner_seed(params)
    assert math.hypot(y.w - target.w, y.eta - target.eta) < 0.05
    assert t > 0


def test_plus_map_near_switching_at_tiny_epsilon():
    params = P.with_updates(epsilon=0.003)
    z, t = section_map_plus(partner_seed(params), params)
    target = default_seed(params)
    assert math.hypot(z.w - target.w, z.eta - target.eta) < 0.05
    assert t > 0


def test_transit_time_grows_as_epsilon_shrinks():
    seed = default_seed(P)
    times = [section_map_minus(seed, P.with_updates(epsilon=e))[1] for e in (0.3, 0.03, 0.003)]
    assert times[0] < times[1] < times[2]


def test_nearby_starts_contract_under_minus_map():
    params = P.with_updates(epsilon=0.003)
    x1 = default_seed(params)
    # the seed sits just below the retreat parabola; move further below it
    x2 = SectionPoint(x1.w - 1e-3, x1.eta + 5e-4)
    y1, _ = section_map_minus(x1, params)
    y2, _ = section_map_minus(x2, params)
    assert y1.distance(y2, params) < x1.distance(x2, params)


def test_map_domain_errors():
    eta = 0.8
    wrong_side = SectionPoint(tangency_curve(eta, Regime.ADVANCE, P) + 1.0, eta)
    with pytest.raises(MapUndefined):
        section_map_minus(wrong_side, P)
    with pytest.raises(MapUndefined):
        section_map_minus(SectionPoint(-100.0, 0.25), P)
    with pytest.raises(MapUndefined):
        section_map_plus(default_seed(P), P)


def test_minus_map_undefined_when_advance_sink_is_regular():
    params = P.with_updates(b0=2.0)
    with pytest.raises(MapUndefined) as info:
        section_map_minus(default_seed(params), params, IntegratorConfig(max_time=2000.0))
    assert info.value.termination is not None


def test_composite_map_well_defined_from_seed():
    z, period = composite_map(default_seed(P), P)
    assert classify_boundary_point(z.state(P), P) is BoundaryKind.SIGMA_PLUS
    assert guard_set_membership(z, P)
    assert period > 0


# -- periodic orbit --------------------------------------------------------------------------


def test_orbit_closes(orbit_case):
    params, orbit = orbit_case
    assert orbit.closure_error < 1e-10
    assert orbit.period == pytest.approx(orbit.transit_minus + orbit.transit_plus, rel=1e-15)
    z, period = composite_map(orbit.fixed_point, params)
    assert z.distance(orbit.fixed_point, params) < 1e-9
    back, _ = section_map_plus(orbit.partner_point, params)
    assert back.distance(orbit.fixed_point, params) < 1e-9


def test_orbit_contraction_ratio_below_one(orbit_case):
    _, orbit = orbit_case
    assert 0 < orbit.contraction_estimate < 1


def test_orbit_reintegration_returns_after_one_period(orbit_case):
    params, orbit = orbit_case
    cfg = IntegratorConfig(max_time=orbit.period * (1 + 1e-9), max_events=10)
    traj = evolve_hybrid(orbit.fixed_point.state(params), None, params, cfg)
    assert [e.kind for e in traj.events] == [BoundaryKind.SIGMA_MINUS, BoundaryKind.SIGMA_PLUS]
    final = SectionPoint(traj.events[-1].state.w, traj.events[-1].state.eta)
    assert final.distance(orbit.fixed_point, params) < 1e-9
    # step sequences differ after each restart, so agreement is at integrator tolerance
    assert traj.events[-1].time == pytest.approx(orbit.period, rel=1e-8)


def test_random_seeds_agree(orbit_case):
    params, orbit = orbit_case
    seeds = random_admissible_seeds(params, 5, np.random.default_rng(11))
    for s in seeds:
        other = find_periodic_orbit(s, params)
        assert other.fixed_point.distance(orbit.fixed_point, params) < 1e-8


def test_tiny_epsilon_orbit_switches_near_virtual_sinks():
    params = P.with_updates(epsilon=0.003)
    orbit = find_periodic_orbit(None, params)
    for point, sink in ((orbit.fixed_point, default_seed(params)), (orbit.partner_point, partner_seed(params))):
        assert math.hypot(point.w - sink.w, point.eta - sink.eta) < 0.05


def test_perturbation_decays_geometrically():
    params = P.with_updates(epsilon=0.3)
    orbit = find_periodic_orbit(None, params)
    x = SectionPoint(orbit.fixed_point.w - 1e-2, orbit.fixed_point.eta + 1e-2)
    dists = []
    for _ in range(4):
        x, _ = composite_map(x, params)
        dists.append(x.distance(orbit.fixed_point, params))
    ratios = [b / a for a, b in zip(dists, dists[1:])]
    assert all(r < 0.5 for r in ratios)


def test_orbit_search_refuses_inadmissible_epsilon():
    params = P.with_updates(epsilon=0.35)
    with pytest.raises(ValueError, match="bound"):
        find_periodic_orbit(None, params)


def test_no_orbit_within_iteration_budget_reports_trace():
    params = P.with_updates(epsilon=0.3)
    with pytest.raises(NoOrbitFound) as info:
        find_periodic_orbit(None, params, tol=1e-30, max_iterations=3)
    assert len(info.value.trace) == 3


def test_orbit_result_round_trip(orbit_case):
    _, orbit = orbit_case
    assert OrbitResult.from_dict(orbit.to_dict()) == orbit


def test_random_seeds_admissible_and_reproducible():
    a = random_admissible_seeds(P, 6, np.random.default_rng(3))
    b = random_admissible_seeds(P, 6, np.random.default_rng(3))
    assert a == b
    for s in a:
        assert classify_boundary_point(s.state(P), P) is BoundaryKind.SIGMA_PLUS
        assert guard_set_membership(s, P)


# -- contraction -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def contraction_pair():
    out = {}
    for eps in (0.003, 0.03):
        params = P.with_updates(epsilon=eps)
        orbit = find_periodic_orbit(None, params)
        out[eps] = estimate_contraction(orbit_region(orbit), "minus", 20, params)
    return out


def test_contraction_factor_below_one(contraction_pair):
    for estimate in contraction_pair.values():
        assert estimate.factor < 1
        assert estimate.pairs_used >= 10


def test_contraction_stronger_at_smaller_epsilon(contraction_pair):
    assert contraction_pair[0.003].factor <= contraction_pair[0.03].factor


def test_contraction_norms_consistent(contraction_pair):
    k = math.sqrt(1 + (1 + P.a / P.b) ** 2)
    for e in contraction_pair.values():
        assert e.factor / k <= e.planar_factor * (1 + 1e-9)
        assert e.planar_factor / k <= e.factor * (1 + 1e-9)


def test_contraction_plus_map():
    params = P.with_updates(epsilon=0.03)
    orbit = find_periodic_orbit(None, params)
    region = Region.centered(orbit.partner_point, 0.1, 0.1)
    assert estimate_contraction(region, "plus", 10, params).factor < 1


def test_contraction_rejects_bad_input():
    with pytest.raises(ValueError):
        estimate_contraction(Region(1.0, 1.0, 0.8, 0.9), "minus", 5, P)
    with pytest.raises(ValueError):
        estimate_contraction(Region(0.0, 1.0, 0.8, 0.9), "sideways", 5, P)


def test_contraction_reports_excluded_points():
    # a region straddling the sliding band: some draws are outside the map's domain
    eta = 0.9
    g_plus = tangency_curve(eta, Regime.RETREAT, P)
    region = Region(g_plus - 0.5, g_plus + 0.5, eta - 0.02, eta + 0.02)
    est = estimate_contraction(region, "minus", 5, P)
    assert est.points_excluded > 0
    assert est.exclusion_reasons
