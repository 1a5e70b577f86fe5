import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glacial_cycles.integrator import (
    IntegratorConfig,
    NoCrossingError,
    NotSliding,
    StepMode,
    Termination,
    evolve_hybrid,
    filippov_sliding_field,
    locate_crossing,
    smooth_step,
)
from glacial_cycles.model import (
    BoundaryKind,
    ModelParameters,
    Regime,
    Stability,
    State,
    boundary_ice_line,
    boundary_normal,
    equilibria,
    on_boundary,
    switching_function,
    tangency_curve,
    vector_field,
)
from glacial_cycles.section import default_seed

P = ModelParameters()
RK4 = IntegratorConfig(step_mode=StepMode.FIXED_RK4)


def _sink(params, regime):
    return [r for r in equilibria(params) if r.regime is regime and r.stability is Stability.SINK][0]


# -- configuration ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [{"base_step": 0.0}, {"event_tol": -1.0}, {"max_time": 0.0}, {"rel_tol": 0.0}, {"max_events": 0}],
)
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        IntegratorConfig(**kwargs)


def test_config_accepts_mode_names():
    assert IntegratorConfig(step_mode="rk4").step_mode is StepMode.FIXED_RK4
    # tolerances only matter in adaptive mode
    IntegratorConfig(step_mode="rk4", rel_tol=0.0, abs_tol=0.0)


# -- smooth stepping -----------------------------------------------------------------------


@pytest.mark.parametrize("config", [RK4, IntegratorConfig()], ids=["rk4", "adaptive"])
@pytest.mark.parametrize("regime", [Regime.ADVANCE, Regime.RETREAT])
def test_equilibrium_is_not_moved(config, regime):
    x = _sink(P, regime).state
    y = smooth_step(x, regime, 0.1, P, config)
    assert np.linalg.norm(np.subtract(y, x)) < 1e-12


def test_rk4_local_order():
    x = State(-5.0, 0.6, 0.4)
    steps = np.array([0.2, 0.1, 0.05, 0.025])
    errors = []
    for dt in steps:
        one = np.array(smooth_step(x, Regime.RETREAT, dt, P, RK4))
        half = smooth_step(smooth_step(x, Regime.RETREAT, dt / 2, P, RK4), Regime.RETREAT, dt / 2, P, RK4)
        errors.append(np.linalg.norm(one - np.array(half)))
    slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
    # one-step error is O(dt^5); the acceptance threshold is on order 4
    assert slope >= 3.9


@pytest.mark.parametrize("config", [RK4, IntegratorConfig()], ids=["rk4", "adaptive"])
@pytest.mark.parametrize("regime", [Regime.ADVANCE, Regime.RETREAT])
def test_ice_line_matches_closed_form_with_frozen_climate(config, regime):
    sink = _sink(P, regime).state
    b_r = P.b0 if regime is Regime.ADVANCE else P.b1
    xi0 = 0.2
    x = State(sink.w, sink.eta, xi0)
    dt, n = 0.05, 200
    for _ in range(n):
        x = smooth_step(x, regime, dt, P, config)
    t = dt * n
    exact = sink.xi + (xi0 - sink.xi) * math.exp(-P.epsilon * b_r * t)
    assert abs(x.xi - exact) < 1e-8
    assert abs(x.w - sink.w) < 1e-10 and abs(x.eta - sink.eta) < 1e-12


def test_adaptive_matches_fine_rk4():
    x = State(-5.0, 0.6, 0.4)
    a = smooth_step(x, Regime.ADVANCE, 2.0, P, IntegratorConfig())
    b = x
    for _ in range(2000):
        b = smooth_step(b, Regime.ADVANCE, 1e-3, P, RK4)
    assert np.allclose(a, b, atol=1e-9)


def test_smooth_step_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        smooth_step(State(0, 0.5, 0.5), Regime.ADVANCE, 0.0, P)


# -- crossing location ---------------------------------------------------------------------


def test_chord_crossing_at_linear_root():
    before = State(0.0, 0.6, boundary_ice_line(0.6, P) - 0.01)
    after = State(0.0, 0.6, boundary_ice_line(0.6, P) + 0.03)
    h0, h1 = switching_function(before, P), switching_function(after, P)
    frac, x = locate_crossing(before, after, Regime.RETREAT, P)
    assert frac == pytest.approx(h0 / (h0 - h1), abs=1e-9)
    assert abs(switching_function(x, P)) <= IntegratorConfig().event_tol
    # the returned point is on the far side
    assert switching_function(x, P) <= 0


def test_crossing_requires_sign_change():
    a = State(0.0, 0.6, 0.1)
    with pytest.raises(NoCrossingError):
        locate_crossing(a, State(1.0, 0.6, 0.1), Regime.RETREAT, P)


def _retreat_step_across():
    eta = 0.95
    w = tangency_curve(eta, Regime.RETREAT, P) - 1.0
    before = State(w, eta, boundary_ice_line(eta, P) - 1e-4)
    assert switching_function(before, P) > 0
    dt = 0.05
    after = smooth_step(before, Regime.RETREAT, dt, P, RK4)
    assert switching_function(after, P) < 0
    return before, after, dt


def test_crossing_below_retreat_parabola_is_sigma_plus():
    from glacial_cycles.model import classify_boundary_point

    before, after, dt = _retreat_step_across()
    _, x = locate_crossing(before, after, Regime.RETREAT, P, RK4, dt=dt)
    assert classify_boundary_point(x, P) is BoundaryKind.SIGMA_PLUS


def test_crossing_time_insensitive_to_event_tolerance():
    before, after, dt = _retreat_step_across()
    fine, _ = locate_crossing(before, after, Regime.RETREAT, P, IntegratorConfig("rk4", event_tol=1e-10), dt=dt)
    coarse, x = locate_crossing(before, after, Regime.RETREAT, P, IntegratorConfig("rk4", event_tol=1e-6), dt=dt)
    assert abs(fine - coarse) * dt < 1e-6
    assert abs(switching_function(x, P)) <= 1e-6


# -- sliding field ---------------------------------------------------------------------------


def test_sliding_weights_at_parabolas():
    eta = 0.5
    g_plus = tangency_curve(eta, Regime.RETREAT, P)
    g_minus = tangency_curve(eta, Regime.ADVANCE, P)
    _, q = filippov_sliding_field(on_boundary(g_plus, eta, P), P)
    assert q == pytest.approx(1.0, abs=1e-12)
    _, q = filippov_sliding_field(on_boundary(g_minus, eta, P), P)
    assert q == pytest.approx(0.0, abs=1e-12)


@given(st.floats(0.0, 0.999), st.floats(0.01, 0.99))
def test_sliding_vector_tangent_inside_band(eta, s):
    g_plus = tangency_curve(eta, Regime.RETREAT, P)
    g_minus = tangency_curve(eta, Regime.ADVANCE, P)
    x = on_boundary(g_plus + s * (g_minus - g_plus), eta, P)
    v, q = filippov_sliding_field(x, P)
    assert 0.0 < q < 1.0
    assert abs(v @ boundary_normal(P)) < 1e-10


def test_no_sliding_at_crossing_points():
    eta = 0.5
    with pytest.raises(NotSliding):
        filippov_sliding_field(on_boundary(tangency_curve(eta, Regime.RETREAT, P) - 3, eta, P), P)
    with pytest.raises(ValueError):
        filippov_sliding_field(State(0.0, 0.5, 0.9), P)


# -- hybrid evolution -------------------------------------------------------------------------


def _seed_state(params):
    return default_seed(params).state(params)


def test_trajectory_settles_onto_cycle():
    traj = evolve_hybrid(_seed_state(P), None, P, IntegratorConfig(max_time=600.0))
    assert traj.termination is Termination.MAX_TIME
    assert len(traj.events) >= 8
    kinds = [e.kind for e in traj.events]
    assert all(k in (BoundaryKind.SIGMA_PLUS, BoundaryKind.SIGMA_MINUS) for k in kinds)
    assert all(a is not b for a, b in zip(kinds, kinds[1:]))
    late = [e for e in traj.events if e.kind is BoundaryKind.SIGMA_PLUS][-2:]
    assert np.linalg.norm(np.subtract(late[0].state, late[1].state)) < 1e-8


def test_regular_equilibrium_stays_put():
    params = P.with_updates(b0=2.0)
    sink = _sink(params, Regime.ADVANCE)
    traj = evolve_hybrid(sink.state, Regime.ADVANCE, params, IntegratorConfig(max_time=100.0))
    assert traj.termination is Termination.MAX_TIME
    assert len(traj.segments) == 1 and not traj.events
    assert np.linalg.norm(np.subtract(traj.final_state, sink.state)) < 1e-9


def test_start_regime_follows_position():
    x = _seed_state(P)
    a = evolve_hybrid(x, Regime.ADVANCE, P, IntegratorConfig(max_time=100.0))
    b = evolve_hybrid(x, Regime.RETREAT, P, IntegratorConfig(max_time=100.0))
    assert a.events[0] == b.events[0]
    assert "overridden" in b.diagnostic and a.diagnostic == ""


def test_event_budget_termination():
    traj = evolve_hybrid(_seed_state(P), None, P.with_updates(epsilon=0.3), IntegratorConfig(max_events=3))
    assert traj.termination is Termination.EVENT_BUDGET
    assert len(traj.events) == 3


def test_leaving_state_space_is_reported():
    traj = evolve_hybrid(State(20.0, 0.999, 0.999), None, P, IntegratorConfig(max_time=100.0))
    assert traj.termination is Termination.LEFT_STATE_SPACE
    assert not traj.final_state.in_state_space()
    outside = evolve_hybrid(State(0.0, 1.2, 0.5), None, P)
    assert outside.termination is Termination.LEFT_STATE_SPACE


def test_start_on_sliding_band_or_parabola_terminates():
    eta = 0.5
    g_plus = tangency_curve(eta, Regime.RETREAT, P)
    g_minus = tangency_curve(eta, Regime.ADVANCE, P)
    mid = evolve_hybrid(on_boundary(0.5 * (g_plus + g_minus), eta, P), None, P)
    assert mid.termination is Termination.SLIDING_ENTRY
    tangent = evolve_hybrid(on_boundary(g_plus, eta, P), None, P)
    assert tangent.termination is Termination.TANGENCY


def _check_invariants(traj, params, cfg):
    times, _, _ = traj.samples()
    assert np.all(np.diff(times) > 0)
    n = boundary_normal(params)
    for e in traj.events:
        assert abs(switching_function(e.state, params)) <= cfg.event_tol
        assert e.regime_after is not e.regime_before
        d_minus = vector_field(e.state, Regime.ADVANCE, params) @ n
        d_plus = vector_field(e.state, Regime.RETREAT, params) @ n
        assert d_minus * d_plus > 0
    for seg in traj.segments:
        h = np.array([switching_function(x, params) for x in seg.states])
        if seg.regime is Regime.ADVANCE:
            assert np.all(h <= cfg.event_tol)
        else:
            assert np.all(h >= -cfg.event_tol)
    for e, seg in zip(traj.events, traj.segments[1:]):
        assert seg.times[0] == e.time and tuple(seg.states[0]) == tuple(e.state)
        assert seg.regime is e.regime_after


@pytest.mark.parametrize("eps", [0.003, 0.03, 0.3])
def test_trajectory_invariants(eps):
    params = P.with_updates(epsilon=eps)
    cfg = IntegratorConfig(max_time=min(3000.0, 40.0 / eps))
    traj = evolve_hybrid(_seed_state(params), None, params, cfg)
    assert traj.events
    _check_invariants(traj, params, cfg)


@settings(max_examples=25, deadline=None)
@given(
    st.floats(-25.0, 10.0),
    st.floats(0.3, 0.98),
    st.floats(0.05, 0.95),
    st.floats(0.01, 0.3),
)
def test_invariants_from_random_starts(w, eta, xi, eps):
    params = P.with_updates(epsilon=eps)
    cfg = IntegratorConfig(max_time=50.0)
    traj = evolve_hybrid(State(w, eta, xi), None, params, cfg)
    _check_invariants(traj, params, cfg)


def test_crossing_time_converges_under_step_halving():
    params = P.with_updates(epsilon=0.3)
    times = []
    for h in (0.04, 0.02, 0.01):
        cfg = IntegratorConfig(step_mode="rk4", base_step=h, max_events=1)
        times.append(evolve_hybrid(_seed_state(params), None, params, cfg).events[0].time)
    d1, d2 = abs(times[0] - times[1]), abs(times[1] - times[2])
    assert d2 < d1
    assert d1 < 1e-4


def test_ice_line_never_overshoots_frozen_equilibrium():
    params = P.with_updates(b0=2.0)
    sink = _sink(params, Regime.ADVANCE).state
    start = State(sink.w, sink.eta, min(1.0, sink.xi + 0.1))
    traj = evolve_hybrid(start, None, params, IntegratorConfig(max_time=200.0))
    xi = traj.segments[0].states[:, 2]
    assert np.all(xi >= sink.xi - 1e-12)
    assert np.all(np.diff(xi) <= 1e-15)


def test_deterministic():
    a = evolve_hybrid(_seed_state(P), None, P, IntegratorConfig(max_time=300.0))
    b = evolve_hybrid(_seed_state(P), None, P, IntegratorConfig(max_time=300.0))
    assert a.events == b.events
    assert all(np.array_equal(s.states, r.states) for s, r in zip(a.segments, b.segments))


def test_resample_keeps_segment_ends():
    traj = evolve_hybrid(_seed_state(P), None, P, IntegratorConfig(max_time=200.0))
    t, x, regimes = traj.resample(0.5)
    assert np.all(np.diff(t) >= 0)
    for e in traj.events:
        assert e.time in t
    assert t[-1] == traj.final_time
    assert len(regimes) == len(t) == len(x)


def test_unrecorded_run_keeps_endpoints():
    full = evolve_hybrid(_seed_state(P), None, P, IntegratorConfig(max_time=200.0))
    lean = evolve_hybrid(_seed_state(P), None, P, IntegratorConfig(max_time=200.0), record=False)
    assert lean.events == full.events
    assert lean.final_state == full.final_state
    assert all(len(s.times) <= 2 for s in lean.segments)
