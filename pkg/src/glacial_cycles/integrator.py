"""Event-accurate integration of the two-regime piecewise-smooth system.

Inside each half-space the active smooth field is stepped either with the
classical 4-stage Runge-Kutta scheme at a fixed step or with the
Dormand-Prince 5(4) embedded pair under error control.  After every step
the switching function is checked; a sign change triggers bisection on
re-stepped sub-intervals of that step until the crossing point lies within
``event_tol`` of the plane, on the far side.  Transversal crossings switch
the regime, anything else (tangency, sliding) ends the trajectory.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .model import (
    BoundaryKind,
    ModelParameters,
    Regime,
    State,
    classify_boundary_point,
    regime_constants,
    regime_of,
    switching_function,
    w_nullcline_coefficients,
)

Vec = tuple  # (w, eta, xi) as plain floats in the hot loop


class StepMode(enum.Enum):
    FIXED_RK4 = "rk4"
    ADAPTIVE = "adaptive"


class Termination(enum.Enum):
    MAX_TIME = "max_time"
    SLIDING_ENTRY = "sliding_entry"
    LEFT_STATE_SPACE = "left_state_space"
    EVENT_BUDGET = "event_budget"
    TANGENCY = "tangency"


class IntegrationError(RuntimeError):
    """Numerical failure inside the integrator (not a normal termination)."""


class StepSizeUnderflow(IntegrationError):
    pass


class CrossingNotConverged(IntegrationError):
    pass


class NoCrossingError(ValueError):
    """``locate_crossing`` called on a step without a sign change."""


class NotSliding(ValueError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    step_mode: StepMode = StepMode.ADAPTIVE
    base_step: float = 1e-3
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    event_tol: float = 1e-10
    tangency_tol: float = 1e-9
    max_time: float = 1e4
    max_events: int = 1000
    # adaptive mode only
    max_step: float = 1.0
    min_step: float = 1e-12

    def __post_init__(self):
        if isinstance(self.step_mode, str):
            object.__setattr__(self, "step_mode", StepMode(self.step_mode))
        for name in ("base_step", "event_tol", "max_time", "tangency_tol", "max_step", "min_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.step_mode is StepMode.ADAPTIVE and not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("adaptive mode requires positive rel_tol and abs_tol")
        if self.max_events < 1:
            raise ValueError("max_events must be at least 1")


@dataclass(frozen=True)
class CrossingEvent:
    time: float
    state: State
    kind: BoundaryKind
    regime_before: Regime
    regime_after: Regime


@dataclass(frozen=True)
class Segment:
    regime: Regime
    times: np.ndarray
    states: np.ndarray  # shape (n, 3)


@dataclass(frozen=True)
class HybridTrajectory:
    segments: tuple[Segment, ...]
    events: tuple[CrossingEvent, ...]
    termination: Termination
    diagnostic: str = ""

    @property
    def final_time(self) -> float:
        return float(self.segments[-1].times[-1])

    @property
    def final_state(self) -> State:
        return State(*map(float, self.segments[-1].states[-1]))

    @property
    def final_regime(self) -> Regime:
        return self.segments[-1].regime

    def samples(self) -> tuple[np.ndarray, np.ndarray, list[Regime]]:
        """All samples concatenated: times, ``(n, 3)`` states, regime per sample."""
        times = np.concatenate([s.times for s in self.segments])
        states = np.concatenate([s.states for s in self.segments])
        regimes = [s.regime for s in self.segments for _ in range(len(s.times))]
        return times, states, regimes

    def resample(self, dt: float) -> tuple[np.ndarray, np.ndarray, list[Regime]]:
        """Linear interpolation onto a uniform grid, segment by segment.

        Each segment keeps its own first and last sample so crossings stay
        visible in the output.
        """
        if not dt > 0:
            raise ValueError("dt must be positive")
        t_out, x_out, r_out = [], [], []
        for seg in self.segments:
            t0, t1 = seg.times[0], seg.times[-1]
            k0 = math.ceil(t0 / dt - 1e-9)
            grid = [t0] + [k * dt for k in range(k0, int(math.floor(t1 / dt)) + 1) if t0 < k * dt < t1]
            if t1 > t0:
                grid.append(t1)
            grid = np.asarray(grid)
            cols = [np.interp(grid, seg.times, seg.states[:, j]) for j in range(3)]
            t_out.append(grid)
            x_out.append(np.column_stack(cols))
            r_out.extend([seg.regime] * len(grid))
        return np.concatenate(t_out), np.concatenate(x_out), r_out


# -- smooth fields as float closures -----------------------------------------


def field_function(regime: Regime, params: ModelParameters) -> Callable[[Vec], Vec]:
    """Float-tuple version of :func:`model.vector_field` for the stepping loop."""
    c0, c1, _, c3 = (float(c) for c in w_nullcline_coefficients(params))
    b_r, Tc = regime_constants(regime, params)
    k = -params.L * params.s2 * (1.0 - params.alpha0)  # G = k * p2(eta) + Tc
    g0 = Tc - 0.5 * k
    g2 = 1.5 * k
    tau, rho, eps, a = params.tau, params.rho, params.epsilon, params.a

    def f(x):
        w, eta, xi = x
        e2 = eta * eta
        return (
            -tau * (w - (c0 + eta * (c1 + c3 * e2))),
            rho * (w - (g0 + g2 * e2)),
            eps * (b_r * (eta - xi) - a * (1.0 - eta)),
        )

    return f


def _rk4(f, x, dt):
    k1 = f(x)
    k2 = f(tuple(xi + 0.5 * dt * ki for xi, ki in zip(x, k1)))
    k3 = f(tuple(xi + 0.5 * dt * ki for xi, ki in zip(x, k2)))
    k4 = f(tuple(xi + dt * ki for xi, ki in zip(x, k3)))
    return tuple(
        xi + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d) for xi, a, b, c, d in zip(x, k1, k2, k3, k4)
    )


# Dormand-Prince 5(4) tableau
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# fifth-order minus embedded fourth-order weights
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71 / 57600,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)


def _dopri(f, x, dt, k1, rtol, atol):
    """One Dormand-Prince step; returns (x_new, scaled error norm, f(x_new))."""
    k2 = f(tuple(xi + dt * _A21 * a for xi, a in zip(x, k1)))
    k3 = f(tuple(xi + dt * (_A31 * a + _A32 * b) for xi, a, b in zip(x, k1, k2)))
    k4 = f(tuple(xi + dt * (_A41 * a + _A42 * b + _A43 * c) for xi, a, b, c in zip(x, k1, k2, k3)))
    k5 = f(
        tuple(
            xi + dt * (_A51 * a + _A52 * b + _A53 * c + _A54 * d)
            for xi, a, b, c, d in zip(x, k1, k2, k3, k4)
        )
    )
    k6 = f(
        tuple(
            xi + dt * (_A61 * a + _A62 * b + _A63 * c + _A64 * d + _A65 * e)
            for xi, a, b, c, d, e in zip(x, k1, k2, k3, k4, k5)
        )
    )
    x_new = tuple(
        xi + dt * (_B1 * a + _B3 * c + _B4 * d + _B5 * e + _B6 * g)
        for xi, a, c, d, e, g in zip(x, k1, k3, k4, k5, k6)
    )
    k7 = f(x_new)
    acc = 0.0
    for xi, xn, a, c, d, e, g, q in zip(x, x_new, k1, k3, k4, k5, k6, k7):
        err = dt * (_E1 * a + _E3 * c + _E4 * d + _E5 * e + _E6 * g + _E7 * q)
        scale = atol + rtol * max(abs(xi), abs(xn))
        acc += (err / scale) ** 2
    return x_new, math.sqrt(acc / 3.0), k7


def _new_step(dt, err):
    if err == 0.0:
        return dt * 5.0
    return dt * min(5.0, max(0.2, 0.9 * err ** -0.2))


def smooth_step(
    state, regime: Regime, dt: float, params: ModelParameters, config: Optional[IntegratorConfig] = None
) -> State:
    """Advance the regime's smooth field by ``dt``, ignoring the switching plane.

    Fixed mode performs exactly one classical Runge-Kutta step.  Adaptive
    mode covers ``dt`` with as many error-controlled sub-steps as needed.

    Raises
    ------
    StepSizeUnderflow
        Adaptive sub-step fell below ``config.min_step``.
    """
    cfg = config or IntegratorConfig()
    if not dt > 0:
        raise ValueError("dt must be positive")
    f = field_function(regime, params)
    x = tuple(float(v) for v in state)
    if cfg.step_mode is StepMode.FIXED_RK4:
        return State(*_rk4(f, x, dt))

    t, h, k1 = 0.0, dt, f(x)
    while t < dt:
        h = min(h, dt - t)
        x_new, err, k7 = _dopri(f, x, h, k1, cfg.rel_tol, cfg.abs_tol)
        if err <= 1.0:
            t = dt if h >= dt - t else t + h
            x, k1 = x_new, k7
            h = _new_step(h, err)
        else:
            h = _new_step(h, err)
            if h < cfg.min_step:
                raise StepSizeUnderflow(f"step {h:.3g} below minimum at t = {t:.6g}")
    return State(*x)


def _single_step(f, x, dt, cfg, k1=None):
    if cfg.step_mode is StepMode.FIXED_RK4:
        return _rk4(f, x, dt)
    return _dopri(f, x, dt, k1 if k1 is not None else f(x), cfg.rel_tol, cfg.abs_tol)[0]


def _bisect_crossing(path, h_of, h_before, h_after, tol, max_iter=100):
    """Bisect ``theta`` in (0, 1] down to floating-point resolution.

    Returns the far-side end of the final bracket, which must satisfy
    ``|h| <= tol``.  Running the bracket to exhaustion rather than stopping at
    the first point inside ``tol`` keeps the crossing a smooth function of
    the step's initial state (section-map fixed points depend on that).
    """
    if h_after == 0.0:
        return 1.0, None
    far_positive = h_after > 0
    lo, hi = 0.0, 1.0
    x_hi, h_hi = None, h_after
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        x_mid = path(mid)
        h_mid = h_of(x_mid)
        if h_mid == 0.0 or (h_mid > 0) == far_positive:
            hi, x_hi, h_hi = mid, x_mid, h_mid
            if h_mid == 0.0:
                break
        else:
            lo = mid
    if abs(h_hi) > tol:
        raise CrossingNotConverged(f"no point within {tol:g} of the plane after {max_iter} bisections")
    return hi, x_hi


def locate_crossing(
    state_before,
    state_after,
    regime: Regime,
    params: ModelParameters,
    config: Optional[IntegratorConfig] = None,
    dt: Optional[float] = None,
) -> tuple[float, State]:
    """Refine a boundary crossing inside one step.

    With ``dt`` given, candidate points are obtained by re-stepping the
    regime field from ``state_before`` over ``theta * dt``; without it the
    chord between the two states is bisected.  The returned point lies on
    the ``state_after`` side of the plane with ``|h| <= event_tol``.

    Returns
    -------
    fraction : float
        Position of the crossing as a fraction of the step, in (0, 1].
    state : State
    """
    cfg = config or IntegratorConfig()
    x0 = tuple(float(v) for v in state_before)
    x1 = tuple(float(v) for v in state_after)
    h_of = lambda x: switching_function(x, params)  # noqa: E731
    h0, h1 = h_of(x0), h_of(x1)
    if not ((h0 <= 0.0 < h1) or (h1 < 0.0 <= h0)):
        raise NoCrossingError(f"switching function does not change sign ({h0:.3g} -> {h1:.3g})")

    if dt is None:
        path = lambda th: tuple(a + th * (b - a) for a, b in zip(x0, x1))  # noqa: E731
    else:
        f = field_function(regime, params)
        k1 = f(x0)
        path = lambda th: _single_step(f, x0, th * dt, cfg, k1)  # noqa: E731
    frac, x = _bisect_crossing(path, h_of, h0, h1, cfg.event_tol)
    return frac, State(*(x1 if x is None else x))


def filippov_sliding_field(
    state, params: ModelParameters, *, boundary_tol: float = 1e-9
) -> tuple[np.ndarray, float]:
    """Convex combination of the two fields that is tangent to the plane.

    Returns ``((1 - q) V_minus + q V_plus, q)``.

    Raises
    ------
    NotSliding
        The point is a transversal crossing point: no ``q`` in [0, 1] works.
    """
    from .model import boundary_normal, vector_field

    h = switching_function(state, params)
    if not abs(h) < boundary_tol:
        raise ValueError(f"point is not on the switching plane (|h| = {abs(h):.3g})")
    n = boundary_normal(params)
    v_minus = vector_field(state, Regime.ADVANCE, params)
    v_plus = vector_field(state, Regime.RETREAT, params)
    d_minus, d_plus = float(v_minus @ n), float(v_plus @ n)
    denom = d_minus - d_plus
    if denom == 0.0:
        if d_minus == 0.0:
            return v_minus, 0.0
        raise NotSliding("both fields cross the plane in the same direction")
    q = d_minus / denom
    # on a parabola one of the normal components is zero up to roundoff
    if -1e-12 < q < 0.0 or 1.0 < q < 1.0 + 1e-12:
        q = min(max(q, 0.0), 1.0)
    if not 0.0 <= q <= 1.0:
        raise NotSliding(f"transversal crossing point (q = {q:.6g})")
    return (1.0 - q) * v_minus + q * v_plus, q


_EXPECTED_EXIT = {Regime.ADVANCE: BoundaryKind.SIGMA_MINUS, Regime.RETREAT: BoundaryKind.SIGMA_PLUS}
_ENTRY_REGIME = {BoundaryKind.SIGMA_PLUS: Regime.ADVANCE, BoundaryKind.SIGMA_MINUS: Regime.RETREAT}


@dataclass
class _SegmentBuffer:
    regime: Regime
    record: bool
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def add(self, t, x):
        if self.record or len(self.times) < 2:
            self.times.append(t)
            self.states.append(x)
        else:
            self.times[-1] = t
            self.states[-1] = x

    def freeze(self) -> Segment:
        return Segment(self.regime, np.asarray(self.times, dtype=float), np.asarray(self.states, dtype=float))


def _in_space(x) -> bool:
    return 0.0 <= x[1] <= 1.0 and 0.0 <= x[2] <= 1.0


def evolve_hybrid(
    start,
    start_regime: Optional[Regime],
    params: ModelParameters,
    config: Optional[IntegratorConfig] = None,
    *,
    record: bool = True,
) -> HybridTrajectory:
    """Integrate a Filippov trajectory through transversal boundary crossings.

    The active field is dictated by position: off the plane by the
    half-space, on the plane by the crossing direction.  ``start_regime``
    is checked against that and a mismatch is noted in ``diagnostic``.

    With ``record=False`` only the endpoints of each segment are kept.
    """
    cfg = config or IntegratorConfig()
    x: Vec = tuple(float(v) for v in start)
    t = 0.0
    h_of = lambda y: switching_function(y, params)  # noqa: E731
    boundary_tol = 2.0 * cfg.event_tol
    notes = []

    def finish(bufs, events, term, note=""):
        if note:
            notes.append(note)
        return HybridTrajectory(tuple(b.freeze() for b in bufs), tuple(events), term, "; ".join(notes))

    if abs(h_of(x)) <= cfg.event_tol:
        kind = classify_boundary_point(x, params, boundary_tol=boundary_tol, tangency_tol=cfg.tangency_tol)
        regime = _ENTRY_REGIME.get(kind, start_regime or Regime.ADVANCE)
    else:
        kind = None
        regime = regime_of(x, params)
    if start_regime is not None and start_regime is not regime:
        notes.append(f"start regime {start_regime.value} overridden by position ({regime.value})")

    buf = _SegmentBuffer(regime, record)
    buf.add(t, x)
    bufs = [buf]
    events: list[CrossingEvent] = []

    if not _in_space(x):
        return finish(bufs, events, Termination.LEFT_STATE_SPACE, "start outside the state space")
    if kind is not None and kind not in _ENTRY_REGIME:
        term = Termination.TANGENCY if kind.name.startswith("TANGENCY") else Termination.SLIDING_ENTRY
        return finish(bufs, events, term, f"start on the plane at a {kind.value} point")

    adaptive = cfg.step_mode is StepMode.ADAPTIVE
    f = field_function(regime, params)
    k1 = f(x) if adaptive else None
    dt = cfg.base_step
    while True:
        if t >= cfg.max_time:
            return finish(bufs, events, Termination.MAX_TIME)
        step = min(dt, cfg.max_time - t)
        if adaptive:
            step = min(step, cfg.max_step)
            while True:
                x_new, err, k_new = _dopri(f, x, step, k1, cfg.rel_tol, cfg.abs_tol)
                if err <= 1.0:
                    next_dt = _new_step(step, err)
                    break
                step = _new_step(step, err)
                if step < cfg.min_step:
                    raise StepSizeUnderflow(f"step {step:.3g} below minimum at t = {t:.6g}")
        else:
            x_new = _rk4(f, x, step)
            k_new = None
            next_dt = cfg.base_step

        h_new = h_of(x_new)
        crossed = h_new > 0.0 if regime is Regime.ADVANCE else h_new < 0.0
        if crossed:
            x0, k0, s0 = x, k1, step
            path = lambda th: _single_step(f, x0, th * s0, cfg, k0)  # noqa: E731
            frac, xc = _bisect_crossing(path, h_of, h_of(x), h_new, cfg.event_tol)
            xc = x_new if xc is None else xc
            tc = t + frac * step
            kind = classify_boundary_point(xc, params, boundary_tol=boundary_tol, tangency_tol=cfg.tangency_tol)
            if kind is not _EXPECTED_EXIT[regime]:
                buf.add(tc, xc)
                term = Termination.TANGENCY if kind.name.startswith("TANGENCY") else Termination.SLIDING_ENTRY
                return finish(bufs, events, term, f"reached the plane at a {kind.value} point, t = {tc:.10g}")
            new_regime = regime.other
            events.append(CrossingEvent(tc, State(*xc), kind, regime, new_regime))
            regime = new_regime
            buf = _SegmentBuffer(regime, record)
            buf.add(tc, xc)
            bufs.append(buf)
            x, t = xc, tc
            f = field_function(regime, params)
            k1 = f(x) if adaptive else None
            # the field just changed discontinuously; the old step estimate says nothing about the new one
            dt = cfg.base_step
            if len(events) >= cfg.max_events:
                return finish(bufs, events, Termination.EVENT_BUDGET)
            continue

        t = cfg.max_time if step == cfg.max_time - t else t + step
        x, k1 = x_new, k_new
        buf.add(t, x)
        if not _in_space(x):
            return finish(bufs, events, Termination.LEFT_STATE_SPACE, f"left the state space at t = {t:.10g}")
        dt = next_dt
