"""Boundary-to-boundary section maps and the periodic orbit they produce.

``section_map_minus`` flows the advance field from the retreat-exit part of
the switching plane until the trajectory comes back to the plane on the
advance-exit part; ``section_map_plus`` is the mirror image.  Their
composition is iterated (plain Picard iteration) to the fixed point that
carries the attracting periodic orbit.

Both maps are only meaningful above the stable manifold of the advance
saddle (the guard set).  Because the ``(w, eta)`` equations do not see
``xi``, that manifold is a curve ``w = m(eta)`` in the plane and the test is
planar.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .integrator import IntegratorConfig, Termination, evolve_hybrid
from .model import (
    BoundaryKind,
    ModelParameters,
    NotOnBoundaryError,
    Regime,
    State,
    classify_boundary_point,
    epsilon_bound,
    eta_nullcline,
    jacobian,
    on_boundary,
    regime_saddle,
    regime_sink,
    w_nullcline,
)

ORBIT_TOL = 1e-10
MAX_ITERATIONS = 500
SEPARATRIX_OFFSET = 1e-6
SEPARATRIX_W_RANGE = (-60.0, 30.0)


class MapUndefined(RuntimeError):
    """A section map could not be applied; carries the integrator's verdict."""

    def __init__(self, message: str, termination: Optional[Termination] = None):
        super().__init__(message)
        self.termination = termination


class NoOrbitFound(RuntimeError):
    def __init__(self, message: str, trace: tuple[float, ...] = ()):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SectionPoint:
    """A point of the switching plane, parametrized by ``(w, eta)``."""

    w: float
    eta: float

    def state(self, params: ModelParameters) -> State:
        return on_boundary(self.w, self.eta, params)

    def distance(self, other: "SectionPoint", params: ModelParameters, norm: str = "sigma") -> float:
        """Euclidean distance of the embedded points (``norm="sigma"``) or in ``(w, eta)``."""
        dw = self.w - other.w
        de = self.eta - other.eta
        if norm == "planar":
            return math.hypot(dw, de)
        if norm != "sigma":
            raise ValueError(f"unknown norm {norm!r}")
        slope = 1.0 + params.a / params.b
        return math.hypot(dw, de, slope * de)


def default_section_config() -> IntegratorConfig:
    return IntegratorConfig()


# -- guard set -----------------------------------------------------------------


@dataclass(frozen=True)
class Separatrix:
    """Stable manifold of the advance saddle as a table ``w = m(eta)``."""

    eta: np.ndarray
    w: np.ndarray
    saddle: tuple[float, float]

    def __call__(self, eta):
        return np.interp(eta, self.eta, self.w)


@lru_cache(maxsize=64)
def advance_separatrix(params: ModelParameters) -> Separatrix:
    """Backward-integrate the planar advance flow from the saddle's stable direction."""
    saddle = regime_saddle(params, Regime.ADVANCE)
    block = jacobian((saddle.w, saddle.eta, 0.0), Regime.ADVANCE, params)[:2, :2]
    vals, vecs = np.linalg.eig(block)
    stable = np.real(vecs[:, int(np.argmin(np.real(vals)))])
    stable = stable / np.linalg.norm(stable)

    def reversed_flow(t, y):
        w, eta = y
        return [
            params.tau * (w - w_nullcline(eta, params)),
            -params.rho * (w - eta_nullcline(eta, Regime.ADVANCE, params)),
        ]

    w_lo, w_hi = SEPARATRIX_W_RANGE

    def leave_w(t, y):
        return (y[0] - w_lo) * (w_hi - y[0])

    def leave_eta(t, y):
        return (y[1] + 0.1) * (1.1 - y[1])

    leave_w.terminal = True
    leave_eta.terminal = True

    branches = []
    for sign in (1.0, -1.0):
        y0 = np.array([saddle.w, saddle.eta]) + sign * SEPARATRIX_OFFSET * stable
        sol = solve_ivp(
            reversed_flow,
            (0.0, 1e3),
            y0,
            method="DOP853",
            rtol=1e-11,
            atol=1e-12,
            max_step=0.02,
            events=(leave_w, leave_eta),
        )
        branches.append(sol.y)

    pts = np.concatenate([branches[0], [[saddle.w], [saddle.eta]], branches[1]], axis=1)
    order = np.argsort(pts[1])
    eta, w = pts[1][order], pts[0][order]
    keep = np.concatenate([[True], np.diff(eta) > 0])
    return Separatrix(eta[keep], w[keep], (saddle.w, saddle.eta))


def guard_set_membership(x: SectionPoint, params: ModelParameters, config=None) -> bool:
    """True when ``x`` lies strictly above the advance saddle's stable manifold."""
    return bool(x.w > advance_separatrix(params)(x.eta))


# -- section maps ----------------------------------------------------------------


def _section_map(x, params, config, needed: BoundaryKind, regime: Regime, target: BoundaryKind):
    cfg = replace(config or default_section_config(), max_events=1)
    state = x.state(params)
    try:
        kind = classify_boundary_point(
            state, params, boundary_tol=2 * cfg.event_tol, tangency_tol=cfg.tangency_tol
        )
    except NotOnBoundaryError as exc:
        raise MapUndefined(str(exc)) from exc
    if kind is not needed:
        raise MapUndefined(f"start point is {kind.value}, map needs {needed.value}")
    if not guard_set_membership(x, params):
        raise MapUndefined("start point lies below the advance saddle's stable manifold")

    traj = evolve_hybrid(state, regime, params, cfg, record=False)
    if traj.termination is not Termination.EVENT_BUDGET:
        raise MapUndefined(
            f"no return to the plane: {traj.termination.value} {traj.diagnostic}".strip(), traj.termination
        )
    event = traj.events[0]
    if event.kind is not target:
        raise MapUndefined(f"returned at a {event.kind.value} point", traj.termination)
    y = SectionPoint(event.state.w, event.state.eta)
    if not guard_set_membership(y, params):
        raise MapUndefined("image lies below the advance saddle's stable manifold")
    return y, event.time


def section_map_minus(x: SectionPoint, params: ModelParameters, config=None) -> tuple[SectionPoint, float]:
    """Flow the advance field from the retreat-exit set back to the plane.

    Returns the landing point and the transit time.

    Raises
    ------
    MapUndefined
        Start not in the retreat-exit set or the guard set, or the trajectory
        ends (tangency, sliding, state-space exit, time budget) before
        returning on the advance-exit set.
    """
    return _section_map(x, params, config, BoundaryKind.SIGMA_PLUS, Regime.ADVANCE, BoundaryKind.SIGMA_MINUS)


def section_map_plus(y: SectionPoint, params: ModelParameters, config=None) -> tuple[SectionPoint, float]:
    """Mirror of :func:`section_map_minus`: retreat field, advance-exit to retreat-exit."""
    return _section_map(y, params, config, BoundaryKind.SIGMA_MINUS, Regime.RETREAT, BoundaryKind.SIGMA_PLUS)


def composite_map(x: SectionPoint, params: ModelParameters, config=None) -> tuple[SectionPoint, float]:
    y, t_minus = section_map_minus(x, params, config)
    z, t_plus = section_map_plus(y, params, config)
    return z, t_minus + t_plus


# -- periodic orbit --------------------------------------------------------------


def default_seed(params: ModelParameters) -> SectionPoint:
    """Projection of the retreat sink onto the plane along ``xi``."""
    s = regime_sink(params, Regime.RETREAT)
    return SectionPoint(s.w, s.eta)


def partner_seed(params: ModelParameters) -> SectionPoint:
    s = regime_sink(params, Regime.ADVANCE)
    return SectionPoint(s.w, s.eta)


@dataclass(frozen=True)
class OrbitResult:
    fixed_point: SectionPoint
    partner_point: SectionPoint
    period: float
    closure_error: float
    contraction_estimate: Optional[float]
    iterations: int
    transit_minus: float
    transit_plus: float
    trace: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "fixed_point": {"w": self.fixed_point.w, "eta": self.fixed_point.eta},
            "partner_point": {"w": self.partner_point.w, "eta": self.partner_point.eta},
            "period": self.period,
            "closure_error": self.closure_error,
            "contraction_estimate": self.contraction_estimate,
            "iterations": self.iterations,
            "transit_minus": self.transit_minus,
            "transit_plus": self.transit_plus,
            "trace": list(self.trace),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OrbitResult":
        return cls(
            fixed_point=SectionPoint(**d["fixed_point"]),
            partner_point=SectionPoint(**d["partner_point"]),
            period=d["period"],
            closure_error=d["closure_error"],
            contraction_estimate=d["contraction_estimate"],
            iterations=d["iterations"],
            transit_minus=d["transit_minus"],
            transit_plus=d["transit_plus"],
            trace=tuple(d["trace"]),
        )


def _contraction_from_trace(trace, tol):
    ratios = [trace[i + 1] / trace[i] for i in range(len(trace) - 1) if trace[i] > 0]
    if not ratios:
        return None
    clean = [trace[i + 1] / trace[i] for i in range(len(trace) - 1) if trace[i] > 0 and trace[i + 1] >= 10 * tol]
    return max(clean) if clean else ratios[0]


def find_periodic_orbit(
    seed: Optional[SectionPoint],
    params: ModelParameters,
    config=None,
    *,
    tol: float = ORBIT_TOL,
    max_iterations: int = MAX_ITERATIONS,
    allow_inadmissible: bool = False,
) -> OrbitResult:
    """Iterate the composite section map to its fixed point.

    Parameters
    ----------
    seed : SectionPoint or None
        Starting point on the retreat-exit set; ``None`` uses the projected
        retreat sink.
    tol : float
        Stop once successive returns differ by less than this (embedded norm).
    allow_inadmissible : bool
        Skip the check that ``epsilon`` keeps the tangency parabolas apart.

    Raises
    ------
    NoOrbitFound
        No convergence within ``max_iterations``; ``trace`` holds the
        successive return distances.
    MapUndefined
        An iterate left the domain of the section maps.
    """
    if not allow_inadmissible and not params.epsilon < epsilon_bound(params):
        raise ValueError(
            f"epsilon = {params.epsilon} is not below the bound {epsilon_bound(params):.6g}"
        )
    x = seed if seed is not None else default_seed(params)
    trace: list[float] = []
    for k in range(1, max_iterations + 1):
        y, t_minus = section_map_minus(x, params, config)
        z, t_plus = section_map_plus(y, params, config)
        d = x.distance(z, params)
        trace.append(d)
        if d < tol:
            return OrbitResult(
                fixed_point=x,
                partner_point=y,
                period=t_minus + t_plus,
                closure_error=d,
                contraction_estimate=_contraction_from_trace(trace, tol),
                iterations=k,
                transit_minus=t_minus,
                transit_plus=t_plus,
                trace=tuple(trace),
            )
        x = z
    raise NoOrbitFound(f"no fixed point within {max_iterations} iterations (last step {trace[-1]:.3g})", tuple(trace))


def random_admissible_seeds(
    params: ModelParameters,
    n: int,
    rng: np.random.Generator,
    *,
    eta_range: tuple[float, float] = (0.75, 0.99),
    w_floor: float = -12.0,
    margin: float = 0.05,
) -> list[SectionPoint]:
    """Draw points of the retreat-exit set above the separatrix."""
    sep = advance_separatrix(params)
    seeds: list[SectionPoint] = []
    attempts = 0
    while len(seeds) < n:
        attempts += 1
        if attempts > 1000 * max(n, 1):
            raise RuntimeError("could not draw admissible seeds from the requested band")
        eta = rng.uniform(*eta_range)
        lo = max(float(sep(eta)), w_floor) + margin
        hi = float(eta_nullcline(eta, Regime.RETREAT, params)) - margin
        if hi <= lo:
            continue
        x = SectionPoint(float(rng.uniform(lo, hi)), float(eta))
        kind = classify_boundary_point(x.state(params), params)
        if kind is BoundaryKind.SIGMA_PLUS and guard_set_membership(x, params):
            seeds.append(x)
    return seeds


# -- contraction ------------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle in ``(w, eta)`` on the switching plane."""

    w_min: float
    w_max: float
    eta_min: float
    eta_max: float

    @classmethod
    def centered(cls, center: SectionPoint, w_width: float, eta_width: float) -> "Region":
        return cls(
            center.w - 0.5 * w_width,
            center.w + 0.5 * w_width,
            center.eta - 0.5 * eta_width,
            center.eta + 0.5 * eta_width,
        )

    @property
    def diameter(self) -> float:
        return math.hypot(self.w_max - self.w_min, self.eta_max - self.eta_min)

    def contains(self, x: SectionPoint) -> bool:
        return self.w_min <= x.w <= self.w_max and self.eta_min <= x.eta <= self.eta_max


@dataclass(frozen=True)
class ContractionEstimate:
    factor: float  # embedded (3-component) norm
    planar_factor: float  # (w, eta) norm
    pairs_used: int
    points_excluded: int
    exclusion_reasons: tuple[str, ...] = ()


def estimate_contraction(
    region: Region,
    which: str,
    n_pairs: int,
    params: ModelParameters,
    config=None,
    *,
    seed: int = 0,
) -> ContractionEstimate:
    """Largest observed Lipschitz ratio of one section map over random pairs.

    ``which`` is ``"minus"`` or ``"plus"``.  Points where the map is undefined
    (outside its domain, or no valid return) are dropped and counted.
    """
    maps = {"minus": section_map_minus, "plus": section_map_plus}
    if which not in maps:
        raise ValueError(f"which must be 'minus' or 'plus', got {which!r}")
    if not (region.w_max > region.w_min and region.eta_max > region.eta_min):
        raise ValueError("region must have positive extent in both w and eta")
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")

    rng = np.random.default_rng(seed)
    section_map = maps[which]
    needed = BoundaryKind.SIGMA_PLUS if which == "minus" else BoundaryKind.SIGMA_MINUS

    def in_domain(x):
        kind = classify_boundary_point(x.state(params), params)
        return kind is needed and guard_set_membership(x, params)

    reasons: list[str] = []
    excluded = 0
    attempts = 0
    mapped: list[tuple[SectionPoint, SectionPoint]] = []
    # rejection-sample preimages from the part of the region inside the domain
    while len(mapped) < 2 * n_pairs and attempts < 100 * n_pairs:
        attempts += 1
        x = SectionPoint(
            float(rng.uniform(region.w_min, region.w_max)),
            float(rng.uniform(region.eta_min, region.eta_max)),
        )
        if not in_domain(x):
            excluded += 1
            reasons.append(f"outside the domain of the {which} map")
            continue
        try:
            y, _t = section_map(x, params, config)
        except MapUndefined as exc:
            excluded += 1
            reasons.append(str(exc))
            continue
        mapped.append((x, y))

    ratios, planar_ratios = [], []
    for (x1, y1), (x2, y2) in zip(mapped[0::2], mapped[1::2]):
        d_pre = x1.distance(x2, params)
        if d_pre == 0.0:
            continue
        ratios.append(y1.distance(y2, params) / d_pre)
        planar_ratios.append(y1.distance(y2, params, "planar") / x1.distance(x2, params, "planar"))
    if not ratios:
        raise MapUndefined(f"no sampled pair in the region had both images defined ({excluded} excluded)")
    return ContractionEstimate(
        factor=max(ratios),
        planar_factor=max(planar_ratios),
        pairs_used=len(ratios),
        points_excluded=excluded,
        exclusion_reasons=tuple(sorted(set(reasons))),
    )


def orbit_region(orbit: OrbitResult, width: float = 0.1) -> Region:
    return Region.centered(orbit.fixed_point, width, width)
