"""Temperature / snow line / ice line model with a switching plane.

Every closed-form ingredient of the model lives here as a pure function of
:class:`ModelParameters`: the insolation profile, the two nullcline
polynomials, the switching plane, both regime vector fields and their
Jacobians, the tangency parabolas on the switching plane, and the
equilibrium finder/classifier.

Conventions
-----------
State is ``(w, eta, xi)``: translated global mean temperature, snow line and
ice line (both sines of latitude).  The switching function is
``h = b(eta - xi) - a(1 - eta)``; ``h < 0`` is the advance half-space S-
(flows by the advance field), ``h > 0`` is the retreat half-space S+.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields, replace
from typing import NamedTuple, Sequence

import numpy as np


class Regime(enum.Enum):
    """Which smooth field is active: glacial advance (S-) or retreat (S+)."""

    ADVANCE = "advance"
    RETREAT = "retreat"

    @property
    def other(self) -> "Regime":
        return Regime.RETREAT if self is Regime.ADVANCE else Regime.ADVANCE


class Stability(enum.Enum):
    SINK = "sink"
    SADDLE = "saddle"
    SOURCE = "source"
    DEGENERATE = "degenerate"


class EquilibriumKind(enum.Enum):
    REGULAR = "regular"
    VIRTUAL = "virtual"
    BOUNDARY = "boundary"


class BoundaryKind(enum.Enum):
    """Classification of a point lying on the switching plane."""

    SIGMA_PLUS = "sigma_plus"  # transversal S+ -> S- crossing
    SIGMA_MINUS = "sigma_minus"  # transversal S- -> S+ crossing
    SLIDING_REPELLING = "sliding_repelling"
    SLIDING_ATTRACTING = "sliding_attracting"  # only when the parabolas cross
    TANGENCY_PLUS = "tangency_plus"
    TANGENCY_MINUS = "tangency_minus"


class NotOnBoundaryError(ValueError):
    """A boundary-only operation was handed a point off the switching plane."""


@dataclass(frozen=True)
class ModelParameters:
    """Physical and empirical constants; defaults are the published table.

    ``epsilon`` is not tabulated; 0.03 (one order below ``rho``) is the
    default.  The heat capacity never appears on its own: ``tau = B/R``.
    """

    Q: float = 343.0
    A: float = 202.0
    B: float = 1.9
    C: float = 3.04
    alpha1: float = 0.32
    alpha2: float = 0.62
    Tc_plus: float = -10.0
    Tc_minus: float = -5.5
    a: float = 1.05
    b0: float = 1.5
    b: float = 1.75
    b1: float = 5.0
    tau: float = 1.0
    rho: float = 0.1
    epsilon: float = 0.03
    s2: float = -0.482

    def __post_init__(self):
        for name in ("Q", "B", "C", "tau", "rho", "epsilon", "a", "b0", "b", "b1"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ValueError(f"{f.name} must be finite")
        if self.alpha1 > self.alpha2:
            raise ValueError(
                f"alpha1 ({self.alpha1}) exceeds alpha2 ({self.alpha2}); ice must be brighter"
            )

    @property
    def L(self) -> float:
        return self.Q / (self.B + self.C)

    @property
    def alpha0(self) -> float:
        return 0.5 * (self.alpha1 + self.alpha2)

    def with_updates(self, **changes) -> "ModelParameters":
        return replace(self, **changes)

    def diagnostics(self) -> list[str]:
        """Soft checks: standing assumptions of the model that sweeps may break."""
        notes = []
        if self.alpha1 == self.alpha2:
            notes.append("degenerate albedo: alpha1 == alpha2, no ice-albedo feedback")
        if not self.b0 < self.b:
            notes.append(f"b0 = {self.b0} is not below b = {self.b}")
        if not self.b < self.b1:
            notes.append(f"b1 = {self.b1} is not above b = {self.b}")
        if not self.Tc_minus > self.Tc_plus:
            notes.append("Tc_minus is not warmer than Tc_plus")
        if not self.epsilon < epsilon_bound(self):
            notes.append(
                f"epsilon = {self.epsilon} is not below the tangency-separation bound "
                f"{epsilon_bound(self):.6g}"
            )
        return notes


class State(NamedTuple):
    """A point ``(w, eta, xi)`` of the model space."""

    w: float
    eta: float
    xi: float

    def in_state_space(self) -> bool:
        return 0.0 <= self.eta <= 1.0 and 0.0 <= self.xi <= 1.0


def regime_constants(regime: Regime, params: ModelParameters) -> tuple[float, float]:
    """Ablation rate and critical temperature selected by ``regime``."""
    if regime is Regime.ADVANCE:
        return params.b0, params.Tc_minus
    return params.b1, params.Tc_plus


# -- insolation and the reduced (w, eta) nullclines ---------------------------


def legendre_p2(y):
    return 0.5 * (3.0 * np.square(y) - 1.0)


def legendre_p2_integral(eta):
    """Antiderivative of ``p2`` vanishing at 0: ``(eta**3 - eta) / 2``."""
    return 0.5 * (np.power(eta, 3) - eta)


def insolation_distribution(y, params: ModelParameters):
    """Two-term Legendre approximation of the annual insolation profile."""
    y_arr = np.asarray(y, dtype=float)
    if np.any((y_arr < 0.0) | (y_arr > 1.0)) or np.any(np.isnan(y_arr)):
        raise ValueError(f"sine of latitude must lie in [0, 1], got {y!r}")
    out = 1.0 + params.s2 * legendre_p2(y_arr)
    return float(out) if out.ndim == 0 else out


def w_nullcline(eta, params: ModelParameters):
    """Cubic ``F(eta)``: the value ``w`` relaxes to for a fixed snow line."""
    p = params
    bracket = (
        p.Q * (1.0 - p.alpha0)
        - p.A
        + p.C * p.L * (p.alpha2 - p.alpha1) * (eta - 0.5 + p.s2 * legendre_p2_integral(eta))
    )
    return bracket / p.B


def w_nullcline_slope(eta, params: ModelParameters):
    p = params
    return p.C * p.L * (p.alpha2 - p.alpha1) * (1.0 + p.s2 * legendre_p2(eta)) / p.B


def w_nullcline_coefficients(params: ModelParameters) -> np.ndarray:
    """Power-basis coefficients ``[c0, c1, c2, c3]`` of ``F``."""
    p = params
    k = p.C * p.L * (p.alpha2 - p.alpha1) / p.B
    c0 = (p.Q * (1.0 - p.alpha0) - p.A) / p.B - 0.5 * k
    return np.array([c0, k * (1.0 - 0.5 * p.s2), 0.0, 0.5 * k * p.s2])


def eta_nullcline(eta, regime: Regime, params: ModelParameters):
    """Quadratic ``G(eta)`` for the regime's critical temperature."""
    _, Tc = regime_constants(regime, params)
    return -params.L * params.s2 * (1.0 - params.alpha0) * legendre_p2(eta) + Tc


def eta_nullcline_slope(eta, params: ModelParameters):
    # regime independent: the regimes differ by a constant offset
    return -3.0 * params.L * params.s2 * (1.0 - params.alpha0) * eta


def mean_albedo(eta, params: ModelParameters):
    """Insolation-weighted planetary albedo with the ice edge at ``eta``."""
    p = params
    ice_free_weight = eta + p.s2 * legendre_p2_integral(eta)
    return p.alpha2 - (p.alpha2 - p.alpha1) * ice_free_weight


def ice_line_equilibrium_temperature(eta, params: ModelParameters):
    """Equilibrium temperature at the ice edge of the latitude-resolved model.

    Average of the one-sided limits of the equilibrium profile at ``eta``.
    """
    p = params
    s_eta = 1.0 + p.s2 * legendre_p2(eta)
    global_term = (p.C / p.B) * (p.Q * (1.0 - mean_albedo(eta, p)) - p.A)
    return (p.Q * s_eta * (1.0 - p.alpha0) - p.A + global_term) / (p.B + p.C)


# -- switching plane ---------------------------------------------------------


def boundary_ice_line(eta, params: ModelParameters):
    """Ice line on the switching plane: ``xi = (1 + a/b) eta - a/b``."""
    r = params.a / params.b
    return (1.0 + r) * eta - r


def boundary_normal(params: ModelParameters) -> np.ndarray:
    return np.array([0.0, 1.0 + params.a / params.b, -1.0])


def switching_function(state, params: ModelParameters) -> float:
    """``b(eta - xi) - a(1 - eta)``; negative in S- (advance), positive in S+."""
    _, eta, xi = state
    return params.b * (eta - xi) - params.a * (1.0 - eta)


def regime_of(state, params: ModelParameters) -> Regime:
    """Half-space label of an off-boundary state (``h == 0`` maps to advance)."""
    return Regime.RETREAT if switching_function(state, params) > 0 else Regime.ADVANCE


def on_boundary(w: float, eta: float, params: ModelParameters) -> State:
    return State(float(w), float(eta), float(boundary_ice_line(eta, params)))


# -- vector fields -----------------------------------------------------------


def vector_field(state, regime: Regime, params: ModelParameters) -> np.ndarray:
    """Right-hand side of the regime's smooth system at ``state``."""
    w, eta, xi = state
    b_r, _ = regime_constants(regime, params)
    return np.array(
        [
            -params.tau * (w - w_nullcline(eta, params)),
            params.rho * (w - eta_nullcline(eta, regime, params)),
            params.epsilon * (b_r * (eta - xi) - params.a * (1.0 - eta)),
        ]
    )


def jacobian(state, regime: Regime, params: ModelParameters) -> np.ndarray:
    _, eta, _ = state
    p = params
    b_r, _ = regime_constants(regime, p)
    return np.array(
        [
            [-p.tau, p.tau * w_nullcline_slope(eta, p), 0.0],
            [p.rho, -p.rho * eta_nullcline_slope(eta, p), 0.0],
            [0.0, p.epsilon * (b_r + p.a), -p.epsilon * b_r],
        ]
    )


def tangency_curve(eta, regime: Regime, params: ModelParameters):
    """Temperature ``g(eta)`` at which the regime field is tangent to the plane."""
    p = params
    b_r, _ = regime_constants(regime, p)
    shift = p.epsilon * p.a * (1.0 - eta) * (b_r - p.b) / (p.rho * (p.a + p.b))
    return eta_nullcline(eta, regime, p) + shift


def normal_component(state, regime: Regime, params: ModelParameters) -> float:
    """Dot product of the regime field with the plane normal."""
    return float(vector_field(state, regime, params) @ boundary_normal(params))


def classify_boundary_point(
    state, params: ModelParameters, *, boundary_tol: float = 1e-9, tangency_tol: float = 1e-9
) -> BoundaryKind:
    """Locate a point of the switching plane relative to the tangency parabolas.

    Raises
    ------
    NotOnBoundaryError
        If ``|h(state)| >= boundary_tol``.
    """
    h = switching_function(state, params)
    if not abs(h) < boundary_tol:
        raise NotOnBoundaryError(f"|h| = {abs(h):.3g} is not below {boundary_tol:g}")
    w, eta, _ = state
    g_plus = tangency_curve(eta, Regime.RETREAT, params)
    g_minus = tangency_curve(eta, Regime.ADVANCE, params)
    if abs(w - g_plus) <= tangency_tol:
        return BoundaryKind.TANGENCY_PLUS
    if abs(w - g_minus) <= tangency_tol:
        return BoundaryKind.TANGENCY_MINUS
    below_plus = w < g_plus
    above_minus = w > g_minus
    if below_plus and above_minus:
        return BoundaryKind.SLIDING_ATTRACTING
    if below_plus:
        return BoundaryKind.SIGMA_PLUS
    if above_minus:
        return BoundaryKind.SIGMA_MINUS
    return BoundaryKind.SLIDING_REPELLING


def epsilon_bound(params: ModelParameters) -> float:
    """Largest ``epsilon`` (exclusive) for which the tangency parabolas stay apart."""
    p = params
    denom = p.a * (p.b1 - p.b0)
    if denom == 0.0:
        return math.inf
    return (p.Tc_minus - p.Tc_plus) * p.rho * (p.a + p.b) / denom


def tangency_intersection_eta(params: ModelParameters) -> float:
    """Snow line at which the two tangency parabolas meet (``-inf`` if never)."""
    bound = epsilon_bound(params)
    if math.isinf(bound):
        return -math.inf
    return 1.0 - bound / params.epsilon


def epsilon_admissible(params: ModelParameters) -> bool:
    return params.epsilon < epsilon_bound(params)


# -- four-variable quadratic reduction (validation oracle) --------------------


def invariant_line_coords(params: ModelParameters) -> tuple[float, float, float]:
    """``(z0, w2, z2)`` on the attracting invariant line of the 4-ODE reduction."""
    p = params
    contrast = p.alpha2 - p.alpha1
    return p.L * contrast, p.L * p.s2 * (1.0 - p.alpha0), p.L * p.s2 * contrast


def four_ode_rhs(coords: Sequence[float], eta: float, params: ModelParameters) -> np.ndarray:
    """Rates of ``(w0, z0, w2, z2)`` with the heat capacity set to ``B / tau``."""
    w0, z0, w2, z2 = coords
    p = params
    R = p.B / p.tau
    mean_T_extra = (eta - 0.5) * z0 + z2 * legendre_p2_integral(eta)
    return np.array(
        [
            p.Q * (1.0 - p.alpha0) - p.A - p.B * w0 + p.C * mean_T_extra,
            p.Q * (p.alpha2 - p.alpha1) - (p.B + p.C) * z0,
            p.Q * p.s2 * (1.0 - p.alpha0) - (p.B + p.C) * w2,
            p.Q * p.s2 * (p.alpha2 - p.alpha1) - (p.B + p.C) * z2,
        ]
    ) / R


# -- equilibria --------------------------------------------------------------

ROOT_GRID_STEP = 1e-3
ROOT_TOL = 1e-12
STABILITY_TOL = 1e-9
CLASSIFICATION_TOL = 1e-9


@dataclass(frozen=True)
class PlanarEquilibrium:
    w: float
    eta: float
    trace: float
    det: float
    stability: Stability


@dataclass(frozen=True)
class EquilibriumReport:
    state: State
    regime: Regime
    eigenvalues: tuple[complex, complex, complex]
    stability: Stability
    classification: EquilibriumKind
    switching_value: float

    def to_dict(self) -> dict:
        return {
            "regime": self.regime.value,
            "state": {"w": self.state.w, "eta": self.state.eta, "xi": self.state.xi},
            "eigenvalues": [[z.real, z.imag] for z in self.eigenvalues],
            "stability": self.stability.value,
            "classification": self.classification.value,
            "switching_value": self.switching_value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EquilibriumReport":
        s = d["state"]
        return cls(
            state=State(s["w"], s["eta"], s["xi"]),
            regime=Regime(d["regime"]),
            eigenvalues=tuple(complex(re, im) for re, im in d["eigenvalues"]),
            stability=Stability(d["stability"]),
            classification=EquilibriumKind(d["classification"]),
            switching_value=d["switching_value"],
        )


def classify_eigenvalues(eigenvalues, tol: float = STABILITY_TOL) -> Stability:
    re = np.real(np.asarray(eigenvalues))
    if np.any(np.abs(re) <= tol):
        return Stability.DEGENERATE
    if np.all(re < 0):
        return Stability.SINK
    if np.all(re > 0):
        return Stability.SOURCE
    return Stability.SADDLE


def _bisect(f, lo: float, hi: float, f_lo: float, tol: float) -> float:
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if f_mid == 0.0:
            return mid
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def nullcline_gap(eta, regime: Regime, params: ModelParameters):
    """``F(eta) - G(eta)``; its zeros are the planar equilibria."""
    return w_nullcline(eta, params) - eta_nullcline(eta, regime, params)


def find_planar_equilibria(
    regime: Regime,
    params: ModelParameters,
    *,
    grid_step: float = ROOT_GRID_STEP,
    tol: float = ROOT_TOL,
) -> list[PlanarEquilibrium]:
    """All zeros of ``F - G`` in [0, 1], located by sign scan plus bisection."""
    n = int(round(1.0 / grid_step))
    grid = np.linspace(0.0, 1.0, n + 1)
    gap = lambda e: float(nullcline_gap(e, regime, params))  # noqa: E731
    values = [gap(e) for e in grid]

    roots: list[float] = []
    for i in range(n + 1):
        if values[i] == 0.0:
            roots.append(float(grid[i]))
        elif i < n and values[i + 1] != 0.0 and (values[i] < 0) != (values[i + 1] < 0):
            roots.append(_bisect(gap, float(grid[i]), float(grid[i + 1]), values[i], tol))

    out = []
    for eta in roots:
        block = jacobian((0.0, eta, 0.0), regime, params)[:2, :2]
        out.append(
            PlanarEquilibrium(
                w=float(w_nullcline(eta, params)),
                eta=eta,
                trace=float(np.trace(block)),
                det=float(np.linalg.det(block)),
                stability=classify_eigenvalues(np.linalg.eigvals(block)),
            )
        )
    return out


def lift_equilibrium(
    planar: PlanarEquilibrium,
    regime: Regime,
    params: ModelParameters,
    *,
    tol: float = CLASSIFICATION_TOL,
) -> EquilibriumReport:
    """Attach the ice-line coordinate and classify against the switching plane."""
    b_r, _ = regime_constants(regime, params)
    r = params.a / b_r
    state = State(planar.w, planar.eta, (1.0 + r) * planar.eta - r)
    eig = np.linalg.eigvals(jacobian(state, regime, params))
    # the ice-line eigenvalue is exact; recover it without roundoff
    eig[np.argmin(np.abs(eig + params.epsilon * b_r))] = -params.epsilon * b_r
    eig = tuple(complex(z) for z in sorted(eig, key=lambda z: (z.real, z.imag)))

    h = float(switching_function(state, params))
    if abs(h) < tol:
        kind = EquilibriumKind.BOUNDARY
    elif (h > 0) == (regime is Regime.RETREAT):
        kind = EquilibriumKind.REGULAR
    else:
        kind = EquilibriumKind.VIRTUAL
    return EquilibriumReport(state, regime, eig, classify_eigenvalues(eig), kind, h)


def equilibria(params: ModelParameters) -> list[EquilibriumReport]:
    """Every equilibrium of both regime fields, retreat first, ordered by snow line."""
    reports = []
    for regime in (Regime.RETREAT, Regime.ADVANCE):
        reports.extend(lift_equilibrium(p, regime, params) for p in find_planar_equilibria(regime, params))
    return reports


def regime_sink(params: ModelParameters, regime: Regime) -> PlanarEquilibrium:
    """The small-ice-cap planar sink of ``regime`` (largest-eta sink)."""
    sinks = [p for p in find_planar_equilibria(regime, params) if p.stability is Stability.SINK]
    if not sinks:
        raise ValueError(f"{regime.value} field has no planar sink in [0, 1]")
    return max(sinks, key=lambda p: p.eta)


def regime_saddle(params: ModelParameters, regime: Regime) -> PlanarEquilibrium:
    saddles = [p for p in find_planar_equilibria(regime, params) if p.stability is Stability.SADDLE]
    if not saddles:
        raise ValueError(f"{regime.value} field has no planar saddle in [0, 1]")
    return min(saddles, key=lambda p: p.eta)
