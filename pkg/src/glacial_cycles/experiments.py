"""Experiment drivers behind the command line.

Each ``run_*`` function computes a record; each ``cmd_*`` function runs it
for a :class:`RunConfig` and writes the record (plus any trajectory tables)
under ``config.output.directory``.  Records know how to turn themselves into
plain dicts and back, which is what the JSON files hold.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentSettings, RunConfig, config_to_text
from .integrator import IntegrationError, IntegratorConfig, Termination, evolve_hybrid
from .model import (
    CLASSIFICATION_TOL,
    EquilibriumKind,
    EquilibriumReport,
    ModelParameters,
    Regime,
    Stability,
    State,
    boundary_ice_line,
    epsilon_bound,
    equilibria,
    eta_nullcline,
    find_planar_equilibria,
    lift_equilibrium,
    nullcline_gap,
    regime_sink,
    tangency_curve,
    tangency_intersection_eta,
    vector_field,
    w_nullcline,
)
from .section import (
    MapUndefined,
    NoOrbitFound,
    OrbitResult,
    SectionPoint,
    default_seed,
    find_periodic_orbit,
    random_admissible_seeds,
)
from .serialization import (
    atomic_write_text,
    read_json,
    write_events_csv,
    write_json,
    write_table,
    write_trajectory_csv,
)


class InadmissibleEpsilon(ValueError):
    """Orbit search refused because epsilon is not below the separation bound."""


def params_to_dict(params: ModelParameters) -> dict:
    return dataclasses.asdict(params)


def params_from_dict(d: dict) -> ModelParameters:
    return ModelParameters(**d)


def _write_config(out: Path, config: RunConfig) -> None:
    atomic_write_text(out / "config.txt", config_to_text(config))


# -- equilibria -----------------------------------------------------------------


@dataclass(frozen=True)
class EquilibriaRecord:
    params: ModelParameters
    equilibria: tuple[EquilibriumReport, ...]
    diagnostics: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "parameters": params_to_dict(self.params),
            "equilibria": [e.to_dict() for e in self.equilibria],
            "diagnostics": list(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EquilibriaRecord":
        return cls(
            params_from_dict(d["parameters"]),
            tuple(EquilibriumReport.from_dict(e) for e in d["equilibria"]),
            tuple(d["diagnostics"]),
        )


def run_equilibria(params: ModelParameters) -> EquilibriaRecord:
    return EquilibriaRecord(params, tuple(equilibria(params)), tuple(params.diagnostics()))


def cmd_equilibria(config: RunConfig) -> EquilibriaRecord:
    out = Path(config.output.directory)
    record = run_equilibria(config.params)
    write_json(out / "equilibria.json", record.to_dict())
    _write_config(out, config)
    return record


# -- simulate ---------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationSummary:
    params: ModelParameters
    start: State
    start_regime: Optional[Regime]
    termination: Termination
    diagnostic: str
    final_time: float
    final_state: State
    final_regime: Regime
    n_events: int
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "parameters": params_to_dict(self.params),
            "start": list(self.start),
            "start_regime": None if self.start_regime is None else self.start_regime.value,
            "termination": self.termination.value,
            "diagnostic": self.diagnostic,
            "final_time": self.final_time,
            "final_state": list(self.final_state),
            "final_regime": self.final_regime.value,
            "n_events": self.n_events,
            "n_samples": self.n_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationSummary":
        return cls(
            params=params_from_dict(d["parameters"]),
            start=State(*d["start"]),
            start_regime=None if d["start_regime"] is None else Regime(d["start_regime"]),
            termination=Termination(d["termination"]),
            diagnostic=d["diagnostic"],
            final_time=d["final_time"],
            final_state=State(*d["final_state"]),
            final_regime=Regime(d["final_regime"]),
            n_events=d["n_events"],
            n_samples=d["n_samples"],
        )


def simulation_start(params: ModelParameters, exp: ExperimentSettings) -> State:
    """Start point from the settings; missing pieces default to the projected retreat sink on the plane."""
    seed = default_seed(params)
    w = seed.w if exp.start_w is None else exp.start_w
    eta = seed.eta if exp.start_eta is None else exp.start_eta
    xi = float(boundary_ice_line(eta, params)) if exp.start_xi is None else exp.start_xi
    return State(float(w), float(eta), float(xi))


def cmd_simulate(config: RunConfig) -> SimulationSummary:
    out = Path(config.output.directory)
    exp = config.experiment
    start = simulation_start(config.params, exp)
    traj = evolve_hybrid(start, exp.start_regime, config.params, config.integrator)
    n_samples = write_trajectory_csv(out / "trajectory.csv", traj, exp.sample_dt)
    write_events_csv(out / "events.csv", traj.events)
    summary = SimulationSummary(
        params=config.params,
        start=start,
        start_regime=exp.start_regime,
        termination=traj.termination,
        diagnostic=traj.diagnostic,
        final_time=traj.final_time,
        final_state=traj.final_state,
        final_regime=traj.final_regime,
        n_events=len(traj.events),
        n_samples=n_samples,
    )
    write_json(out / "simulation.json", summary.to_dict())
    _write_config(out, config)
    return summary


# -- epsilon admissibility --------------------------------------------------------


@dataclass(frozen=True)
class EpsilonReport:
    epsilon: float
    bound: float
    intersection_eta: float
    admissible: bool

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EpsilonReport":
        return cls(**d)

    def describe(self) -> str:
        verdict = "admissible" if self.admissible else "NOT admissible"
        return (
            f"epsilon = {self.epsilon:.6g}, bound = {self.bound:.6f}, "
            f"parabolas meet at eta = {self.intersection_eta:.6g}: {verdict}"
        )


def run_check_epsilon(params: ModelParameters) -> EpsilonReport:
    bound = epsilon_bound(params)
    # strict inequality: epsilon equal to the bound is inadmissible
    return EpsilonReport(params.epsilon, bound, tangency_intersection_eta(params), params.epsilon < bound)


def cmd_check_epsilon(config: RunConfig) -> EpsilonReport:
    out = Path(config.output.directory)
    report = run_check_epsilon(config.params)
    write_json(out / "epsilon.json", report.to_dict())
    _write_config(out, config)
    return report


# -- orbit ------------------------------------------------------------------------


@dataclass(frozen=True)
class SeedRun:
    seed: SectionPoint
    fixed_point: SectionPoint
    iterations: int
    distance_to_reference: float

    def to_dict(self) -> dict:
        return {
            "seed": dataclasses.asdict(self.seed),
            "fixed_point": dataclasses.asdict(self.fixed_point),
            "iterations": self.iterations,
            "distance_to_reference": self.distance_to_reference,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SeedRun":
        return cls(SectionPoint(**d["seed"]), SectionPoint(**d["fixed_point"]), d["iterations"], d["distance_to_reference"])


@dataclass(frozen=True)
class OrbitSummary:
    params: ModelParameters
    epsilon: EpsilonReport
    orbit: OrbitResult
    seed_runs: tuple[SeedRun, ...]
    rng_seed: int
    crossings_per_period: int
    eta_range: tuple[float, float]
    xi_range: tuple[float, float]

    @property
    def max_seed_disagreement(self) -> float:
        return max((r.distance_to_reference for r in self.seed_runs), default=0.0)

    def to_dict(self) -> dict:
        return {
            "parameters": params_to_dict(self.params),
            "epsilon": self.epsilon.to_dict(),
            "orbit": self.orbit.to_dict(),
            "seed_runs": [r.to_dict() for r in self.seed_runs],
            "max_seed_disagreement": self.max_seed_disagreement,
            "rng_seed": self.rng_seed,
            "crossings_per_period": self.crossings_per_period,
            "eta_range": list(self.eta_range),
            "xi_range": list(self.xi_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OrbitSummary":
        return cls(
            params=params_from_dict(d["parameters"]),
            epsilon=EpsilonReport.from_dict(d["epsilon"]),
            orbit=OrbitResult.from_dict(d["orbit"]),
            seed_runs=tuple(SeedRun.from_dict(r) for r in d["seed_runs"]),
            rng_seed=d["rng_seed"],
            crossings_per_period=d["crossings_per_period"],
            eta_range=tuple(d["eta_range"]),
            xi_range=tuple(d["xi_range"]),
        )


def one_period(orbit: OrbitResult, params: ModelParameters, integrator: IntegratorConfig):
    """Integrate from the fixed point through exactly two crossings."""
    cfg = replace(integrator, max_events=2, max_time=max(integrator.max_time, 2.0 * orbit.period))
    return evolve_hybrid(orbit.fixed_point.state(params), Regime.ADVANCE, params, cfg)


def run_orbit(config: RunConfig):
    """Orbit from the default seed, cross-checked from random seeds.

    Returns ``(summary, one_period_trajectory)``.
    """
    params, exp, integ = config.params, config.experiment, config.integrator
    eps = run_check_epsilon(params)
    if not eps.admissible and not exp.allow_inadmissible:
        raise InadmissibleEpsilon(
            f"epsilon = {params.epsilon:g} is not below the bound {eps.bound:.6f}; "
            "pass --allow-inadmissible to search anyway"
        )
    search = dict(tol=exp.orbit_tol, max_iterations=exp.max_iterations, allow_inadmissible=True)
    orbit = find_periodic_orbit(None, params, integ, **search)

    rng = np.random.default_rng(exp.rng_seed)
    runs = []
    for seed in random_admissible_seeds(params, exp.n_seeds, rng):
        other = find_periodic_orbit(seed, params, integ, **search)
        runs.append(SeedRun(seed, other.fixed_point, other.iterations, other.fixed_point.distance(orbit.fixed_point, params)))

    traj = one_period(orbit, params, integ)
    _, states, _ = traj.samples()
    summary = OrbitSummary(
        params=params,
        epsilon=eps,
        orbit=orbit,
        seed_runs=tuple(runs),
        rng_seed=exp.rng_seed,
        crossings_per_period=len(traj.events),
        eta_range=(float(states[:, 1].min()), float(states[:, 1].max())),
        xi_range=(float(states[:, 2].min()), float(states[:, 2].max())),
    )
    return summary, traj


def cmd_orbit(config: RunConfig) -> OrbitSummary:
    out = Path(config.output.directory)
    summary, traj = run_orbit(config)
    write_trajectory_csv(out / "orbit_trajectory.csv", traj, config.experiment.sample_dt)
    write_events_csv(out / "orbit_events.csv", traj.events)
    write_json(out / "orbit.json", summary.to_dict())
    _write_config(out, config)
    return summary


# -- b0 sweep ---------------------------------------------------------------------


class SweepOutcome(enum.Enum):
    LIMIT_CYCLE = "LimitCycle"
    REGULAR_SINK_ADVANCE = "RegularSinkAdvance"
    REGULAR_SINK_RETREAT = "RegularSinkRetreat"
    BOUNDARY_EQUILIBRIUM = "BoundaryEquilibrium"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class SweepRecord:
    """Outcome at one swept ``b0``.

    ``sink_distance`` is set for regular-sink outcomes: the distance from
    the named sink reached by a run started at the reference orbit point.
    """

    swept_value: float
    outcome: SweepOutcome
    orbit: Optional[OrbitResult]
    equilibria: tuple[EquilibriumReport, ...]
    note: str = ""
    refined: bool = False
    sink_distance: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "swept_value": self.swept_value,
            "outcome": self.outcome.value,
            "orbit": None if self.orbit is None else self.orbit.to_dict(),
            "equilibria": [e.to_dict() for e in self.equilibria],
            "note": self.note,
            "refined": self.refined,
            "sink_distance": self.sink_distance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepRecord":
        return cls(
            swept_value=d["swept_value"],
            outcome=SweepOutcome(d["outcome"]),
            orbit=None if d["orbit"] is None else OrbitResult.from_dict(d["orbit"]),
            equilibria=tuple(EquilibriumReport.from_dict(e) for e in d["equilibria"]),
            note=d["note"],
            refined=d["refined"],
            sink_distance=d["sink_distance"],
        )


@dataclass(frozen=True)
class SweepResult:
    params: ModelParameters
    reference: SectionPoint
    records: tuple[SweepRecord, ...]
    contiguity_violations: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "parameters": params_to_dict(self.params),
            "swept_parameter": "b0",
            "reference": dataclasses.asdict(self.reference),
            "records": [r.to_dict() for r in self.records],
            "contiguity_violations": list(self.contiguity_violations),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepResult":
        return cls(
            params=params_from_dict(d["parameters"]),
            reference=SectionPoint(**d["reference"]),
            records=tuple(SweepRecord.from_dict(r) for r in d["records"]),
            contiguity_violations=tuple(d["contiguity_violations"]),
        )

    def record_at(self, value: float, tol: float = 1e-9) -> SweepRecord:
        for r in self.records:
            if abs(r.swept_value - value) <= tol:
                return r
        raise KeyError(value)


def sweep_grid(start: float, stop: float, step: float) -> list[float]:
    n = int(math.floor((stop - start) / step + 1e-9))
    return [round(start + k * step, 12) for k in range(n + 1)]


def _named_sink(reports, regime: Regime) -> Optional[EquilibriumReport]:
    sinks = [e for e in reports if e.regime is regime and e.stability is Stability.SINK]
    return max(sinks, key=lambda e: e.state.eta) if sinks else None


def _advance_sink_switching(params: ModelParameters) -> float:
    return lift_equilibrium(regime_sink(params, Regime.ADVANCE), Regime.ADVANCE, params).switching_value


def boundary_crossing_b0(params: ModelParameters, lo: float, hi: float, tol: float = 0.1 * CLASSIFICATION_TOL) -> float:
    """Bisect ``b0`` in ``[lo, hi]`` for the advance sink sitting on the plane."""
    h_lo = _advance_sink_switching(params.with_updates(b0=lo))
    h_hi = _advance_sink_switching(params.with_updates(b0=hi))
    if h_lo == 0.0:
        return lo
    if h_hi == 0.0:
        return hi
    if (h_lo < 0) == (h_hi < 0):
        raise ValueError("advance sink does not cross the plane in the bracket")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        h_mid = _advance_sink_switching(params.with_updates(b0=mid))
        if abs(h_mid) <= tol or hi - lo <= 4 * np.finfo(float).eps * abs(mid):
            return mid
        if (h_mid < 0) == (h_lo < 0):
            lo, h_lo = mid, h_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def classify_sweep_point(
    b0: float,
    base: ModelParameters,
    integrator: IntegratorConfig,
    exp: ExperimentSettings,
    reference: SectionPoint,
    refined: bool = False,
) -> SweepRecord:
    """Equilibria, orbit attempt and outcome at one ``b0``; never raises for numerical trouble."""
    try:
        params = base.with_updates(b0=b0)
        reports = tuple(equilibria(params))
    except ValueError as exc:
        return SweepRecord(b0, SweepOutcome.UNDETERMINED, None, (), f"invalid parameters: {exc}", refined)

    adv = _named_sink(reports, Regime.ADVANCE)
    ret = _named_sink(reports, Regime.RETREAT)
    kinds = {r: (s.classification if s is not None else None) for r, s in ((Regime.ADVANCE, adv), (Regime.RETREAT, ret))}

    if EquilibriumKind.BOUNDARY in kinds.values():
        return SweepRecord(b0, SweepOutcome.BOUNDARY_EQUILIBRIUM, None, reports, "sink on the switching plane", refined)

    orbit, failure = None, ""
    try:
        orbit = find_periodic_orbit(
            reference, params, integrator,
            tol=exp.orbit_tol, max_iterations=exp.max_iterations, allow_inadmissible=exp.allow_inadmissible,
        )
    except (NoOrbitFound, MapUndefined, IntegrationError, ValueError) as exc:
        failure = f"{type(exc).__name__}: {exc}"

    for regime, outcome in ((Regime.ADVANCE, SweepOutcome.REGULAR_SINK_ADVANCE), (Regime.RETREAT, SweepOutcome.REGULAR_SINK_RETREAT)):
        if kinds[regime] is EquilibriumKind.REGULAR:
            sink = adv if regime is Regime.ADVANCE else ret
            note = "orbit search: " + (failure or "converged alongside a regular sink")
            try:
                traj = evolve_hybrid(reference.state(params), None, params, integrator, record=False)
                dist = float(np.linalg.norm(np.subtract(traj.final_state, sink.state)))
            except IntegrationError as exc:
                dist = None
                note += f"; convergence run failed: {exc}"
            return SweepRecord(b0, outcome, orbit, reports, note, refined, dist)

    if orbit is not None:
        return SweepRecord(b0, SweepOutcome.LIMIT_CYCLE, orbit, reports, "", refined)
    return SweepRecord(b0, SweepOutcome.UNDETERMINED, None, reports, failure, refined)


def contiguity_violations(records) -> tuple[float, ...]:
    """Swept values where an outcome reappears after a different outcome intervened."""
    seen, flagged, previous = set(), [], None
    for r in sorted(records, key=lambda r: r.swept_value):
        if r.outcome is not previous:
            if r.outcome in seen:
                flagged.append(r.swept_value)
            seen.add(r.outcome)
            previous = r.outcome
    return tuple(flagged)


def _point_path(directory: Path, index: int, value: float) -> Path:
    return directory / f"point_{index:04d}_b0_{value!r}.json"


def _sweep_worker(job) -> str:
    index, value, refined, base, integrator, exp, reference, directory = job
    record = classify_sweep_point(value, base, integrator, exp, reference, refined)
    path = _point_path(Path(directory), index, value)
    write_json(path, record.to_dict())
    return str(path)


def sweep_reference(params: ModelParameters, integrator: IntegratorConfig, exp: ExperimentSettings) -> SectionPoint:
    """Orbit fixed point at the base parameters, or the default seed when there is none."""
    try:
        return find_periodic_orbit(
            None, params, integrator,
            tol=exp.orbit_tol, max_iterations=exp.max_iterations, allow_inadmissible=exp.allow_inadmissible,
        ).fixed_point
    except (NoOrbitFound, MapUndefined, IntegrationError, ValueError):
        return default_seed(params)


def sweep_values(config: RunConfig) -> list[tuple[float, bool]]:
    """Grid values plus, optionally, the refined ``b0`` where the advance sink meets the plane."""
    exp = config.experiment
    grid = sweep_grid(exp.sweep_start, exp.sweep_stop, exp.sweep_step)
    values = [(v, False) for v in grid]
    if not exp.sweep_refine:
        return values
    try:
        h = [_advance_sink_switching(config.params.with_updates(b0=v)) for v in grid]
    except ValueError:
        return values
    for i in range(len(grid) - 1):
        if abs(h[i]) < CLASSIFICATION_TOL or abs(h[i + 1]) < CLASSIFICATION_TOL:
            continue
        if (h[i] < 0) != (h[i + 1] < 0):
            values.append((boundary_crossing_b0(config.params, grid[i], grid[i + 1]), True))
    return sorted(values)


def run_sweep(config: RunConfig, point_dir: Optional[Path] = None) -> SweepResult:
    exp = config.experiment
    out = Path(config.output.directory)
    point_dir = point_dir or out / "sweep_points"
    point_dir.mkdir(parents=True, exist_ok=True)
    reference = sweep_reference(config.params, config.integrator, exp)
    jobs = [
        (i, v, refined, config.params, config.integrator, exp, reference, str(point_dir))
        for i, (v, refined) in enumerate(sweep_values(config))
    ]
    if exp.workers > 1:
        with ProcessPoolExecutor(max_workers=exp.workers) as pool:
            paths = list(pool.map(_sweep_worker, jobs))
    else:
        paths = [_sweep_worker(job) for job in jobs]
    records = sorted((SweepRecord.from_dict(read_json(p)) for p in paths), key=lambda r: r.swept_value)
    return SweepResult(config.params, reference, tuple(records), contiguity_violations(records))


def cmd_sweep_b0(config: RunConfig) -> SweepResult:
    out = Path(config.output.directory)
    result = run_sweep(config)
    write_json(out / "sweep_b0.json", result.to_dict())
    _write_config(out, config)
    return result


# -- nullclines -------------------------------------------------------------------

NULLCLINE_HEADER = (
    "eta", "F", "G_retreat", "G_advance", "g_retreat", "g_advance", "gamma", "h_retreat", "h_advance",
)


@dataclass(frozen=True)
class NullclineRoot:
    regime: Regime
    eta: float
    w: float
    stability: Stability

    def to_dict(self) -> dict:
        return {"regime": self.regime.value, "eta": self.eta, "w": self.w, "stability": self.stability.value}

    @classmethod
    def from_dict(cls, d: dict) -> "NullclineRoot":
        return cls(Regime(d["regime"]), d["eta"], d["w"], Stability(d["stability"]))


@dataclass(frozen=True)
class NullclineSummary:
    params: ModelParameters
    n_points: int
    roots: tuple[NullclineRoot, ...]
    pole_values: dict
    w_nullcline_shared: bool

    def to_dict(self) -> dict:
        return {
            "parameters": params_to_dict(self.params),
            "n_points": self.n_points,
            "roots": [r.to_dict() for r in self.roots],
            "pole_values": dict(self.pole_values),
            "w_nullcline_shared": self.w_nullcline_shared,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NullclineSummary":
        return cls(
            params_from_dict(d["parameters"]),
            d["n_points"],
            tuple(NullclineRoot.from_dict(r) for r in d["roots"]),
            dict(d["pole_values"]),
            d["w_nullcline_shared"],
        )


def nullcline_columns(params: ModelParameters, n_points: int) -> list[np.ndarray]:
    eta = np.linspace(0.0, 1.0, n_points)
    cols = [eta, w_nullcline(eta, params)]
    cols += [eta_nullcline(eta, r, params) for r in (Regime.RETREAT, Regime.ADVANCE)]
    cols += [tangency_curve(eta, r, params) for r in (Regime.RETREAT, Regime.ADVANCE)]
    cols.append(boundary_ice_line(eta, params))
    cols += [nullcline_gap(eta, r, params) for r in (Regime.RETREAT, Regime.ADVANCE)]
    return [np.asarray(c, dtype=float) for c in cols]


def run_nullclines(params: ModelParameters, n_points: int):
    cols = nullcline_columns(params, n_points)
    roots = tuple(
        NullclineRoot(r, p.eta, p.w, p.stability)
        for r in (Regime.RETREAT, Regime.ADVANCE)
        for p in find_planar_equilibria(r, params)
    )
    pole = {}
    for r in (Regime.RETREAT, Regime.ADVANCE):
        pole[f"G_{r.value}"] = float(eta_nullcline(1.0, r, params))
        pole[f"g_{r.value}"] = float(tangency_curve(1.0, r, params))
    pole["F"] = float(w_nullcline(1.0, params))
    states = [State(w, e, 0.5) for w, e in zip(cols[1], cols[0])]
    shared = all(
        vector_field(x, Regime.RETREAT, params)[0] == vector_field(x, Regime.ADVANCE, params)[0] for x in states
    )
    summary = NullclineSummary(params, n_points, roots, pole, shared)
    return summary, cols


def cmd_nullclines(config: RunConfig) -> NullclineSummary:
    out = Path(config.output.directory)
    summary, cols = run_nullclines(config.params, config.experiment.nullcline_points)
    write_table(out / "nullclines.csv", NULLCLINE_HEADER, cols)
    write_json(out / "nullclines.json", summary.to_dict())
    _write_config(out, config)
    return summary
