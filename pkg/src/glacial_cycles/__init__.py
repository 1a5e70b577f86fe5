"""Energy balance model of glacial cycles with a switching ice-line law.

The ice line advances or retreats depending on which side of a plane the
state lies, which makes the system a piecewise-smooth (Filippov) flow.
"""
from .integrator import (
    CrossingEvent,
    HybridTrajectory,
    IntegratorConfig,
    StepMode,
    Termination,
    evolve_hybrid,
    filippov_sliding_field,
    locate_crossing,
    smooth_step,
)
from .model import (
    BoundaryKind,
    EquilibriumKind,
    EquilibriumReport,
    ModelParameters,
    Regime,
    Stability,
    State,
    classify_boundary_point,
    epsilon_admissible,
    epsilon_bound,
    equilibria,
    eta_nullcline,
    switching_function,
    tangency_curve,
    vector_field,
    w_nullcline,
)
from .section import (
    MapUndefined,
    NoOrbitFound,
    OrbitResult,
    SectionPoint,
    composite_map,
    estimate_contraction,
    find_periodic_orbit,
    guard_set_membership,
    section_map_minus,
    section_map_plus,
)

__all__ = [
    "BoundaryKind",
    "CrossingEvent",
    "EquilibriumKind",
    "EquilibriumReport",
    "HybridTrajectory",
    "IntegratorConfig",
    "MapUndefined",
    "ModelParameters",
    "NoOrbitFound",
    "OrbitResult",
    "Regime",
    "SectionPoint",
    "Stability",
    "State",
    "StepMode",
    "Termination",
    "classify_boundary_point",
    "composite_map",
    "epsilon_admissible",
    "epsilon_bound",
    "equilibria",
    "estimate_contraction",
    "eta_nullcline",
    "evolve_hybrid",
    "filippov_sliding_field",
    "find_periodic_orbit",
    "guard_set_membership",
    "locate_crossing",
    "section_map_minus",
    "section_map_plus",
    "smooth_step",
    "switching_function",
    "tangency_curve",
    "vector_field",
    "w_nullcline",
]
