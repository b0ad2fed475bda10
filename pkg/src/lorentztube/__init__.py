"""Event-driven billiards in quenched random Lorentz tubes.

A tube is a chain of translated copies of one polygonal cell, each copy
holding a randomly drawn configuration of convex scatterers; a point
particle moves freely and reflects elastically.  The package provides the
exact geometry kernel, the cell-crossing dynamics and its compiled batch
engine, generators for the quenched randomness, validators for the standing
geometric assumptions, and Monte Carlo experiments measuring recurrence and
cocycle statistics.
"""

__version__ = "0.1.0"

from .geometry import (
    Arc,
    GeometryError,
    HitRecord,
    Piece,
    Segment,
    TangencyError,
    Vec2,
    first_hit,
    intersect_ray_arc,
    intersect_ray_segment,
    reflect,
)
from .tube import (
    Bounds,
    CellConfig,
    CellTemplate,
    ConfigurationProcess,
    ConvexPolygon,
    Disc,
    TubeRealization,
    Violation,
    Wall,
    shaped_cell,
    square_template,
    validate_config,
)
from .dynamics import (
    CocycleTrace,
    GateChoice,
    PhasePoint,
    PovState,
    RandomGateTemplate,
    TraversalResult,
    TubePoint,
    pov_step,
    run_cocycle,
    traverse_cell,
    traverse_random_gates,
    tube_map_T,
)
from .experiments import (
    Mu0Sampler,
    RecurrenceStats,
    flux_experiment,
    recurrence_experiment,
    replay_experiment,
    sample_mu0,
    schmidt_estimator,
)
from .validators import AssumptionReport, check_a1, check_a3_a4, check_a5, check_assumptions
from .specio import ExperimentSpec, SpecError, emit_spec, parse_spec, run

__all__ = [name for name in dir() if not name.startswith("_")]
