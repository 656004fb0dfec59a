"""Minimum-fuel planning for a series-hybrid aerial robot crossing quiet zones."""
from .energy import (
    EPS_Q,
    BatteryParams,
    EdgeTraversal,
    Mode,
    ModeConstraint,
    brute_force_edge_check,
    evaluate_edge,
    evaluate_edges,
    simulate_schedule,
)
from .exceptions import (
    GraphFormatError,
    InvalidArgumentError,
    InvalidGeometryError,
    InvalidScenarioError,
    InvariantViolationError,
    MapValidationError,
    NoFeasiblePlanError,
    PlacementError,
    QuietPathError,
    SizeGuardError,
)
from .geometry import (
    EPS_GEO,
    ConvexPolygon,
    Point2,
    Zone,
    ZoneKind,
    is_visible,
    point_in_interior,
    sample_boundary,
    segment_intersects_interior,
)
from .graph import (
    ChargeCore,
    ChargeGraph,
    SampledGraph,
    attach_endpoints,
    build_base_graph,
    build_charge_core,
    build_charge_graph_exact,
    build_charge_graph_interval,
    load_graph,
    save_graph,
)
from .planner import (
    PlanKind,
    PlanResult,
    Scenario,
    Trajectory,
    TrajectorySegment,
    brute_force_optimum,
    compute_lower_bound,
    extract_trajectory,
    gap_percent,
    plan_feasible,
    plan_no_fly_baseline,
    shortest_path,
    validate_trajectory,
)
from .harness import (
    BenchConfig,
    BenchReport,
    BenchRow,
    MapFile,
    OfflineCache,
    generate_random_map,
    generate_scenarios,
    load_map,
    run_benchmark,
    save_map,
)
from .plots import emit_plot

__version__ = "0.1.0"


def __getattr__(name):
    # scikit-learn is only imported when the estimator is asked for
    if name == "HybridPathPlanner":
        from .estimator import HybridPathPlanner

        return HybridPathPlanner
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
