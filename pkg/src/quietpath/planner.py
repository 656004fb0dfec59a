"""Search over charge graphs: feasible plans, lower bounds and the no-fly baseline."""
from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .energy import EPS_Q, BatteryParams, Mode, evaluate_edge
from .exceptions import (
    InvalidArgumentError,
    InvalidScenarioError,
    InvariantViolationError,
    NoFeasiblePlanError,
    SizeGuardError,
)
from .geometry import EPS_GEO, Point2, Zone, ZoneKind, as_point, segment_intersects_interior
from .graph import (
    ChargeCore,
    ChargeGraph,
    CSRGraph,
    Role,
    SampledGraph,
    attach_endpoints,
    build_base_graph,
    build_charge_graph_exact,
    build_charge_graph_interval,
)


class PlanKind(enum.Enum):
    UPPER_BOUND = "upper_bound"
    LOWER_BOUND = "lower_bound"
    BASELINE = "baseline"


@dataclass(frozen=True)
class Scenario:
    zones: tuple
    start: Point2
    goal: Point2
    q_init: float = 80.0
    q_goal: float = 50.0
    delta_l: float = 1.0
    delta_q: float = 2.5
    n_l: int = 40
    params: BatteryParams = field(default_factory=BatteryParams)

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(self.zones))
        object.__setattr__(self, "start", as_point(self.start))
        object.__setattr__(self, "goal", as_point(self.goal))
        p = self.params
        for name in ("q_init", "q_goal"):
            q = getattr(self, name)
            if not p.q_min <= q <= p.q_max:
                raise InvalidScenarioError(f"{name}={q} outside [{p.q_min}, {p.q_max}]")
        if not self.delta_l > 0 or not self.delta_q > 0 or self.n_l < 1:
            raise InvalidScenarioError("delta_l, delta_q and n_l must be positive")


@dataclass(frozen=True)
class TrajectorySegment:
    start: Point2
    end: Point2
    mode: Mode
    length: float
    q_start: float
    q_end: float


@dataclass(frozen=True)
class Trajectory:
    segments: tuple = ()

    def __len__(self):
        return len(self.segments)

    @property
    def length(self) -> float:
        return sum(s.length for s in self.segments)

    @property
    def gas_length(self) -> float:
        return sum(s.length for s in self.segments if s.mode is Mode.GAS)

    @property
    def switches(self) -> int:
        return sum(1 for a, b in zip(self.segments, self.segments[1:]) if a.mode is not b.mode)

    def fuel_cost(self, params: BatteryParams) -> float:
        return params.c_f * self.gas_length

    def charge_profile(self):
        """Distance travelled and charge at every segment boundary."""
        if not self.segments:
            return np.zeros(0), np.zeros(0)
        s = np.concatenate([[0.0], np.cumsum([seg.length for seg in self.segments])])
        q = np.array([self.segments[0].q_start] + [seg.q_end for seg in self.segments])
        return s, q


@dataclass(frozen=True)
class PlanResult:
    cost: float
    node_sequence: tuple
    trajectory: Optional[Trajectory]
    kind: PlanKind
    graph: Optional[ChargeGraph] = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple = ()

    def __bool__(self):
        return self.ok


def shortest_path(graph: CSRGraph, source: int, sink: int):
    """Dijkstra with a binary heap.

    Nodes are settled in ``(distance, node id)`` order and a node keeps the
    smallest-id predecessor among equally short routes, so the returned path
    does not depend on how edges were stored.

    Returns:
        ``(cost, [source, ..., sink])`` or ``None`` when the sink is unreachable.
    """
    n = graph.n_nodes
    for name, x in (("source", source), ("sink", sink)):
        if not 0 <= int(x) < n:
            raise InvalidArgumentError(f"{name} {x} is not a node of the graph")
    source, sink = int(source), int(sink)
    dist = np.full(n, np.inf)
    pred = np.full(n, n, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    dist[source] = 0.0
    pred[source] = -1
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u] or d > dist[u]:
            continue
        done[u] = True
        if u == sink:
            break
        for block in graph.blocks:
            s, e = block.indptr[u], block.indptr[u + 1]
            if s == e:
                continue
            v = block.targets[s:e]
            nd = d + block.costs[s:e]
            if len(v) > 1:
                # rows are sorted by (target, cost): keep the cheapest parallel edge
                first = np.ones(len(v), dtype=bool)
                first[1:] = v[1:] != v[:-1]
                v, nd = v[first], nd[first]
            dv = dist[v]
            better = ~done[v] & ((nd < dv) | ((nd == dv) & (u < pred[v])))
            if not better.any():
                continue
            idx = v[better]
            val = nd[better]
            dist[idx] = val
            pred[idx] = u
            for c, w in zip(val.tolist(), idx.tolist()):
                heapq.heappush(heap, (c, w))
    if not done[sink]:
        return None
    path = [sink]
    while path[-1] != source:
        path.append(int(pred[path[-1]]))
    return float(dist[sink]), path[::-1]


def _collinear_continuation(a: TrajectorySegment, b: TrajectorySegment) -> bool:
    ax, ay = a.end.x - a.start.x, a.end.y - a.start.y
    bx, by = b.end.x - b.start.x, b.end.y - b.start.y
    cross = ax * by - ay * bx
    return ax * bx + ay * by > 0 and abs(cross) <= EPS_GEO * max(1.0, a.length * b.length)


def extract_trajectory(graph: ChargeGraph, path: Sequence[int]) -> Trajectory:
    """Turn a node path of an exact charge graph into a flyable trajectory.

    Each edge schedule is recomputed from the charge actually carried into
    the edge, which can exceed the node label after an all-electric edge, so
    the profile is continuous and never costs more than the edge weight.
    Adjacent same-mode pieces on a straight line are merged.
    """
    if graph.kind != "exact":
        raise InvalidArgumentError("trajectories exist only for exact-charge graphs")
    nodes = [int(x) for x in path]
    if nodes and graph.node_role[nodes[-1]] == Role.SUPER_SINK:
        nodes = nodes[:-1]
    if not nodes:
        return Trajectory()
    gs = graph.spatial
    pos = gs.positions
    q = float(graph.node_hi[nodes[0]])
    pieces = []
    for u, v in zip(nodes[:-1], nodes[1:]):
        if graph.edge_cost(u, v) is None:
            raise InvariantViolationError(f"nodes {u} and {v} are not adjacent")
        a, b = int(graph.node_spatial[u]), int(graph.node_spatial[v])
        edge = gs.edge(gs.find_edge(a, b))
        tr = evaluate_edge(q, float(graph.node_lo[v]), edge.length, edge.constraint, graph.params)
        if not tr.feasible:
            raise InvariantViolationError(f"edge {u}->{v} infeasible from carried charge {q}")
        pa, pb = pos[a], pos[b]
        travelled = 0.0
        for i, (length, mode) in enumerate(tr.schedule):
            p0 = pa + (pb - pa) * (travelled / edge.length)
            travelled += length
            p1 = pb if i == len(tr.schedule) - 1 else pa + (pb - pa) * (travelled / edge.length)
            rate = graph.params.beta if mode is Mode.GAS else -graph.params.alpha
            q_next = q + rate * length
            pieces.append(TrajectorySegment(Point2(float(p0[0]), float(p0[1])), Point2(float(p1[0]), float(p1[1])),
                                             mode, float(length), q, q_next))
            q = q_next
    return Trajectory(merge_segments(pieces))


def merge_segments(pieces: Sequence[TrajectorySegment]) -> tuple:
    """Fuse neighbours that share a mode and continue along the same line."""
    merged = []
    for seg in pieces:
        prev = merged[-1] if merged else None
        if prev is not None and prev.mode is seg.mode and _collinear_continuation(prev, seg):
            merged[-1] = TrajectorySegment(prev.start, seg.end, seg.mode, prev.length + seg.length,
                                           prev.q_start, seg.q_end)
        else:
            merged.append(seg)
    return tuple(merged)


def validate_trajectory(traj: Trajectory, zones: Sequence[Zone], params: BatteryParams,
                        q_init: float, q_goal: float) -> ValidationReport:
    """Audit a trajectory against the battery model and the zone rules."""
    problems = []
    segs = traj.segments
    if not segs:
        if q_init < q_goal - EPS_Q:
            problems.append(f"empty trajectory but q_init {q_init} < q_goal {q_goal}")
        return ValidationReport(not problems, tuple(problems))
    if abs(segs[0].q_start - q_init) > EPS_Q:
        problems.append(f"starts with charge {segs[0].q_start}, expected {q_init}")
    for i, seg in enumerate(segs):
        scale = max(1.0, abs(seg.start.x), abs(seg.start.y), abs(seg.end.x), abs(seg.end.y))
        if i and (math.hypot(seg.start.x - segs[i - 1].end.x, seg.start.y - segs[i - 1].end.y) > EPS_GEO * scale):
            problems.append(f"segment {i}: geometric gap")
        if i and abs(seg.q_start - segs[i - 1].q_end) > EPS_Q:
            problems.append(f"segment {i}: charge jumps from {segs[i - 1].q_end} to {seg.q_start}")
        chord = math.hypot(seg.end.x - seg.start.x, seg.end.y - seg.start.y)
        if abs(chord - seg.length) > 1e-6 * max(1.0, seg.length):
            problems.append(f"segment {i}: length {seg.length} != distance {chord}")
        rate = params.beta if seg.mode is Mode.GAS else -params.alpha
        if abs(seg.q_start + rate * seg.length - seg.q_end) > EPS_Q * max(1.0, abs(seg.q_end)):
            problems.append(f"segment {i}: charge change inconsistent with {seg.mode.value} mode")
        lo, hi = min(seg.q_start, seg.q_end), max(seg.q_start, seg.q_end)
        if lo < params.q_min - EPS_Q or hi > params.q_max + EPS_Q:
            problems.append(f"segment {i}: charge [{lo}, {hi}] leaves [{params.q_min}, {params.q_max}]")
        for z in zones:
            if not segment_intersects_interior(seg.start, seg.end, z.polygon):
                continue
            if z.kind is ZoneKind.NO_FLY:
                problems.append(f"segment {i}: crosses no-fly zone {z.id}")
            elif seg.mode is Mode.GAS:
                problems.append(f"segment {i}: gasoline mode inside quiet zone {z.id}")
    if segs[-1].q_end < q_goal - EPS_Q:
        problems.append(f"arrives with {segs[-1].q_end} < q_goal {q_goal}")
    return ValidationReport(not problems, tuple(problems))


def gap_percent(ub: float, lb: float) -> float:
    """Relative gap ``100 (ub - lb) / lb``; NaN marks the undefined ``lb == 0 < ub`` case."""
    if lb < 0 or not (math.isfinite(ub) and math.isfinite(lb)):
        raise InvalidArgumentError(f"bounds must be finite and non-negative, got ub={ub}, lb={lb}")
    if ub < lb - EPS_Q:
        raise InvariantViolationError(f"upper bound {ub} below lower bound {lb}")
    if lb <= EPS_Q:
        return 0.0 if ub <= EPS_Q else math.nan
    return max(0.0, 100.0 * (ub - lb) / lb)


def _spatial(scenario: Scenario, base: Optional[SampledGraph]) -> SampledGraph:
    if base is None:
        base = build_base_graph(scenario.zones, scenario.delta_l, scenario.params)
    return attach_endpoints(base, scenario.start, scenario.goal)


def _solve_exact(scenario, gs, core, kind):
    graph = build_charge_graph_exact(gs, scenario.delta_q, scenario.q_init, scenario.q_goal,
                                     scenario.params, core=core)
    found = shortest_path(graph, graph.start, graph.sink)
    if found is None:
        raise NoFeasiblePlanError(f"no feasible {kind.value} plan for this scenario")
    cost, path = found
    traj = extract_trajectory(graph, path)
    report = validate_trajectory(traj, scenario.zones, scenario.params, scenario.q_init, scenario.q_goal)
    if not report:
        raise InvariantViolationError("planner produced an invalid trajectory: " + "; ".join(report.violations))
    return PlanResult(cost, tuple(path), traj, kind, graph)


def plan_feasible(scenario: Scenario, *, base: Optional[SampledGraph] = None,
                  core: Optional[ChargeCore] = None) -> PlanResult:
    """Minimum-fuel plan on the exact-charge graph (an upper bound on the true optimum).

    ``base`` and ``core`` are optional offline artefacts for the scenario's map.
    """
    return _solve_exact(scenario, _spatial(scenario, base), core, PlanKind.UPPER_BOUND)


def plan_no_fly_baseline(scenario: Scenario, *, base: Optional[SampledGraph] = None,
                         core: Optional[ChargeCore] = None) -> PlanResult:
    """Same planner with quiet zones treated as obstacles.

    ``base`` is the full map graph; ``core`` must have been built on
    ``base.without_interior_chords()``.
    """
    if base is None:
        base = build_base_graph(scenario.zones, scenario.delta_l, scenario.params)
    gs = attach_endpoints(base.without_interior_chords(), scenario.start, scenario.goal)
    return _solve_exact(scenario, gs, core, PlanKind.BASELINE)


def compute_lower_bound(scenario: Scenario, *, base: Optional[SampledGraph] = None,
                        core: Optional[ChargeCore] = None, n_g: Optional[int] = None) -> PlanResult:
    """Shortest path on the interval-relaxation graph.

    Charge may jump within an interval at every vertex, so the value never
    exceeds the cost of any feasible plan on the same spatial graph.
    """
    gs = _spatial(scenario, base)
    graph = build_charge_graph_interval(gs, scenario.n_l, n_g, scenario.q_init, scenario.q_goal,
                                        scenario.params, core=core)
    found = shortest_path(graph, graph.start, graph.sink)
    if found is None:
        raise NoFeasiblePlanError("interval relaxation has no path; refusing to report a vacuous bound")
    cost, path = found
    return PlanResult(cost, tuple(path), None, PlanKind.LOWER_BOUND, graph)


def relaxed_profile(graph: ChargeGraph, path: Sequence[int]):
    """Per-edge ``(distance_from, distance_to, q_leave, q_arrive)`` of a lower-bound path.

    The vehicle leaves each vertex at the top of its interval and arrives at
    the bottom of the next, so the profile jumps at vertices.
    """
    nodes = [int(x) for x in path if graph.node_role[int(x)] != Role.SUPER_SINK]
    out = []
    s = 0.0
    for u, v in zip(nodes[:-1], nodes[1:]):
        a, b = int(graph.node_spatial[u]), int(graph.node_spatial[v])
        length = float(graph.spatial.lengths[graph.spatial.find_edge(a, b)])
        out.append((s, s + length, float(graph.node_hi[u]), float(graph.node_lo[v])))
        s += length
    return out


def brute_force_optimum(gs: SampledGraph, charge_grid: Sequence[float], q_init: float, q_goal: float,
                        params: BatteryParams, goal_grid: Optional[Sequence[float]] = None) -> Optional[float]:
    """Exhaustive optimum over every walk of the charge-product graph.

    Every ordered pair of adjacent spatial vertices and every pair of charge
    labels is evaluated with the scalar edge evaluator, then all walks are
    relaxed Bellman-Ford style until nothing improves. Walks (not just simple
    spatial paths) are covered, since revisiting a vertex at a different
    charge can be the only way to charge up before a long quiet crossing.

    Returns:
        The minimum cost, or ``None`` when the goal is unreachable.
    """
    charge_grid = sorted(float(q) for q in charge_grid)
    if goal_grid is None:
        goal_grid = [q for q in charge_grid if q >= q_goal - EPS_Q]
    goal_grid = sorted(float(q) for q in goal_grid)
    if gs.n_vertices > 8 or len(charge_grid) > 5 or len(goal_grid) > 5:
        raise SizeGuardError("brute force limited to 8 spatial vertices and 5 charge levels")
    if gs.start is None or gs.goal is None:
        raise InvalidArgumentError("attach start and goal first")

    labels = {}
    for v in range(gs.n_vertices):
        if v == gs.start:
            labels[v] = [q_init]
        elif v == gs.goal:
            labels[v] = goal_grid
        else:
            labels[v] = charge_grid
    nodes = [(v, q) for v in range(gs.n_vertices) for q in labels[v]]
    index = {node: i for i, node in enumerate(nodes)}
    edges = []
    for k in range(gs.n_edges):
        e = gs.edge(k)
        for a, b in (e.endpoints, e.endpoints[::-1]):
            for qa in labels[a]:
                for qb in labels[b]:
                    tr = evaluate_edge(qa, qb, e.length, e.constraint, params)
                    if tr.feasible:
                        edges.append((index[(a, qa)], index[(b, qb)], tr.cost))
    dist = [math.inf] * len(nodes)
    dist[index[(gs.start, q_init)]] = 0.0
    for _ in range(len(nodes)):
        changed = False
        for u, v, c in edges:
            if dist[u] + c < dist[v]:
                dist[v] = dist[u] + c
                changed = True
        if not changed:
            break
    best = min(dist[index[(gs.goal, q)]] for q in goal_grid)
    return None if math.isinf(best) else best
