"""Spatial sampling graph and the charge product graphs built on top of it.

Charge graphs are stored as compressed sparse rows (one or more edge blocks
over a shared node numbering) because realistic maps produce millions of
charge edges. Node numbering is fixed::

    [interior vertex 0 x labels][interior vertex 1 x labels]...[start][goal x labels][super sink]

with interior vertices in increasing spatial id. Base-map vertices always
come first, which lets a core block computed offline on the base graph be
reused verbatim once the start and goal are attached.
"""
from __future__ import annotations

import enum
import hashlib
import io
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .energy import (
    EPS_Q,
    BatteryParams,
    EdgeTraversal,
    ModeConstraint,
    evaluate_edge,
    evaluate_edges,
)
from .exceptions import (
    GraphFormatError,
    InvalidArgumentError,
    InvalidScenarioError,
)
from .geometry import (
    EPS_GEO,
    ConvexPolygon,
    Point2,
    Zone,
    ZoneKind,
    as_point,
    point_in_interior,
    sample_boundary,
    segments_intersect_interior,
    validate_zones,
    visibility_mask,
)

NO_ZONE = -1


@dataclass(frozen=True)
class SpatialVertex:
    id: int
    position: Point2
    zone_id: Optional[int]


@dataclass(frozen=True)
class SpatialEdge:
    endpoints: tuple
    length: float
    constraint: ModeConstraint


def _frozen(arr, dtype):
    arr = np.ascontiguousarray(arr, dtype=dtype)
    arr.setflags(write=False)
    return arr


class SampledGraph:
    """Undirected spatial graph over boundary samples (and optionally endpoints).

    Attributes:
        positions: ``(n, 2)`` vertex coordinates.
        zone_ids: quiet zone sampled by each vertex, ``-1`` when none.
        edges: ``(m, 2)`` vertex pairs with ``u < v``.
        lengths: Euclidean edge lengths.
        electric_only: mask of chords that belong to a single quiet zone.
        zones: the zones the graph was built from.
        n_base: number of vertices that came from the map itself.
        start, goal: endpoint vertex ids once attached, else ``None``.
    """

    def __init__(self, positions, zone_ids, edges, lengths, electric_only, zones,
                 n_base=None, start=None, goal=None, delta_l=math.nan, split_length=math.inf):
        self.positions = _frozen(np.reshape(positions, (-1, 2)), float)
        self.zone_ids = _frozen(zone_ids, np.int64)
        self.edges = _frozen(np.reshape(edges, (-1, 2)), np.int64)
        self.lengths = _frozen(lengths, float)
        self.electric_only = _frozen(electric_only, bool)
        self.zones = tuple(zones)
        self.n_base = len(self.positions) if n_base is None else int(n_base)
        self.start = None if start is None else int(start)
        self.goal = None if goal is None else int(goal)
        self.delta_l = float(delta_l)
        self.split_length = float(split_length)

    def __repr__(self):
        return (f"SampledGraph(n_vertices={self.n_vertices}, n_edges={self.n_edges}, "
                f"n_base={self.n_base}, start={self.start}, goal={self.goal})")

    def __eq__(self, other):
        if not isinstance(other, SampledGraph):
            return NotImplemented
        return (
            np.array_equal(self.positions, other.positions)
            and np.array_equal(self.zone_ids, other.zone_ids)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.lengths, other.lengths)
            and np.array_equal(self.electric_only, other.electric_only)
            and self.zones == other.zones
            and (self.n_base, self.start, self.goal) == (other.n_base, other.start, other.goal)
            and _same_float(self.delta_l, other.delta_l)
            and _same_float(self.split_length, other.split_length)
        )

    __hash__ = None

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def vertex(self, i) -> SpatialVertex:
        z = int(self.zone_ids[i])
        return SpatialVertex(int(i), Point2(*self.positions[i]), None if z == NO_ZONE else z)

    def vertices(self):
        return [self.vertex(i) for i in range(self.n_vertices)]

    def edge(self, k) -> SpatialEdge:
        u, v = self.edges[k]
        return SpatialEdge(
            (int(u), int(v)),
            float(self.lengths[k]),
            ModeConstraint.ELECTRIC_ONLY if self.electric_only[k] else ModeConstraint.ANY,
        )

    def spatial_edges(self):
        return [self.edge(k) for k in range(self.n_edges)]

    @cached_property
    def _lookup(self):
        return {(int(u), int(v)): k for k, (u, v) in enumerate(self.edges)}

    def find_edge(self, u, v) -> Optional[int]:
        u, v = int(u), int(v)
        return self._lookup.get((min(u, v), max(u, v)))

    @cached_property
    def base_digest(self) -> bytes:
        """SHA-256 over the base-map part, used to tie cached cores to their map."""
        inner = (self.edges[:, 0] < self.n_base) & (self.edges[:, 1] < self.n_base)
        h = hashlib.sha256()
        for arr in (self.positions[: self.n_base], self.edges[inner], self.lengths[inner],
                    self.electric_only[inner]):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.digest()

    @property
    def interior_vertices(self) -> np.ndarray:
        """Every vertex except the attached start and goal, in id order."""
        ends = {x for x in (self.start, self.goal) if x is not None}
        return np.array([i for i in range(self.n_vertices) if i not in ends], dtype=np.int64)

    def directed_edges(self):
        """Both orientations of every edge: ``(src, dst, length, electric_only)``."""
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        return src, dst, np.tile(self.lengths, 2), np.tile(self.electric_only, 2)

    def without_interior_chords(self) -> "SampledGraph":
        """Drop quiet-zone chords that cross a zone interior (the no-fly baseline graph).

        Electric-only chords lying on a zone side are kept: they only touch
        the boundary, so they remain legal when the zone is an obstacle.
        """
        keep = np.ones(self.n_edges, dtype=bool)
        idx = np.flatnonzero(self.electric_only)
        if len(idx):
            a = self.positions[self.edges[idx, 0]]
            b = self.positions[self.edges[idx, 1]]
            keep[idx] = visibility_mask(a, b, self.zones)
        return SampledGraph(
            self.positions, self.zone_ids, self.edges[keep], self.lengths[keep],
            self.electric_only[keep], self.zones, self.n_base, self.start, self.goal,
            self.delta_l, self.split_length,
        )


def _same_float(a, b):
    return a == b or (math.isnan(a) and math.isnan(b))


def _split_long(positions, zone_ids, edges, lengths, eo, split_length):
    """Replace edges longer than ``split_length`` by chains through new vertices."""
    if not np.isfinite(split_length) or len(lengths) == 0 or lengths.max() <= split_length:
        return positions, zone_ids, edges, lengths, eo
    positions = list(map(tuple, positions))
    zone_ids = list(zone_ids)
    new_edges, new_len, new_eo = [], [], []
    for (u, v), length, flag in zip(edges, lengths, eo):
        if length <= split_length:
            new_edges.append((u, v))
            new_len.append(length)
            new_eo.append(flag)
            continue
        pieces = int(length // split_length) + 1
        pu, pv = np.asarray(positions[u]), np.asarray(positions[v])
        chain = [int(u)]
        for j in range(1, pieces):
            positions.append(tuple(pu + (pv - pu) * (j / pieces)))
            zone_ids.append(NO_ZONE)
            chain.append(len(positions) - 1)
        chain.append(int(v))
        for x, y in zip(chain[:-1], chain[1:]):
            new_edges.append((min(x, y), max(x, y)))
            new_len.append(length / pieces)
            new_eo.append(flag)
    return (np.array(positions, float), np.array(zone_ids, np.int64),
            np.array(new_edges, np.int64).reshape(-1, 2), np.array(new_len, float), np.array(new_eo, bool))


def build_base_graph(zones: Sequence[Zone], delta_l: float, params: Optional[BatteryParams] = None) -> SampledGraph:
    """Sample every quiet zone boundary and connect samples (no endpoints).

    Same-quiet-zone pairs become electric-only chords; every other pair is an
    any-mode edge iff it is visible. No-fly zones contribute their corners.
    Edges longer than ``params.split_length`` are subdivided.
    """
    zones = tuple(zones)
    validate_zones(zones)
    if not (delta_l > 0 and math.isfinite(delta_l)):
        raise InvalidArgumentError(f"delta_l must be positive, got {delta_l}")
    params = params or BatteryParams()

    pos, zid = [], []
    for z in zones:
        if z.kind is ZoneKind.QUIET:
            samples = sample_boundary(z.polygon, delta_l)
            pos.extend(samples)
            zid.extend([z.id] * len(samples))
        else:
            pos.extend(z.polygon.vertices)
            zid.extend([NO_ZONE] * len(z.polygon))
    positions = np.array(pos, float).reshape(-1, 2)
    zone_ids = np.array(zid, np.int64)

    n = len(positions)
    iu, iv = np.triu_indices(n, k=1)
    lengths = np.hypot(*(positions[iv] - positions[iu]).T) if n else np.zeros(0)
    same_zone = (zone_ids[iu] == zone_ids[iv]) & (zone_ids[iu] != NO_ZONE)
    keep = same_zone.copy()
    other = np.flatnonzero(~same_zone)
    keep[other] = visibility_mask(positions[iu[other]], positions[iv[other]], zones)
    keep &= lengths > EPS_GEO
    edges = np.stack([iu[keep], iv[keep]], axis=1)
    positions, zone_ids, edges, lengths, eo = _split_long(
        positions, zone_ids, edges, lengths[keep], same_zone[keep], params.split_length
    )
    return SampledGraph(positions, zone_ids, edges, lengths, eo, zones,
                        delta_l=delta_l, split_length=params.split_length)


def attach_endpoints(base: SampledGraph, start, goal, zones: Optional[Sequence[Zone]] = None) -> SampledGraph:
    """Return a new graph with start/goal vertices and their visibility edges.

    ``base`` is left untouched. The start gets id ``base.n_vertices`` and the
    goal the next id; vertices created by splitting long endpoint edges follow.
    """
    if base.start is not None or base.goal is not None:
        raise InvalidArgumentError("graph already has endpoints attached")
    zones = base.zones if zones is None else tuple(zones)
    start, goal = as_point(start), as_point(goal)
    for name, p in (("start", start), ("goal", goal)):
        for z in zones:
            if point_in_interior(p, z.polygon):
                raise InvalidScenarioError(f"{name} {tuple(p)} lies inside zone {z.id}")
    if math.hypot(goal.x - start.x, goal.y - start.y) <= EPS_GEO:
        raise InvalidScenarioError("start and goal coincide")

    n = base.n_vertices
    s, t = n, n + 1
    positions = np.vstack([base.positions, [start, goal]])
    zone_ids = np.concatenate([base.zone_ids, [NO_ZONE, NO_ZONE]])

    cand_u = np.concatenate([np.arange(n), np.arange(n), [s]])
    cand_v = np.concatenate([np.full(n, s), np.full(n, t), [t]])
    a, b = positions[cand_u], positions[cand_v]
    lens = np.hypot(*(b - a).T)
    ok = visibility_mask(a, b, zones) & (lens > EPS_GEO)
    new_edges = np.stack([cand_u[ok], cand_v[ok]], axis=1)
    new_len = lens[ok]

    positions, zone_ids, new_edges, new_len, new_eo = _split_long(
        positions, zone_ids, new_edges, new_len, np.zeros(len(new_len), bool), base.split_length
    )
    return SampledGraph(
        positions, zone_ids,
        np.vstack([base.edges, new_edges]),
        np.concatenate([base.lengths, new_len]),
        np.concatenate([base.electric_only, new_eo]),
        zones, n_base=base.n_base, start=s, goal=t,
        delta_l=base.delta_l, split_length=base.split_length,
    )


# --------------------------------------------------------------------------
# charge labels


def charge_levels(lo: float, hi: float, step: float) -> np.ndarray:
    """``lo, lo+step, ...`` strictly below ``hi``, then ``hi`` itself."""
    if not step > 0:
        raise InvalidArgumentError(f"charge step must be positive, got {step}")
    if hi < lo:
        raise InvalidArgumentError("empty charge range")
    levels = []
    k = 0
    while lo + k * step < hi - EPS_Q:
        levels.append(lo + k * step)
        k += 1
    levels.append(hi)
    return np.array(levels, float)


def charge_intervals(lo: float, hi: float, n: int):
    """Equal partition of ``[lo, hi]`` into ``n`` pieces as ``(lows, highs)``."""
    n = int(n)
    if n < 1:
        raise InvalidArgumentError("need at least one interval")
    bounds = np.array([lo + k * ((hi - lo) / n) for k in range(n + 1)], float)
    bounds[-1] = hi
    return bounds[:-1].copy(), bounds[1:].copy()


def default_goal_intervals(n_l: int, q_goal: float, params: BatteryParams) -> int:
    width = (params.q_max - q_goal) / params.charge_range
    return max(1, math.ceil(n_l * width - 1e-9))


class Role(enum.IntEnum):
    START = 0
    INTERIOR = 1
    GOAL_CANDIDATE = 2
    SUPER_SINK = 3


@dataclass(frozen=True)
class ExactCharge:
    q: float


@dataclass(frozen=True)
class ChargeInterval:
    lo: float
    hi: float


@dataclass(frozen=True)
class ChargeNode:
    id: int
    spatial_id: Optional[int]
    label: object
    role: Role


@dataclass(frozen=True)
class ChargeEdge:
    source: int
    target: int
    cost: float
    traversal: Optional[EdgeTraversal]


@dataclass(frozen=True)
class EdgeBlock:
    """CSR rows over the full node range; rows sorted by target then cost."""

    indptr: np.ndarray
    targets: np.ndarray
    costs: np.ndarray

    def __post_init__(self):
        for name, dtype in (("indptr", np.int64), ("targets", np.int64), ("costs", float)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))

    def padded(self, n_nodes):
        if len(self.indptr) == n_nodes + 1:
            return self
        extra = np.full(n_nodes + 1 - len(self.indptr), self.indptr[-1])
        return EdgeBlock(np.concatenate([self.indptr, extra]), self.targets, self.costs)

    def __len__(self):
        return len(self.targets)

    @classmethod
    def from_arrays(cls, n_nodes, src, dst, cost):
        src = np.asarray(src, np.int64)
        dst = np.asarray(dst, np.int64)
        cost = np.asarray(cost, float)
        order = np.lexsort((cost, dst, src))
        counts = np.bincount(src, minlength=n_nodes)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return cls(indptr, dst[order], cost[order])


class CSRGraph:
    """Directed weighted graph made of one or more CSR edge blocks."""

    def __init__(self, n_nodes: int, blocks: Sequence[EdgeBlock]):
        self.n_nodes = int(n_nodes)
        self.blocks = tuple(b.padded(self.n_nodes) for b in blocks)

    @classmethod
    def from_edges(cls, n_nodes, edges):
        """Build from ``(source, target, cost)`` triples."""
        edges = list(edges)
        if edges:
            src, dst, cost = (np.array(c) for c in zip(*edges))
        else:
            src = dst = np.zeros(0, np.int64)
            cost = np.zeros(0)
        if len(cost) and (np.any(cost < 0) or not np.all(np.isfinite(cost))):
            raise InvalidArgumentError("edge costs must be finite and non-negative")
        if len(src) and (src.min() < 0 or max(src.max(), dst.max()) >= n_nodes):
            raise InvalidArgumentError("edge endpoint outside node range")
        return cls(n_nodes, [EdgeBlock.from_arrays(n_nodes, src, dst, cost)])

    @property
    def n_edges(self) -> int:
        return sum(len(b) for b in self.blocks)

    def out_edges(self, u):
        for b in self.blocks:
            s, e = b.indptr[u], b.indptr[u + 1]
            yield from zip(b.targets[s:e].tolist(), b.costs[s:e].tolist())

    def edge_cost(self, u, v) -> Optional[float]:
        best = None
        for b in self.blocks:
            s, e = b.indptr[u], b.indptr[u + 1]
            row = b.targets[s:e]
            hit = np.flatnonzero(row == v)
            if len(hit):
                c = float(b.costs[s + hit[0]])
                best = c if best is None else min(best, c)
        return best

    def edge_arrays(self):
        """All edges as ``(src, dst, cost)`` arrays in storage order."""
        srcs, dsts, costs = [], [], []
        for b in self.blocks:
            srcs.append(np.repeat(np.arange(self.n_nodes), np.diff(b.indptr)))
            dsts.append(b.targets)
            costs.append(b.costs)
        if not srcs:
            return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
        return np.concatenate(srcs), np.concatenate(dsts), np.concatenate(costs)


@dataclass(frozen=True)
class ChargeCore:
    """Offline part of a charge graph: edges among base-map vertices only."""

    kind: str
    n_base: int
    lows: np.ndarray
    highs: np.ndarray
    params: BatteryParams
    block: EdgeBlock
    base_digest: bytes = b""

    @property
    def n_labels(self):
        return len(self.lows)

    def matches(self, gs: SampledGraph, lows, highs, params, kind) -> bool:
        return (
            self.kind == kind and self.n_base == gs.n_base and self.params == params
            and self.base_digest == gs.base_digest
            and np.array_equal(self.lows, lows) and np.array_equal(self.highs, highs)
        )


def _core_block(gs: SampledGraph, lows, highs, params, n_base):
    """Edges among the first ``n_base`` vertices, rows already in CSR order."""
    k = len(lows)
    src, dst, length, eo = gs.directed_edges()
    inner = (src < n_base) & (dst < n_base)
    src, dst, length, eo = src[inner], dst[inner], length[inner], eo[inner]
    order = np.lexsort((dst, src))
    src, dst, length, eo = src[order], dst[order], length[order], eo[order]

    counts = np.zeros(n_base * k, np.int64)
    targets, costs = [], []
    bounds = np.searchsorted(src, np.arange(n_base + 1))
    for v in range(n_base):
        s, e = bounds[v], bounds[v + 1]
        if s == e:
            continue
        d = length[s:e][None, :, None]
        feas, cost = evaluate_edges(highs[:, None, None], lows[None, None, :], d, eo[s:e][None, :, None], params)
        # axis order (source label, neighbour, target label) is CSR row order
        tgt = (dst[s:e][None, :, None] * k + np.arange(k)[None, None, :])
        tgt = np.broadcast_to(tgt, feas.shape)
        counts[v * k:(v + 1) * k] = feas.sum(axis=(1, 2))
        targets.append(tgt[feas])
        costs.append(cost[feas])
    indptr = np.concatenate([[0], np.cumsum(counts)])
    targets = np.concatenate(targets) if targets else np.zeros(0, np.int64)
    costs = np.concatenate(costs) if costs else np.zeros(0)
    return EdgeBlock(indptr, targets, costs)


def build_charge_core(base: SampledGraph, kind: str, params: BatteryParams, *,
                      delta_q: Optional[float] = None, n_l: Optional[int] = None) -> ChargeCore:
    """Precompute the endpoint-independent part of ``G_u`` (``kind='exact'``) or ``G_l`` (``'interval'``)."""
    lows, highs = _interior_labels(kind, params, delta_q, n_l)
    block = _core_block(base, lows, highs, params, base.n_base)
    return ChargeCore(kind, base.n_base, _frozen(lows, float), _frozen(highs, float), params, block,
                      base.base_digest)


def _interior_labels(kind, params, delta_q, n_l):
    if kind == "exact":
        if delta_q is None:
            raise InvalidArgumentError("exact charge graph needs delta_q")
        levels = charge_levels(params.q_min, params.q_max, delta_q)
        return levels, levels.copy()
    if kind == "interval":
        if n_l is None:
            raise InvalidArgumentError("interval charge graph needs n_l")
        return charge_intervals(params.q_min, params.q_max, n_l)
    raise InvalidArgumentError(f"unknown charge graph kind {kind!r}")


class ChargeGraph(CSRGraph):
    """Product of spatial vertices with exact charges or charge intervals.

    Edge costs come from evaluating each spatial edge between the *upper*
    label of the source node and the *lower* label of the target node; for
    exact labels both coincide.
    """

    def __init__(self, spatial: SampledGraph, kind, lows, highs, goal_lows, goal_highs,
                 q_init, q_goal, params, blocks):
        self.spatial = spatial
        self.kind = kind
        self.lows = _frozen(lows, float)
        self.highs = _frozen(highs, float)
        self.goal_lows = _frozen(goal_lows, float)
        self.goal_highs = _frozen(goal_highs, float)
        self.q_init = float(q_init)
        self.q_goal = float(q_goal)
        self.params = params

        interior = spatial.interior_vertices
        k, kg = len(self.lows), len(self.goal_lows)
        self.n_labels = k
        self.interior = interior
        self.start = len(interior) * k
        self.goal_offset = self.start + 1
        self.sink = self.goal_offset + kg
        n_nodes = self.sink + 1

        rank = np.full(spatial.n_vertices, -1, np.int64)
        rank[interior] = np.arange(len(interior))
        self._rank = rank

        node_spatial = np.empty(n_nodes, np.int64)
        node_lo = np.empty(n_nodes)
        node_hi = np.empty(n_nodes)
        role = np.empty(n_nodes, np.int8)
        node_spatial[:self.start] = np.repeat(interior, k)
        node_lo[:self.start] = np.tile(self.lows, len(interior))
        node_hi[:self.start] = np.tile(self.highs, len(interior))
        role[:self.start] = Role.INTERIOR
        node_spatial[self.start] = spatial.start
        node_lo[self.start] = node_hi[self.start] = q_init
        role[self.start] = Role.START
        node_spatial[self.goal_offset:self.sink] = spatial.goal
        node_lo[self.goal_offset:self.sink] = self.goal_lows
        node_hi[self.goal_offset:self.sink] = self.goal_highs
        role[self.goal_offset:self.sink] = Role.GOAL_CANDIDATE
        node_spatial[self.sink] = -1
        node_lo[self.sink] = node_hi[self.sink] = math.nan
        role[self.sink] = Role.SUPER_SINK
        self.node_spatial = _frozen(node_spatial, np.int64)
        self.node_lo = _frozen(node_lo, float)
        self.node_hi = _frozen(node_hi, float)
        self.node_role = _frozen(role, np.int8)
        super().__init__(n_nodes, blocks)

    def __repr__(self):
        return (f"ChargeGraph(kind={self.kind!r}, n_nodes={self.n_nodes}, "
                f"n_edges={self.n_edges}, labels={self.n_labels})")

    def node_id(self, spatial_id, label_index) -> int:
        spatial_id = int(spatial_id)
        if spatial_id == self.spatial.start:
            return self.start
        if spatial_id == self.spatial.goal:
            return self.goal_offset + int(label_index)
        return int(self._rank[spatial_id]) * self.n_labels + int(label_index)

    def node(self, i) -> ChargeNode:
        i = int(i)
        if not 0 <= i < self.n_nodes:
            raise InvalidArgumentError(f"node {i} not in graph")
        role = Role(int(self.node_role[i]))
        sp = int(self.node_spatial[i])
        if role is Role.SUPER_SINK:
            return ChargeNode(i, None, None, role)
        lo, hi = float(self.node_lo[i]), float(self.node_hi[i])
        label = ExactCharge(lo) if self.kind == "exact" or role is Role.START else ChargeInterval(lo, hi)
        return ChargeNode(i, sp, label, role)

    def nodes(self):
        return [self.node(i) for i in range(self.n_nodes)]

    def traversal(self, u, v) -> Optional[EdgeTraversal]:
        """Re-evaluate the spatial edge behind charge edge ``u -> v``."""
        if self.node_role[v] == Role.SUPER_SINK:
            return None
        a, b = int(self.node_spatial[u]), int(self.node_spatial[v])
        k = self.spatial.find_edge(a, b)
        if k is None:
            raise InvalidArgumentError(f"no spatial edge between {a} and {b}")
        e = self.spatial.edge(k)
        return evaluate_edge(float(self.node_hi[u]), float(self.node_lo[v]), e.length, e.constraint, self.params)

    def charge_edges(self):
        """Materialise every edge as a :class:`ChargeEdge` (small graphs only)."""
        src, dst, cost = self.edge_arrays()
        return [
            ChargeEdge(int(u), int(v), float(c), self.traversal(u, v))
            for u, v, c in zip(src, dst, cost)
        ]


def _build_charge_graph(gs: SampledGraph, kind, lows, highs, goal_lows, goal_highs,
                        q_init, q_goal, params, core: Optional[ChargeCore]):
    _check_endpoints(gs, q_init, q_goal, params)
    if core is not None and not core.matches(gs, lows, highs, params, kind):
        raise InvalidArgumentError("cached charge core does not match this graph or grid")
    if core is None:
        core_block = _core_block(gs, lows, highs, params, gs.n_base)
    else:
        core_block = core.block

    graph = ChargeGraph(gs, kind, lows, highs, goal_lows, goal_highs, q_init, q_goal, params,
                        [core_block])
    ext = _extension_block(graph)
    graph.blocks = (graph.blocks[0], ext)
    return graph


def _check_endpoints(gs, q_init, q_goal, params):
    if gs.start is None or gs.goal is None:
        raise InvalidArgumentError("attach start and goal before building a charge graph")
    for name, q in (("q_init", q_init), ("q_goal", q_goal)):
        if not params.q_min - EPS_Q <= q <= params.q_max + EPS_Q:
            raise InvalidScenarioError(f"{name}={q} outside [{params.q_min}, {params.q_max}]")


def _labels_for(graph: ChargeGraph, v):
    """``(node_ids, lows, highs)`` for spatial vertex ``v``."""
    gs = graph.spatial
    if v == gs.start:
        return np.array([graph.start]), np.array([graph.q_init]), np.array([graph.q_init])
    if v == gs.goal:
        ids = graph.goal_offset + np.arange(len(graph.goal_lows))
        return ids, graph.goal_lows, graph.goal_highs
    base = int(graph._rank[v]) * graph.n_labels
    return base + np.arange(graph.n_labels), graph.lows, graph.highs


def _extension_block(graph: ChargeGraph) -> EdgeBlock:
    """Edges touching the endpoints or post-attachment vertices, plus sink edges."""
    gs = graph.spatial
    src, dst, length, eo = gs.directed_edges()
    outer = ~((src < gs.n_base) & (dst < gs.n_base)) & (dst != gs.start) & (src != gs.goal)
    s_all, d_all, c_all = [], [], []
    for a, b, d, flag in zip(src[outer], dst[outer], length[outer], eo[outer]):
        ids_a, _, hi_a = _labels_for(graph, int(a))
        ids_b, lo_b, _ = _labels_for(graph, int(b))
        feas, cost = evaluate_edges(hi_a[:, None], lo_b[None, :], d, flag, graph.params)
        ia, ib = np.nonzero(feas)
        s_all.append(ids_a[ia])
        d_all.append(ids_b[ib])
        c_all.append(cost[ia, ib])
    goal_ids = graph.goal_offset + np.arange(len(graph.goal_lows))
    s_all.append(goal_ids)
    d_all.append(np.full(len(goal_ids), graph.sink))
    c_all.append(np.zeros(len(goal_ids)))
    return EdgeBlock.from_arrays(graph.n_nodes, np.concatenate(s_all), np.concatenate(d_all), np.concatenate(c_all))


def build_charge_graph_exact(gs: SampledGraph, delta_q: float, q_init: float, q_goal: float,
                             params: BatteryParams, core: Optional[ChargeCore] = None) -> ChargeGraph:
    """Upper-bound graph: each interior vertex crossed with the charge grid.

    Interior labels are ``q_min, q_min + delta_q, ..., q_max``; goal labels
    run from ``q_goal`` to ``q_max`` with the same step.
    """
    _check_endpoints(gs, q_init, q_goal, params)
    lows, highs = _interior_labels("exact", params, delta_q, None)
    goal = charge_levels(min(q_goal, params.q_max), params.q_max, delta_q)
    return _build_charge_graph(gs, "exact", lows, highs, goal, goal.copy(), q_init, q_goal, params, core)


def build_charge_graph_interval(gs: SampledGraph, n_l: int, n_g: Optional[int], q_init: float, q_goal: float,
                                params: BatteryParams, core: Optional[ChargeCore] = None) -> ChargeGraph:
    """Lower-bound graph: each interior vertex crossed with ``n_l`` charge intervals.

    The goal gets ``n_g`` intervals of ``[q_goal, q_max]`` (default: same
    width as interior intervals, rounded up).
    """
    _check_endpoints(gs, q_init, q_goal, params)
    lows, highs = _interior_labels("interval", params, None, n_l)
    if n_g is None:
        n_g = default_goal_intervals(n_l, q_goal, params)
    if q_goal >= params.q_max - EPS_Q:
        g_lo = g_hi = np.array([params.q_max])
    else:
        g_lo, g_hi = charge_intervals(q_goal, params.q_max, n_g)
    return _build_charge_graph(gs, "interval", lows, highs, g_lo, g_hi, q_init, q_goal, params, core)


# --------------------------------------------------------------------------
# cache files
#
# Layout (all integers and floats little-endian):
#   magic      7 bytes  b"QPGRAPH"
#   version    u16
#   kind       u8       1 = sampled graph, 2 = charge core
#   payload    kind specific, see _write_sampled / _write_core
#   trailer    4 bytes  b"END\0"

MAGIC = b"QPGRAPH"
FORMAT_VERSION = 1
TRAILER = b"END\x00"
_KIND_SAMPLED = 1
_KIND_CORE = 2


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise GraphFormatError("graph file is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def array(self, dtype, count):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()


def _write_array(out, arr, dtype):
    out.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _write_params(out, p: BatteryParams):
    out.write(struct.pack("<5d", p.alpha, p.beta, p.q_min, p.q_max, p.c_f))


def _read_params(r: _Reader):
    return BatteryParams(*r.unpack("5d"))


def _write_sampled(out, g: SampledGraph):
    out.write(struct.pack("<I", len(g.zones)))
    for z in g.zones:
        kind = 0 if z.kind is ZoneKind.QUIET else 1
        out.write(struct.pack("<qBI", z.id, kind, len(z.polygon)))
        _write_array(out, z.polygon.array, "<f8")
    out.write(struct.pack("<dd", g.delta_l, g.split_length))
    out.write(struct.pack("<IIqq", g.n_vertices, g.n_base,
                          -1 if g.start is None else g.start, -1 if g.goal is None else g.goal))
    _write_array(out, g.positions, "<f8")
    _write_array(out, g.zone_ids, "<i8")
    out.write(struct.pack("<I", g.n_edges))
    _write_array(out, g.edges, "<i8")
    _write_array(out, g.lengths, "<f8")
    _write_array(out, g.electric_only, "u1")


def _read_sampled(r: _Reader) -> SampledGraph:
    (nz,) = r.unpack("I")
    zones = []
    for _ in range(nz):
        zid, kind, nv = r.unpack("qBI")
        if kind not in (0, 1):
            raise GraphFormatError(f"bad zone kind {kind}")
        verts = r.array("<f8", 2 * nv).reshape(-1, 2)
        zones.append(Zone(zid, ConvexPolygon(tuple(map(tuple, verts))),
                          ZoneKind.QUIET if kind == 0 else ZoneKind.NO_FLY))
    delta_l, split_length = r.unpack("dd")
    n, n_base, s, t = r.unpack("IIqq")
    positions = r.array("<f8", 2 * n).reshape(-1, 2)
    zone_ids = r.array("<i8", n)
    (m,) = r.unpack("I")
    edges = r.array("<i8", 2 * m).reshape(-1, 2)
    lengths = r.array("<f8", m)
    eo = r.array("u1", m).astype(bool)
    if m and (edges.min() < 0 or edges.max() >= n):
        raise GraphFormatError("edge refers to a missing vertex")
    return SampledGraph(positions, zone_ids, edges, lengths, eo, zones, n_base,
                        None if s < 0 else s, None if t < 0 else t, delta_l, split_length)


def _write_core(out, c: ChargeCore):
    out.write(struct.pack("<BII", 0 if c.kind == "exact" else 1, c.n_base, c.n_labels))
    _write_params(out, c.params)
    out.write(c.base_digest.ljust(32, b"\0"))
    _write_array(out, c.lows, "<f8")
    _write_array(out, c.highs, "<f8")
    out.write(struct.pack("<QQ", len(c.block.indptr), len(c.block.targets)))
    _write_array(out, c.block.indptr, "<i8")
    _write_array(out, c.block.targets, "<i8")
    _write_array(out, c.block.costs, "<f8")


def _read_core(r: _Reader) -> ChargeCore:
    kind, n_base, k = r.unpack("BII")
    params = _read_params(r)
    digest = r.take(32)
    lows = r.array("<f8", k)
    highs = r.array("<f8", k)
    n_ptr, m = r.unpack("QQ")
    indptr = r.array("<i8", n_ptr)
    targets = r.array("<i8", m)
    costs = r.array("<f8", m)
    if n_ptr != n_base * k + 1 or indptr[-1] != m:
        raise GraphFormatError("inconsistent charge core tables")
    return ChargeCore("exact" if kind == 0 else "interval", n_base, _frozen(lows, float),
                      _frozen(highs, float), params, EdgeBlock(indptr, targets, costs), digest)


def save_graph(graph, path) -> None:
    """Write a :class:`SampledGraph` or :class:`ChargeCore` cache file."""
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<H", FORMAT_VERSION))
    if isinstance(graph, SampledGraph):
        out.write(struct.pack("<B", _KIND_SAMPLED))
        _write_sampled(out, graph)
    elif isinstance(graph, ChargeCore):
        out.write(struct.pack("<B", _KIND_CORE))
        _write_core(out, graph)
    else:
        raise TypeError(f"cannot serialise {type(graph).__name__}")
    out.write(TRAILER)
    with open(path, "wb") as fh:
        fh.write(out.getvalue())


def load_graph(path):
    """Read a cache file written by :func:`save_graph`."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise GraphFormatError("not a graph cache file (bad magic)")
    (version,) = r.unpack("H")
    if version != FORMAT_VERSION:
        raise GraphFormatError(f"unsupported graph format version {version}")
    (kind,) = r.unpack("B")
    try:
        if kind == _KIND_SAMPLED:
            graph = _read_sampled(r)
        elif kind == _KIND_CORE:
            graph = _read_core(r)
        else:
            raise GraphFormatError(f"unknown graph kind {kind}")
    except (ValueError, struct.error) as exc:
        if isinstance(exc, GraphFormatError):
            raise
        raise GraphFormatError(f"malformed graph file: {exc}") from exc
    if r.take(len(TRAILER)) != TRAILER or r.pos != len(data):
        raise GraphFormatError("graph file has trailing garbage or a bad trailer")
    return graph
