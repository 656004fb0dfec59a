"""Convex polygon primitives, boundary sampling and visibility predicates.

All predicates treat boundary contact as *non*-intersecting: a segment that
slides along an edge or grazes a vertex of a zone does not enter it. This is
what lets edges leave a convex zone from one of its own boundary samples.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .exceptions import InvalidGeometryError, MapValidationError

EPS_GEO = 1e-9


class Point2(NamedTuple):
    x: float
    y: float


def as_point(p) -> Point2:
    x, y = float(p[0]), float(p[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise InvalidGeometryError(f"non-finite point {p!r}")
    return Point2(x, y)


def distance(a, b) -> float:
    return math.hypot(b[0] - a[0], b[1] - a[1])


def _cross(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


@dataclass(frozen=True)
class ConvexPolygon:
    """Strictly convex polygon with counter-clockwise vertices.

    Clockwise input is reversed on construction; anything non-convex,
    collinear or with repeated vertices raises ``InvalidGeometryError``.
    """

    vertices: tuple

    def __post_init__(self):
        pts = tuple(as_point(p) for p in self.vertices)
        if len(pts) < 3:
            raise InvalidGeometryError("polygon needs at least 3 vertices")
        n = len(pts)
        for i in range(n):
            for j in range(i + 1, n):
                if distance(pts[i], pts[j]) <= EPS_GEO:
                    raise InvalidGeometryError(f"repeated vertex {pts[i]}")
        crosses = [
            _cross(*pts[i - 1], *pts[i], *pts[(i + 1) % n]) for i in range(n)
        ]
        if all(c < 0 for c in crosses):
            pts = pts[::-1]
            crosses = [-c for c in crosses[::-1]]
        if not all(c > 0 for c in crosses):
            raise InvalidGeometryError("polygon is not strictly convex")
        # winding number must be one, otherwise a star shape slips through
        angle = 0.0
        for i in range(n):
            ax, ay = pts[i][0] - pts[i - 1][0], pts[i][1] - pts[i - 1][1]
            bx, by = pts[(i + 1) % n][0] - pts[i][0], pts[(i + 1) % n][1] - pts[i][1]
            angle += math.atan2(ax * by - ay * bx, ax * bx + ay * by)
        if abs(angle - 2 * math.pi) > 1e-6:
            raise InvalidGeometryError("polygon boundary self-intersects")
        object.__setattr__(self, "vertices", pts)

    def __len__(self):
        return len(self.vertices)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    def edges(self):
        n = len(self.vertices)
        for i in range(n):
            yield self.vertices[i], self.vertices[(i + 1) % n]

    def bbox(self):
        xs = [p.x for p in self.vertices]
        ys = [p.y for p in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)

    def perimeter(self) -> float:
        return sum(distance(a, b) for a, b in self.edges())

    def _halfplanes(self):
        # unit inward normals so each row evaluates a signed distance
        v = self.array
        e = np.roll(v, -1, axis=0) - v
        e /= np.linalg.norm(e, axis=1)[:, None]
        return v, e


class ZoneKind(enum.Enum):
    QUIET = "quiet"
    NO_FLY = "no_fly"


@dataclass(frozen=True)
class Zone:
    id: int
    polygon: ConvexPolygon
    kind: ZoneKind = ZoneKind.QUIET

    def __post_init__(self):
        if not isinstance(self.polygon, ConvexPolygon):
            object.__setattr__(self, "polygon", ConvexPolygon(tuple(self.polygon)))
        if not isinstance(self.kind, ZoneKind):
            object.__setattr__(self, "kind", ZoneKind(self.kind))

    @property
    def is_quiet(self) -> bool:
        return self.kind is ZoneKind.QUIET


def sample_boundary(polygon: ConvexPolygon, delta_l: float) -> list[Point2]:
    """Walk the boundary and return corners plus equal subdivisions per edge.

    An edge of length ``L`` is cut into ``ceil(L / delta_l)`` equal parts, so
    the output count is the sum of those part counts.
    """
    if not isinstance(polygon, ConvexPolygon):
        polygon = ConvexPolygon(tuple(polygon))
    if not (delta_l > 0 and math.isfinite(delta_l)):
        raise InvalidGeometryError(f"delta_l must be positive, got {delta_l}")
    out = []
    for a, b in polygon.edges():
        length = distance(a, b)
        # guard against L/delta_l landing a hair above an integer
        parts = max(1, math.ceil(length / delta_l - 1e-9))
        for j in range(parts):
            t = j / parts
            out.append(Point2(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)))
    return out


def segment_intersects_interior(a, b, polygon: ConvexPolygon) -> bool:
    """True iff the open segment (a, b) meets the open interior of ``polygon``.

    Cyrus-Beck clipping against the inward half-planes, with every half-plane
    shrunk by ``EPS_GEO`` so that boundary contact never counts.
    """
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    seg_len = math.hypot(bx - ax, by - ay)
    if seg_len <= EPS_GEO:
        return False
    t_lo, t_hi = 0.0, 1.0
    n = len(polygon.vertices)
    for i in range(n):
        px, py = polygon.vertices[i]
        qx, qy = polygon.vertices[(i + 1) % n]
        ex, ey = qx - px, qy - py
        el = math.hypot(ex, ey)
        ex, ey = ex / el, ey / el
        f0 = ex * (ay - py) - ey * (ax - px)
        f1 = ex * (by - py) - ey * (bx - px)
        df = f1 - f0
        if abs(df) <= 1e-15:
            if f0 <= EPS_GEO:
                return False
            continue
        t = (EPS_GEO - f0) / df
        if df > 0:
            t_lo = max(t_lo, t)
        else:
            t_hi = min(t_hi, t)
        if t_hi <= t_lo:
            return False
    return (t_hi - t_lo) * seg_len > EPS_GEO


def segments_intersect_interior(a: np.ndarray, b: np.ndarray, polygon: ConvexPolygon) -> np.ndarray:
    """Vectorised :func:`segment_intersects_interior` for ``(m, 2)`` endpoint arrays."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    v, e = polygon._halfplanes()
    f0 = e[None, :, 0] * (a[:, None, 1] - v[None, :, 1]) - e[None, :, 1] * (a[:, None, 0] - v[None, :, 0])
    f1 = e[None, :, 0] * (b[:, None, 1] - v[None, :, 1]) - e[None, :, 1] * (b[:, None, 0] - v[None, :, 0])
    df = f1 - f0
    parallel = np.abs(df) <= 1e-15
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (EPS_GEO - f0) / df
    lo = np.where(~parallel & (df > 0), t, 0.0).max(axis=1)
    hi = np.where(~parallel & (df < 0), t, 1.0).min(axis=1)
    lo = np.maximum(lo, 0.0)
    hi = np.minimum(hi, 1.0)
    blocked = np.any(parallel & (f0 <= EPS_GEO), axis=1)
    seg_len = np.hypot(b[:, 0] - a[:, 0], b[:, 1] - a[:, 1])
    return ~blocked & ((hi - lo) * seg_len > EPS_GEO) & (seg_len > EPS_GEO)


def is_visible(a, b, zones: Iterable[Zone]) -> bool:
    """True iff the segment avoids the interior of every zone, quiet or no-fly."""
    return not any(segment_intersects_interior(a, b, z.polygon) for z in zones)


def visibility_mask(a: np.ndarray, b: np.ndarray, zones: Sequence[Zone]) -> np.ndarray:
    """Batch visibility for ``(m, 2)`` endpoint arrays, with a bounding-box prefilter."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    visible = np.ones(len(a), dtype=bool)
    if len(a) == 0:
        return visible
    smin = np.minimum(a, b)
    smax = np.maximum(a, b)
    for z in zones:
        x0, y0, x1, y1 = z.polygon.bbox()
        cand = visible & (smax[:, 0] > x0) & (smin[:, 0] < x1) & (smax[:, 1] > y0) & (smin[:, 1] < y1)
        idx = np.flatnonzero(cand)
        if len(idx):
            hit = segments_intersect_interior(a[idx], b[idx], z.polygon)
            visible[idx[hit]] = False
    return visible


def point_in_interior(p, polygon: ConvexPolygon) -> bool:
    """Strict containment; points on the boundary are outside."""
    px, py = float(p[0]), float(p[1])
    n = len(polygon.vertices)
    for i in range(n):
        ax, ay = polygon.vertices[i]
        bx, by = polygon.vertices[(i + 1) % n]
        el = math.hypot(bx - ax, by - ay)
        if ((bx - ax) * (py - ay) - (by - ay) * (px - ax)) / el <= EPS_GEO:
            return False
    return True


def polygons_overlap(p: ConvexPolygon, q: ConvexPolygon, gap: float = 0.0) -> bool:
    """Separating-axis test: True iff the interiors intersect.

    With ``gap > 0`` polygons closer than ``gap`` along some normal also count
    as overlapping, which map generation uses to keep clearance.
    """
    for poly in (p, q):
        v, e = poly._halfplanes()
        normals = np.stack([-e[:, 1], e[:, 0]], axis=1)
        pa = p.array @ normals.T
        qa = q.array @ normals.T
        sep = np.maximum(qa.min(axis=0) - pa.max(axis=0), pa.min(axis=0) - qa.max(axis=0))
        if np.any(sep >= gap - EPS_GEO):
            return False
    return True


def validate_zones(zones: Sequence[Zone]) -> None:
    """Raise ``MapValidationError`` on duplicate ids or interior overlaps."""
    ids = [z.id for z in zones]
    if len(set(ids)) != len(ids):
        raise MapValidationError(f"zone ids are not unique: {ids}")
    for i in range(len(zones)):
        bi = zones[i].polygon.bbox()
        for j in range(i + 1, len(zones)):
            bj = zones[j].polygon.bbox()
            if bi[2] <= bj[0] or bj[2] <= bi[0] or bi[3] <= bj[1] or bj[3] <= bi[1]:
                continue
            if polygons_overlap(zones[i].polygon, zones[j].polygon):
                raise MapValidationError(
                    f"zones {zones[i].id} and {zones[j].id} have overlapping interiors"
                )
