"""Maps, scenario sampling and the benchmark sweep (bounds, gaps, baseline savings, timings)."""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .energy import EPS_Q, BatteryParams
from .exceptions import (
    InvalidArgumentError,
    InvariantViolationError,
    MapValidationError,
    NoFeasiblePlanError,
    PlacementError,
    QuietPathError,
)
from .geometry import (
    ConvexPolygon,
    Point2,
    Zone,
    ZoneKind,
    as_point,
    point_in_interior,
    polygons_overlap,
    validate_zones,
)
from .graph import ChargeCore, SampledGraph, build_base_graph, build_charge_core
from .planner import (
    Scenario,
    compute_lower_bound,
    gap_percent,
    plan_feasible,
    plan_no_fly_baseline,
)

MAX_PLACEMENT_ATTEMPTS = 10_000


@dataclass(frozen=True)
class MapFile:
    name: str
    bounds: tuple
    zones: tuple = ()

    def __post_init__(self):
        w, h = (float(b) for b in self.bounds)
        if not (w > 0 and h > 0 and math.isfinite(w) and math.isfinite(h)):
            raise MapValidationError(f"bounds must be positive, got {self.bounds}")
        object.__setattr__(self, "bounds", (w, h))
        object.__setattr__(self, "zones", tuple(self.zones))
        for z in self.zones:
            x0, y0, x1, y1 = z.polygon.bbox()
            if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
                raise MapValidationError(f"zone {z.id} leaves the map bounds")
        validate_zones(self.zones)

    @property
    def quiet_zones(self):
        return tuple(z for z in self.zones if z.kind is ZoneKind.QUIET)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "bounds": list(self.bounds),
            "zones": [
                {"id": z.id, "kind": z.kind.value, "vertices": [list(p) for p in z.polygon.vertices]}
                for z in self.zones
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MapFile":
        try:
            zones = [
                Zone(int(z["id"]), ConvexPolygon(tuple(tuple(p) for p in z["vertices"])),
                     ZoneKind(z.get("kind", "quiet")))
                for z in data["zones"]
            ]
            return cls(str(data.get("name", "map")), tuple(data["bounds"]), tuple(zones))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, QuietPathError):
                raise
            raise MapValidationError(f"malformed map record: {exc}") from exc


def save_map(m: MapFile, path) -> None:
    Path(path).write_text(json.dumps(m.to_dict(), indent=2))


def load_map(path) -> MapFile:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MapValidationError(f"{path}: not valid JSON ({exc})") from exc
    return MapFile.from_dict(data)


def _random_polygon(rng, center, radius, sides, min_gap):
    while True:
        angles = np.sort(rng.uniform(0.0, 2 * math.pi, sides))
        gaps = np.diff(np.concatenate([angles, [angles[0] + 2 * math.pi]]))
        if gaps.min() >= min_gap:
            break
    pts = center + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return ConvexPolygon(tuple(map(tuple, pts)))


def generate_random_map(n_zones: int, seed: int, bounds=(2000.0, 2000.0),
                        radius_range=(0.03, 0.08), sides_range=(3, 8), *,
                        clearance: float = 0.005, name: Optional[str] = None) -> MapFile:
    """Scatter random convex quiet zones over a rectangle.

    Each zone is ``sides`` points at random angles on a circle whose radius
    is a random fraction (``radius_range``) of the map width, centred
    uniformly so that the circle fits inside ``bounds``. Zones that come
    closer than ``clearance * width`` to an earlier one are resampled.

    Raises:
        PlacementError: when ``MAX_PLACEMENT_ATTEMPTS`` draws fail in total.
    """
    if n_zones < 0:
        raise InvalidArgumentError("n_zones must be non-negative")
    w, h = (float(b) for b in bounds)
    lo_r, hi_r = radius_range
    lo_s, hi_s = sides_range
    if not (0 < lo_r <= hi_r) or not (3 <= lo_s <= hi_s):
        raise InvalidArgumentError("bad radius or sides range")
    rng = np.random.default_rng(seed)
    zones = []
    attempts = 0
    while len(zones) < n_zones:
        attempts += 1
        if attempts > MAX_PLACEMENT_ATTEMPTS:
            raise PlacementError(f"placed only {len(zones)} of {n_zones} zones")
        radius = rng.uniform(lo_r, hi_r) * w
        if 2 * radius >= min(w, h):
            continue
        center = rng.uniform([radius, radius], [w - radius, h - radius])
        sides = int(rng.integers(lo_s, hi_s + 1))
        poly = _random_polygon(rng, center, radius, sides, min_gap=0.35 * 2 * math.pi / sides)
        if any(polygons_overlap(poly, z.polygon, gap=clearance * w) for z in zones):
            continue
        zones.append(Zone(len(zones), poly, ZoneKind.QUIET))
    return MapFile(name or f"random-{n_zones}-{seed}", (w, h), tuple(zones))


def _inside_any(p, zones):
    return any(point_in_interior(p, z.polygon) for z in zones)


def generate_scenarios(m: MapFile, count: int, seed: int, min_dist: float = 0.0, *,
                       q_init: float = 80.0, q_goal: float = 50.0, delta_l: float = 100.0,
                       delta_q: float = 2.5, n_l: int = 40,
                       params: Optional[BatteryParams] = None) -> list:
    """Draw ``count`` start/goal pairs outside every zone and at least ``min_dist`` apart.

    Scenario ``i`` depends only on ``(seed, i)``, so lists of different
    lengths share their prefixes.
    """
    params = params or BatteryParams()
    w, h = m.bounds
    if count < 0:
        raise InvalidArgumentError("count must be non-negative")
    if min_dist >= math.hypot(w, h):
        raise InvalidArgumentError("min_dist exceeds the map diagonal")
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            s, g = rng.uniform([0, 0], [w, h], size=(2, 2))
            if math.dist(s, g) < min_dist or _inside_any(s, m.zones) or _inside_any(g, m.zones):
                continue
            break
        else:
            raise PlacementError(f"could not place scenario {i}")
        out.append(Scenario(m.zones, as_point(s), as_point(g), q_init, q_goal, delta_l, delta_q, n_l, params))
    return out


@dataclass
class OfflineCache:
    """Endpoint-independent artefacts for one map: base graphs and charge cores."""

    base: SampledGraph
    baseline_base: SampledGraph
    exact: dict = field(default_factory=dict)
    interval: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)
    seconds: float = 0.0

    @classmethod
    def build(cls, zones, delta_l, params, delta_qs=(), n_ls=()):
        t0 = time.perf_counter()
        base = build_base_graph(zones, delta_l, params)
        cache = cls(base, base.without_interior_chords())
        cache.add_grids(params, delta_qs, n_ls)
        cache.seconds += time.perf_counter() - t0
        return cache

    def add_grids(self, params, delta_qs=(), n_ls=()):
        t0 = time.perf_counter()
        for dq in delta_qs:
            if dq not in self.exact:
                self.exact[dq] = build_charge_core(self.base, "exact", params, delta_q=dq)
                self.baseline[dq] = build_charge_core(self.baseline_base, "exact", params, delta_q=dq)
        for n in n_ls:
            if n not in self.interval:
                self.interval[n] = build_charge_core(self.base, "interval", params, n_l=n)
        self.seconds += time.perf_counter() - t0

    def drop_grids(self):
        self.exact.clear()
        self.interval.clear()
        self.baseline.clear()


@dataclass
class BenchConfig:
    maps: list = field(default_factory=list)
    scenarios_per_map: int = 50
    seed: int = 0
    discretizations: list = field(default_factory=lambda: [20, 30, 40])
    n_l: Optional[list] = None
    params: BatteryParams = field(default_factory=BatteryParams)
    min_dist: float = 1000.0
    delta_l: float = 100.0
    q_init: float = 80.0
    q_goal: float = 50.0
    n_jobs: int = 1

    def __post_init__(self):
        if self.scenarios_per_map < 1 or not self.discretizations:
            raise InvalidArgumentError("need at least one scenario and one discretization")
        if self.n_l is not None and len(self.n_l) != len(self.discretizations):
            raise InvalidArgumentError("n_l list must pair with the discretization list")
        if any(k < 1 for k in self.discretizations) or self.n_jobs < 1:
            raise InvalidArgumentError("discretizations and n_jobs must be positive")

    def interval_counts(self):
        return list(self.n_l) if self.n_l is not None else list(self.discretizations)

    def resolved_maps(self):
        return [m if isinstance(m, MapFile) else load_map(m) for m in self.maps]

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "BenchConfig":
        data = dict(data)
        params = BatteryParams(**data.pop("params", {}))
        maps = []
        for ref in data.pop("maps", []):
            if isinstance(ref, dict) and "generate" in ref:
                g = ref["generate"]
                maps.append(generate_random_map(int(g["zones"]), int(g.get("seed", 0)),
                                                tuple(g.get("bounds", (2000.0, 2000.0)))))
            else:
                maps.append(load_map(Path(base_dir) / ref))
        return cls(maps=maps, params=params, **data)


@dataclass
class BenchRow:
    map: str
    scenario: int
    seed: int
    discretization: int
    n_l: int
    ub: float = math.nan
    lb: float = math.nan
    gap: float = math.nan
    baseline: float = math.nan
    savings: float = math.nan
    offline_s: float = math.nan
    online_s: float = math.nan
    lb_s: float = math.nan
    baseline_s: float = math.nan
    valid: bool = False
    status: str = "ok"
    message: str = ""

    def _key(self):
        return tuple(None if isinstance(v, float) and math.isnan(v) else v for v in asdict(self).values())

    def __eq__(self, other):
        return isinstance(other, BenchRow) and self._key() == other._key()


def _savings(baseline, ub):
    if not (baseline > EPS_Q):
        return 0.0 if abs(baseline - ub) <= EPS_Q else math.nan
    return 100.0 * (baseline - ub) / baseline


def _summary(values):
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if len(v) == 0:
        return {"n": 0, "mean": math.nan, "median": math.nan, "q1": math.nan, "q3": math.nan}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"n": len(v), "mean": float(v.mean()), "median": float(med), "q1": float(q1), "q3": float(q3)}


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)

    def __eq__(self, other):
        return isinstance(other, BenchReport) and self.rows == other.rows

    def ok_rows(self, discretization=None):
        return [r for r in self.rows if r.status == "ok" and
                (discretization is None or r.discretization == discretization)]

    def discretizations(self):
        return sorted({r.discretization for r in self.rows})

    def check_invariants(self):
        """Re-audit every solved row; raise with all offending rows listed."""
        bad = []
        for r in self.ok_rows():
            if r.ub < r.lb - EPS_Q:
                bad.append(f"{r.map}#{r.scenario}@{r.discretization}: UB {r.ub} < LB {r.lb}")
            if not math.isnan(r.baseline) and r.baseline < r.ub - EPS_Q:
                bad.append(f"{r.map}#{r.scenario}@{r.discretization}: baseline {r.baseline} < UB {r.ub}")
            if not r.valid:
                bad.append(f"{r.map}#{r.scenario}@{r.discretization}: trajectory failed validation")
        if bad:
            raise InvariantViolationError("benchmark invariants broken:\n  " + "\n  ".join(bad))

    def aggregate(self) -> dict:
        self.check_invariants()
        out = {}
        for k in self.discretizations():
            rows = self.ok_rows(k)
            out[k] = {
                "rows": len([r for r in self.rows if r.discretization == k]),
                "solved": len(rows),
                "gap": _summary(r.gap for r in rows),
                "savings": _summary(r.savings for r in rows),
                "offline_s": _summary(r.offline_s for r in rows),
                "online_s": _summary(r.online_s for r in rows),
                "lb_s": _summary(r.lb_s for r in rows),
            }
        return out

    def to_csv(self, path) -> None:
        names = [f.name for f in fields(BenchRow)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, n) for n in names)])

    @classmethod
    def from_csv(cls, path) -> "BenchReport":
        types = {f.name: f.type for f in fields(BenchRow)}
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                kw = {}
                for name, raw in rec.items():
                    t = types[name]
                    if t == "float":
                        kw[name] = float(raw)
                    elif t == "int":
                        kw[name] = int(raw)
                    elif t == "bool":
                        kw[name] = raw == "True"
                    else:
                        kw[name] = raw
                rows.append(BenchRow(**kw))
        return cls(rows)


def _solve_row(sc: Scenario, cache: OfflineCache, row: BenchRow, k: int, n_l: int) -> BenchRow:
    dq = sc.params.charge_range / k
    try:
        t0 = time.perf_counter()
        ub = plan_feasible(sc, base=cache.base, core=cache.exact[dq])
        row.online_s = time.perf_counter() - t0
        row.ub, row.valid = ub.cost, True
        t0 = time.perf_counter()
        row.lb = compute_lower_bound(sc, base=cache.base, core=cache.interval[n_l]).cost
        row.lb_s = time.perf_counter() - t0
        row.gap = gap_percent(row.ub, row.lb)
        t0 = time.perf_counter()
        try:
            row.baseline = plan_no_fly_baseline(sc, base=cache.base, core=cache.baseline[dq]).cost
            row.savings = _savings(row.baseline, row.ub)
        except NoFeasiblePlanError:
            # avoiding the quiet zones can be impossible; the hybrid plan still counts
            row.message = "baseline infeasible"
        row.baseline_s = time.perf_counter() - t0
    except NoFeasiblePlanError as exc:
        row.status, row.message = "no_feasible_plan", str(exc)
    except QuietPathError as exc:
        row.status, row.message = "error", f"{type(exc).__name__}: {exc}"
    return row


def run_benchmark(config: BenchConfig, progress=None) -> BenchReport:
    """Sweep maps x scenarios x discretizations.

    Discretization ``k`` means a charge step of ``(q_max - q_min) / k`` for
    the upper bound and the paired interval count for the lower bound.
    Offline time (base graph plus charge cores, per map and discretization)
    is attributed to every row of that block; online time covers endpoint
    attachment, search and trajectory extraction for one query.
    """
    p = config.params
    rows = []
    for mi, m in enumerate(config.resolved_maps()):
        t0 = time.perf_counter()
        cache = OfflineCache.build(m.zones, config.delta_l, p)
        base_s = time.perf_counter() - t0
        scenarios = generate_scenarios(m, config.scenarios_per_map, config.seed * 1000 + mi, config.min_dist,
                                       q_init=config.q_init, q_goal=config.q_goal, delta_l=config.delta_l,
                                       params=p)
        for k, n_l in zip(config.discretizations, config.interval_counts()):
            dq = p.charge_range / k
            t0 = time.perf_counter()
            cache.add_grids(p, [dq], [n_l])
            offline = base_s + time.perf_counter() - t0
            jobs = []
            for si, sc in enumerate(scenarios):
                sc = Scenario(sc.zones, sc.start, sc.goal, sc.q_init, sc.q_goal, sc.delta_l, dq, n_l, p)
                row = BenchRow(m.name, si, config.seed * 1000 + mi, k, n_l, offline_s=offline)
                jobs.append((sc, row))
            if config.n_jobs > 1:
                with ThreadPoolExecutor(config.n_jobs) as pool:
                    done = list(pool.map(lambda j: _solve_row(j[0], cache, j[1], k, n_l), jobs))
            else:
                done = [_solve_row(sc, cache, row, k, n_l) for sc, row in jobs]
            rows.extend(done)
            if progress is not None:
                progress(m.name, k, done)
            cache.drop_grids()
    report = BenchReport(rows)
    report.check_invariants()
    return report
