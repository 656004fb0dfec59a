"""Static SVG and CSV output for plans and benchmark reports."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .energy import Mode
from .exceptions import InvalidArgumentError
from .geometry import Zone, ZoneKind
from .harness import BenchReport
from .planner import PlanResult, Trajectory

GAS_COLOUR = "#d400d4"
ELECTRIC_COLOUR = "#1a9c1a"
QUIET_FILL = "#bdbdbd"
NO_FLY_FILL = "#e04040"

_MODE_COLOUR = {Mode.GAS: GAS_COLOUR, Mode.ELECTRIC: ELECTRIC_COLOUR}


class _Frame:
    """Affine map from world coordinates into a pixel box (y axis up)."""

    def __init__(self, x0, y0, x1, y1, left, top, width, height):
        span = max(x1 - x0, y1 - y0, 1e-12)
        self.scale = min(width, height) / span
        self.x0, self.y0 = x0, y0
        self.left, self.bottom = left, top + height

    def __call__(self, x, y):
        return self.left + (x - self.x0) * self.scale, self.bottom - (y - self.y0) * self.scale


def _svg(width, height, body):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n<rect width="100%" height="100%" fill="white"/>\n'
            + "\n".join(body) + "\n</svg>\n")


def _fmt(v):
    return f"{v:.2f}"


def plan_svg(traj: Trajectory, zones: Sequence[Zone], bounds=None, title: str = "") -> str:
    segs = traj.segments
    pts = [(p.x, p.y) for z in zones for p in z.polygon.vertices]
    pts += [(s.start.x, s.start.y) for s in segs] + [(s.end.x, s.end.y) for s in segs]
    if bounds is not None:
        pts += [(0.0, 0.0), tuple(bounds)]
    if not pts:
        pts = [(0.0, 0.0), (1.0, 1.0)]
    xs, ys = zip(*pts)
    pad = 0.03 * max(max(xs) - min(xs), max(ys) - min(ys), 1.0)
    frame = _Frame(min(xs) - pad, min(ys) - pad, max(xs) + pad, max(ys) + pad, 20, 30, 520, 520)

    body = [f'<text x="20" y="20" font-size="14">{escape(title)}</text>', '<g class="zones">']
    for z in zones:
        fill = QUIET_FILL if z.kind is ZoneKind.QUIET else NO_FLY_FILL
        coords = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in (frame(*p) for p in z.polygon.vertices))
        body.append(f'<polygon class="zone {z.kind.value}" data-zone="{z.id}" points="{coords}" '
                    f'fill="{fill}" stroke="#555" stroke-width="1"/>')
    body.append('</g>\n<g class="path">')
    for i, s in enumerate(segs):
        (ax, ay), (bx, by) = frame(s.start.x, s.start.y), frame(s.end.x, s.end.y)
        body.append(f'<line class="segment {s.mode.value}" data-index="{i}" x1="{_fmt(ax)}" y1="{_fmt(ay)}" '
                    f'x2="{_fmt(bx)}" y2="{_fmt(by)}" stroke="{_MODE_COLOUR[s.mode]}" stroke-width="3"/>')
    if segs:
        for cls, p in (("start", segs[0].start), ("goal", segs[-1].end)):
            cx, cy = frame(p.x, p.y)
            body.append(f'<circle class="{cls}" cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="5" fill="black"/>')
    body.append("</g>")
    body.extend(_profile_panel(traj, 560, 30, 400, 240))
    return _svg(980, 570, body)


def _profile_panel(traj: Trajectory, left, top, width, height):
    s, q = traj.charge_profile()
    out = ['<g class="charge-profile">',
           f'<rect x="{left}" y="{top}" width="{width}" height="{height}" fill="none" stroke="#999"/>',
           f'<text x="{left}" y="{top + height + 18}" font-size="12">distance</text>',
           f'<text x="{left}" y="{top - 6}" font-size="12">state of charge</text>']
    if len(s) >= 2:
        s_max = max(s[-1], 1e-12)
        q_lo, q_hi = min(q.min(), 0.0), max(q.max(), 100.0)

        def xy(si, qi):
            return left + width * si / s_max, top + height - height * (qi - q_lo) / max(q_hi - q_lo, 1e-12)

        for i, seg in enumerate(traj.segments):
            (ax, ay), (bx, by) = xy(s[i], q[i]), xy(s[i + 1], q[i + 1])
            out.append(f'<line class="profile {seg.mode.value}" x1="{_fmt(ax)}" y1="{_fmt(ay)}" '
                       f'x2="{_fmt(bx)}" y2="{_fmt(by)}" stroke="{_MODE_COLOUR[seg.mode]}" stroke-width="2"/>')
    out.append("</g>")
    return out


def boxplot_svg(report: BenchReport, metric: str = "gap") -> str:
    """One box (quartiles, median, whiskers at min/max) per discretization."""
    groups = [(k, np.array([getattr(r, metric) for r in report.ok_rows(k)], float))
              for k in report.discretizations()]
    groups = [(k, v[~np.isnan(v)]) for k, v in groups]
    values = np.concatenate([v for _, v in groups]) if groups else np.zeros(0)
    lo = float(min(values.min(), 0.0)) if len(values) else 0.0
    hi = float(values.max()) if len(values) else 1.0
    hi = hi if hi > lo else lo + 1.0
    left, top, width, height = 60, 30, 120 * max(len(groups), 1), 300

    def y(v):
        return top + height - height * (v - lo) / (hi - lo)

    body = [f'<text x="{left}" y="20" font-size="14">{escape(metric)} by discretization</text>',
            f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + height}" stroke="black"/>']
    for tick in np.linspace(lo, hi, 5):
        body.append(f'<text x="5" y="{_fmt(y(tick) + 4)}" font-size="10">{tick:.3g}</text>')
    for i, (k, v) in enumerate(groups):
        cx = left + 60 + 120 * i
        body.append(f'<g class="box-group" data-discretization="{k}">')
        if len(v):
            q1, med, q3 = np.percentile(v, [25, 50, 75])
            body += [
                f'<line x1="{cx}" y1="{_fmt(y(v.min()))}" x2="{cx}" y2="{_fmt(y(v.max()))}" stroke="black"/>',
                f'<rect x="{cx - 25}" y="{_fmt(y(q3))}" width="50" height="{_fmt(max(y(q1) - y(q3), 0.5))}" '
                f'fill="#9ecae1" stroke="black"/>',
                f'<line x1="{cx - 25}" y1="{_fmt(y(med))}" x2="{cx + 25}" y2="{_fmt(y(med))}" '
                f'stroke="black" stroke-width="2"/>',
            ]
        body.append(f'<text x="{cx - 10}" y="{top + height + 18}" font-size="12">{k}</text></g>')
    return _svg(left + width + 40, top + height + 40, body)


def _plan_csv(traj: Trajectory, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x0", "y0", "x1", "y1", "mode", "length", "q_start", "q_end"])
        for s in traj.segments:
            w.writerow([repr(s.start.x), repr(s.start.y), repr(s.end.x), repr(s.end.y), s.mode.value,
                        repr(s.length), repr(s.q_start), repr(s.q_end)])


def emit_plot(obj, path, fmt: Optional[str] = None, *, zones: Sequence[Zone] = (), bounds=None,
              metric: str = "gap") -> Path:
    """Write ``obj`` (a plan, trajectory or benchmark report) as SVG or CSV.

    The format defaults to the file suffix. Plans need ``zones`` to draw the
    map underneath the path.
    """
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in ("svg", "csv"):
        raise InvalidArgumentError(f"unsupported plot format {fmt!r}")
    if isinstance(obj, PlanResult):
        if obj.trajectory is None:
            raise InvalidArgumentError("lower-bound results have no trajectory to draw")
        title = f"{obj.kind.value}: cost {obj.cost:.2f}"
        obj = obj.trajectory
    else:
        title = ""
    if isinstance(obj, Trajectory):
        if fmt == "svg":
            path.write_text(plan_svg(obj, zones, bounds, title))
        else:
            _plan_csv(obj, path)
    elif isinstance(obj, BenchReport):
        if fmt == "svg":
            path.write_text(boxplot_svg(obj, metric))
        else:
            obj.to_csv(path)
    else:
        raise InvalidArgumentError(f"cannot plot {type(obj).__name__}")
    return path
