"""Command-line entry point: ``quietpath <subcommand> ...``.

Exit codes: 0 success, 1 internal invariant failure, 2 no feasible plan, 3 invalid input.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .energy import BatteryParams
from .exceptions import InvalidArgumentError, InvariantViolationError, NoFeasiblePlanError, QuietPathError
from .graph import SampledGraph, build_base_graph, load_graph, save_graph
from .harness import BenchConfig, generate_random_map, load_map, run_benchmark, save_map
from .planner import (
    Scenario,
    compute_lower_bound,
    plan_feasible,
    plan_no_fly_baseline,
    validate_trajectory,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INFEASIBLE = 2
EXIT_INVALID = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _point(text):
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y but got {text!r}")
    if not (math.isfinite(x) and math.isfinite(y)):
        raise argparse.ArgumentTypeError(f"non-finite point {text!r}")
    return (x, y)


def _battery_flags(p):
    d = BatteryParams()
    p.add_argument("--alpha", type=float, default=d.alpha, help="discharge per unit length (electric)")
    p.add_argument("--beta", type=float, default=d.beta, help="recharge per unit length (gas)")
    p.add_argument("--qmin", type=float, default=d.q_min)
    p.add_argument("--qmax", type=float, default=d.q_max)
    p.add_argument("--cf", type=float, default=d.c_f, help="fuel cost per unit length")


def _params(args):
    return BatteryParams(args.alpha, args.beta, args.qmin, args.qmax, args.cf)


def _query_flags(p, charge_flag):
    p.add_argument("--graph", required=True, help="base graph cache from build-graph")
    p.add_argument("--start", type=_point, required=True)
    p.add_argument("--goal", type=_point, required=True)
    p.add_argument("--qinit", type=float, default=80.0)
    p.add_argument("--qgoal", type=float, default=50.0)
    if charge_flag == "dq":
        p.add_argument("--dq", type=float, default=2.5, help="charge grid step")
    else:
        p.add_argument("--nl", type=int, default=40, help="charge intervals per vertex")
        p.add_argument("--ng", type=int, default=None, help="goal intervals (default: matching width)")
    p.add_argument("--out", required=True)
    _battery_flags(p)


def build_parser():
    parser = _Parser(prog="quietpath", description="Minimum-fuel hybrid path planning around quiet zones.",
                     epilog="exit codes: 0 ok, 1 internal invariant failure, 2 no feasible plan, 3 invalid input")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-map", help="random convex quiet-zone map")
    p.add_argument("--zones", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=float, default=2000.0)
    p.add_argument("--height", type=float, default=2000.0)
    p.add_argument("--name", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("build-graph", help="sample a map into a cached base graph")
    p.add_argument("--map", required=True)
    p.add_argument("--dl", type=float, required=True, help="boundary sampling step")
    p.add_argument("--out", required=True)
    _battery_flags(p)

    p = sub.add_parser("plan", help="minimum-fuel feasible plan (upper bound)")
    _query_flags(p, "dq")
    p.add_argument("--svg", default=None, help="also draw the plan")

    p = sub.add_parser("baseline", help="plan that treats quiet zones as obstacles")
    _query_flags(p, "dq")
    p.add_argument("--svg", default=None)

    p = sub.add_parser("lower-bound", help="interval-relaxation lower bound")
    _query_flags(p, "nl")

    p = sub.add_parser("bench", help="run a benchmark sweep from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="CSV report")
    p.add_argument("--svg", default=None, help="gap box plot")
    p.add_argument("--summary", default=None, help="aggregate statistics as JSON")
    return parser


def _load_base(args, params) -> SampledGraph:
    base = load_graph(args.graph)
    if not isinstance(base, SampledGraph):
        raise InvalidArgumentError(f"{args.graph} does not hold a base graph")
    if base.start is not None:
        raise InvalidArgumentError(f"{args.graph} already has endpoints attached")
    if not math.isclose(base.split_length, params.split_length):
        raise InvalidArgumentError("battery parameters differ from the ones the graph was built with")
    return base


def _scenario(args, base, params, **kw):
    return Scenario(base.zones, args.start, args.goal, args.qinit, args.qgoal, base.delta_l,
                    params=params, **kw)


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2))


def _plan_json(result, scenario):
    report = validate_trajectory(result.trajectory, scenario.zones, scenario.params,
                                 scenario.q_init, scenario.q_goal)
    return {
        "kind": result.kind.value,
        "cost": result.cost,
        "segments": [
            {"x0": s.start.x, "y0": s.start.y, "x1": s.end.x, "y1": s.end.y, "mode": s.mode.value,
             "q_start": s.q_start, "q_end": s.q_end}
            for s in result.trajectory.segments
        ],
        "valid": report.ok,
        "violations": list(report.violations),
    }


def _cmd_gen_map(args):
    m = generate_random_map(args.zones, args.seed, (args.width, args.height), name=args.name)
    save_map(m, args.out)
    print(f"wrote {args.out}: {len(m.zones)} zones")


def _cmd_build_graph(args):
    m = load_map(args.map)
    base = build_base_graph(m.zones, args.dl, _params(args))
    save_graph(base, args.out)
    print(f"wrote {args.out}: {base.n_vertices} vertices, {base.n_edges} edges")


def _cmd_plan(args, solver):
    params = _params(args)
    base = _load_base(args, params)
    sc = _scenario(args, base, params, delta_q=args.dq)
    result = solver(sc, base=base)
    _write_json(args.out, _plan_json(result, sc))
    if args.svg:
        from .plots import emit_plot

        emit_plot(result, args.svg, "svg", zones=sc.zones)
    print(f"{result.kind.value} cost {result.cost:.6g}, {len(result.trajectory)} segments")


def _cmd_lower_bound(args):
    params = _params(args)
    base = _load_base(args, params)
    sc = _scenario(args, base, params, n_l=args.nl)
    result = compute_lower_bound(sc, base=base, n_g=args.ng)
    g = result.graph
    nodes = [
        {"node": int(u), "vertex": int(g.node_spatial[u]), "lo": float(g.node_lo[u]), "hi": float(g.node_hi[u])}
        for u in result.node_sequence[:-1]
    ]
    _write_json(args.out, {"kind": result.kind.value, "cost": result.cost, "nodes": nodes})
    print(f"lower bound {result.cost:.6g}")


def _cmd_bench(args):
    path = Path(args.config)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path}: not valid JSON ({exc})") from exc
    try:
        config = BenchConfig.from_dict(data, base_dir=path.parent)
    except TypeError as exc:
        raise InvalidArgumentError(f"bad bench config: {exc}") from exc

    def progress(name, k, rows):
        solved = sum(r.status == "ok" for r in rows)
        print(f"{name} k={k}: {solved}/{len(rows)} solved", file=sys.stderr)

    report = run_benchmark(config, progress=progress)
    report.to_csv(args.out)
    agg = report.aggregate()
    for k, stats in agg.items():
        print(f"k={k}: solved {stats['solved']}/{stats['rows']}, mean gap {stats['gap']['mean']:.3f}%, "
              f"mean savings {stats['savings']['mean']:.3f}%, mean online {stats['online_s']['mean']:.3f}s")
    if args.summary:
        _write_json(args.summary, {str(k): v for k, v in agg.items()})
    if args.svg:
        from .plots import emit_plot

        emit_plot(report, args.svg, "svg")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "gen-map": _cmd_gen_map,
        "build-graph": _cmd_build_graph,
        "plan": lambda a: _cmd_plan(a, plan_feasible),
        "baseline": lambda a: _cmd_plan(a, plan_no_fly_baseline),
        "lower-bound": _cmd_lower_bound,
        "bench": _cmd_bench,
    }
    try:
        handlers[args.command](args)
    except NoFeasiblePlanError as exc:
        print(f"no feasible plan: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except InvariantViolationError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (QuietPathError, ValueError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
