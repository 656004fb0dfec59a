"""End-to-end acceptance audit.

Each test prints one ``[PASS]`` or ``[FAIL]`` line naming its criterion; the
lines are repeated in the terminal summary. Tolerances and sizes are the
contractual ones, so nothing here should be tuned to make a run pass.

Run on its own with ``pytest -v -s tests/test_acceptance.py``. Expect about
fifteen minutes on one core; the discretization sweep dominates.
"""
import math
import time

import numpy as np
import pytest

from quietpath.energy import BatteryParams, Mode, ModeConstraint, brute_force_edge_check, evaluate_edge, simulate_schedule
from quietpath.exceptions import NoFeasiblePlanError
from quietpath.graph import build_charge_graph_exact, charge_levels
from quietpath.harness import BenchConfig, OfflineCache, generate_random_map, generate_scenarios, run_benchmark
from quietpath.planner import (
    Scenario,
    brute_force_optimum,
    compute_lower_bound,
    plan_feasible,
    plan_no_fly_baseline,
    shortest_path,
    validate_trajectory,
)

from oracles import small_instance

pytestmark = pytest.mark.slow

EPS = 1e-9
P = BatteryParams()

VERDICTS = []
# every trajectory produced below, re-audited by the last criterion
PLANS = []


def verdict(n, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    VERDICTS.append(line)
    print(line, flush=True)
    return ok


def keep(result, scenario):
    PLANS.append((result, scenario))
    return result


# ---------------------------------------------------------------- 1: UB >= LB


@pytest.fixture(scope="module")
def bound_audit():
    grids = [(10.0, 10), (5.0, 20), (4.0, 25), (2.5, 40)]
    rows, started = [], time.perf_counter()
    for zones, seed in [(5, 101), (10, 102), (15, 103), (20, 104), (25, 105)]:
        m = generate_random_map(zones, seed)
        cache = OfflineCache.build(m.zones, 100.0, P, [g[0] for g in grids], [g[1] for g in grids])
        rng = np.random.default_rng(seed)
        for sc in generate_scenarios(m, 40, seed, 1000.0):
            dq, n_l = grids[rng.integers(len(grids))]
            sc = Scenario(sc.zones, sc.start, sc.goal, sc.q_init, sc.q_goal, sc.delta_l, dq, n_l, P)
            try:
                ub = keep(plan_feasible(sc, base=cache.base, core=cache.exact[dq]), sc)
            except NoFeasiblePlanError:
                rows.append((zones, dq, n_l, math.nan, math.nan, math.nan))
                continue
            lb = compute_lower_bound(sc, base=cache.base, core=cache.interval[n_l])
            try:
                bl = keep(plan_no_fly_baseline(sc, base=cache.base, core=cache.baseline[dq]), sc).cost
            except NoFeasiblePlanError:
                bl = math.nan
            rows.append((zones, dq, n_l, ub.cost, lb.cost, bl))
    return np.array(rows), time.perf_counter() - started


def test_upper_bound_dominates_lower_bound(bound_audit):
    rows, seconds = bound_audit
    solved = rows[~np.isnan(rows[:, 3])]
    broken = solved[solved[:, 3] < solved[:, 4] - EPS]
    ok = len(solved) >= 200 and len(broken) == 0 and seconds <= 15 * 60
    verdict(1, ok, f"{len(solved)}/{len(rows)} scenarios solved over 5-25 zone maps, "
                   f"{len(broken)} with UB < LB, {seconds:.0f}s")
    assert ok


# ------------------------------------------------------ 2: oracle equivalence


def test_dijkstra_matches_exhaustive_search():
    rng = np.random.default_rng(2024)
    mismatches, solved, started = [], 0, time.perf_counter()
    for seed in range(500):
        params = BatteryParams(alpha=float(rng.uniform(0.1, 0.4)), beta=float(rng.uniform(0.05, 0.2)))
        dq = float(rng.choice([25.0, 100.0 / 3.0, 50.0]))
        gs, q_init, q_goal = small_instance(seed, params)
        g = build_charge_graph_exact(gs, dq, q_init, q_goal, params)
        found = shortest_path(g, g.start, g.sink)
        ref = brute_force_optimum(gs, charge_levels(params.q_min, params.q_max, dq), q_init, q_goal, params,
                                  goal_grid=charge_levels(q_goal, params.q_max, dq))
        if (found is None) != (ref is None) or (ref is not None and abs(found[0] - ref) > EPS):
            mismatches.append((seed, None if found is None else found[0], ref))
        solved += ref is not None
    seconds = time.perf_counter() - started
    ok = not mismatches and seconds <= 5 * 60
    verdict(2, ok, f"500 instances ({solved} feasible), {len(mismatches)} disagreements, {seconds:.0f}s")
    assert ok, mismatches[:5]


# ------------------------------------------------- 3: edge evaluator soundness


def edge_cases(n, seed):
    """Uniform cases, cases hugging the feasibility frontier, and very short edges."""
    rng = np.random.default_rng(seed)
    third = n // 3
    q_i = rng.uniform(P.q_min, P.q_max, n)
    d = np.r_[rng.uniform(1e-3, P.max_three_switch_length, n - third), rng.uniform(1e-3, 5.0, third)]
    electric_only = rng.random(n) < 0.3
    frontier = np.where(electric_only, q_i - P.alpha * d, np.minimum(P.q_max, q_i + P.beta * d))
    q_j = rng.uniform(P.q_min, P.q_max, n)
    near = slice(third, 2 * third)
    q_j[near] = frontier[near] + rng.uniform(-1e-6, 1e-6, third) * rng.choice([1, 1e3, 1e6], third)
    q_j = np.clip(q_j, P.q_min, P.q_max)
    return q_i, q_j, d, electric_only


def test_edge_evaluator_is_sound():
    q_i, q_j, d, electric_only = edge_cases(100_000, 7)
    unsound, refuted, excused, infeasible = [], [], 0, 0
    started = time.perf_counter()
    for a, b, length, eo in zip(q_i.tolist(), q_j.tolist(), d.tolist(), electric_only.tolist()):
        c = ModeConstraint.ELECTRIC_ONLY if eo else ModeConstraint.ANY
        tr = evaluate_edge(a, b, length, c, P)
        if tr.feasible:
            end, lo, hi = simulate_schedule(a, tr.schedule, P)
            gas = sum(s for s, mode in tr.schedule if mode is Mode.GAS)
            if (end < b - EPS or lo < P.q_min - EPS or hi > P.q_max + EPS
                    or abs(sum(s for s, _ in tr.schedule) - length) > EPS * max(1.0, length)
                    or abs(P.c_f * gas - tr.cost) > EPS * max(1.0, length) or (eo and gas > 0)):
                unsound.append((a, b, length, eo))
            continue
        infeasible += 1
        grid = length / 1000
        if brute_force_edge_check(a, b, length, c, P, grid):
            relaxed = max(P.q_min, b - 2 * (P.alpha + P.beta) * grid)
            if evaluate_edge(a, relaxed, length, c, P).feasible:
                excused += 1
            else:
                refuted.append((a, b, length, eo))
    seconds = time.perf_counter() - started
    ok = not unsound and not refuted and seconds <= 5 * 60
    verdict(3, ok, f"100000 cases, {infeasible} infeasible verdicts, {len(unsound)} unsound schedules, "
                   f"{len(refuted)} refuted infeasibilities ({excused} excused at grid resolution), {seconds:.0f}s")
    assert ok, (unsound[:3], refuted[:3])


# ------------------------------------------------------ 4: discretization sweep


@pytest.fixture(scope="module")
def sweep():
    maps = [generate_random_map(n, 400 + n) for n in (10, 15, 20, 25)]
    config = BenchConfig(maps=maps, scenarios_per_map=50, seed=4, discretizations=[20, 30, 40])
    started = time.perf_counter()
    report = run_benchmark(config, progress=lambda name, k, rows: print(f"  {name} k={k} done", flush=True))
    return report, time.perf_counter() - started


def test_gap_shrinks_with_discretization(sweep):
    report, seconds = sweep
    agg = report.aggregate()
    means = [agg[k]["gap"]["mean"] for k in (20, 30, 40)]
    unbounded = sum(1 for r in report.ok_rows() if math.isnan(r.gap))
    monotone = all(b <= a + EPS for a, b in zip(means, means[1:]))
    ok = monotone and means[-1] <= 15.0 and seconds <= 60 * 60
    per_k = ", ".join(f"k={k}: {m:.2f}% (n={agg[k]['gap']['n']})" for k, m in zip((20, 30, 40), means))
    verdict(4, ok, f"mean gap {per_k}; {unbounded} rows with zero LB and positive UB excluded, {seconds:.0f}s")
    assert ok


# ------------------------------------------------------ 5: nested refinement


def test_refinement_is_monotone():
    m = generate_random_map(10, 55)
    cache = OfflineCache.build(m.zones, 100.0, P, [10.0, 5.0], [10, 20])
    worse_ub, worse_lb, n = [], [], 0
    for sc in generate_scenarios(m, 50, 55, 1000.0):
        costs = {}
        for dq, n_l in ((10.0, 10), (5.0, 20)):
            s = Scenario(sc.zones, sc.start, sc.goal, sc.q_init, sc.q_goal, sc.delta_l, dq, n_l, P)
            try:
                ub = keep(plan_feasible(s, base=cache.base, core=cache.exact[dq]), s).cost
            except NoFeasiblePlanError:
                ub = math.inf
            costs[dq] = (ub, compute_lower_bound(s, base=cache.base, core=cache.interval[n_l]).cost)
        n += 1
        (ub_coarse, lb_coarse), (ub_fine, lb_fine) = costs[10.0], costs[5.0]
        if ub_fine > ub_coarse + EPS:
            worse_ub.append((n, ub_coarse, ub_fine))
        if lb_fine < lb_coarse - EPS:
            worse_lb.append((n, lb_coarse, lb_fine))
    ok = n == 50 and not worse_ub and not worse_lb
    verdict(5, ok, f"{n} scenarios, {len(worse_ub)} UB increases under halved step, "
                   f"{len(worse_lb)} LB decreases under split intervals")
    assert ok, (worse_ub, worse_lb)


# ------------------------------------------------------- 6: baseline dominance


def test_baseline_never_beats_hybrid(sweep, bound_audit):
    report, _ = sweep
    rows, _ = bound_audit
    pairs = [(r.ub, r.baseline) for r in report.ok_rows() if not math.isnan(r.baseline)]
    pairs += [(ub, bl) for ub, bl in rows[:, [3, 5]] if not (math.isnan(ub) or math.isnan(bl))]
    beaten = [(ub, bl) for ub, bl in pairs if bl < ub - EPS]
    no_baseline = sum(1 for r in report.ok_rows() if math.isnan(r.baseline))
    agg = report.aggregate()
    savings = ", ".join(f"k={k}: mean {agg[k]['savings']['mean']:.2f}% median {agg[k]['savings']['median']:.2f}%"
                        for k in sorted(agg))
    ok = bool(pairs) and not beaten
    verdict(6, ok, f"{len(pairs)} comparisons, {len(beaten)} with baseline cheaper; "
                   f"{no_baseline} sweep rows where avoiding the zones is impossible; savings {savings}")
    assert ok


# ------------------------------------------------------------ 7: online latency


def test_online_query_latency():
    m = generate_random_map(25, 77)
    t0 = time.perf_counter()
    cache = OfflineCache.build(m.zones, 100.0, P, [2.5])
    offline = time.perf_counter() - t0
    times = []
    for sc in generate_scenarios(m, 10, 77, 1000.0, delta_q=2.5):
        t0 = time.perf_counter()
        try:
            keep(plan_feasible(sc, base=cache.base, core=cache.exact[2.5]), sc)
        except NoFeasiblePlanError:
            pass
        times.append(time.perf_counter() - t0)
    ok = max(times) <= 10.0
    verdict(7, ok, f"25 zones, {cache.base.n_vertices} base vertices, 40 charge steps: offline {offline:.1f}s, "
                   f"online max {max(times):.2f}s mean {np.mean(times):.2f}s over {len(times)} queries")
    assert ok


# ---------------------------------------------------------- 8: trajectory audit


def test_every_plan_validates(sweep, bound_audit):
    report, _ = sweep
    failures = []
    for result, sc in PLANS:
        rep = validate_trajectory(result.trajectory, sc.zones, sc.params, sc.q_init, sc.q_goal)
        if not rep:
            failures.append(rep.violations)
    errored = [r for r in report.rows if r.status == "error" or (r.status == "ok" and not r.valid)]
    ok = bool(PLANS) and not failures and not errored
    verdict(8, ok, f"{len(PLANS)} plans re-validated, {len(failures)} invalid; "
                   f"{len(report.ok_rows())} sweep rows validated in the planner, {len(errored)} errored")
    assert ok, (failures[:3], [r.message for r in errored[:3]])
