"""Linear battery model and closed-form edge evaluation.

Charge evolves with distance ``s`` travelled: ``dq/ds = -alpha`` in electric
mode and ``+beta`` in gasoline mode, and must stay in ``[q_min, q_max]``.
Fuel is only burnt in gasoline mode, so the cost of an edge of length ``d``
is ``c_f * lam * d`` where ``lam`` is the fraction flown on gas.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import InvalidArgumentError

EPS_Q = 1e-9


class Mode(enum.Enum):
    GAS = "gas"
    ELECTRIC = "electric"


class ModeConstraint(enum.Enum):
    ANY = "any"
    ELECTRIC_ONLY = "electric_only"


@dataclass(frozen=True)
class BatteryParams:
    """Discharge/recharge rates per unit length, charge limits and fuel price."""

    alpha: float = 0.2
    beta: float = 0.1
    q_min: float = 0.0
    q_max: float = 100.0
    c_f: float = 1.0

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.q_min, self.q_max, self.c_f)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidArgumentError(f"non-finite battery parameter in {self}")
        if self.alpha <= 0 or self.beta <= 0:
            raise InvalidArgumentError("alpha and beta must be positive")
        if not self.q_min < self.q_max:
            raise InvalidArgumentError("q_min must be below q_max")
        if self.c_f < 0:
            raise InvalidArgumentError("c_f must be non-negative")

    @property
    def charge_range(self) -> float:
        return self.q_max - self.q_min

    @property
    def max_three_switch_length(self) -> float:
        """Longest edge on which the canonical <=3-switch schedule is always in bounds."""
        return self.charge_range * (1.0 / self.alpha + 1.0 / self.beta)

    @property
    def split_length(self) -> float:
        return 0.9 * self.max_three_switch_length


@dataclass(frozen=True)
class EdgeTraversal:
    feasible: bool
    lam: float = math.nan
    cost: float = math.nan
    schedule: tuple = ()

    @property
    def switches(self) -> int:
        return max(0, len(self.schedule) - 1)


INFEASIBLE = EdgeTraversal(False)


def _check_charge(name, q, params):
    if not math.isfinite(q) or q < params.q_min - EPS_Q or q > params.q_max + EPS_Q:
        raise InvalidArgumentError(f"{name}={q} outside [{params.q_min}, {params.q_max}]")


def simulate_schedule(q_start: float, schedule: Sequence, params: BatteryParams):
    """Integrate the battery model over ``(length, mode)`` pieces.

    Returns ``(q_end, q_lo, q_hi)``; the extremes of a piecewise-linear
    profile sit at piece endpoints so no interior sampling is needed.
    """
    q = lo = hi = float(q_start)
    for length, mode in schedule:
        if length < 0:
            raise InvalidArgumentError(f"negative segment length {length}")
        q += (params.beta if Mode(mode) is Mode.GAS else -params.alpha) * length
        lo = min(lo, q)
        hi = max(hi, q)
    return q, lo, hi


def _schedule_ok(q_i, q_j, schedule, params):
    q_end, lo, hi = simulate_schedule(q_i, schedule, params)
    return q_end >= q_j - EPS_Q and lo >= params.q_min - EPS_Q and hi <= params.q_max + EPS_Q


def _clean(pieces, d):
    """Drop empty pieces, merge equal neighbours and pin the total to ``d``."""
    out = []
    for length, mode in pieces:
        if length <= 1e-12 * max(1.0, d):
            continue
        if out and out[-1][1] is mode:
            out[-1] = (out[-1][0] + length, mode)
        else:
            out.append((length, mode))
    if out:
        out[-1] = (d - sum(p[0] for p in out[:-1]), out[-1][1])
    return tuple(out)


def _gas_lambda(q_i, q_j, d, params):
    # Both mixed-mode expressions of the reference algorithm reduce to this
    # one: lam1 + a/(a+b)(1-lam1-lam2) == (q_j-q_i+a d)/((a+b) d).
    return (q_j - q_i + params.alpha * d) / ((params.alpha + params.beta) * d)


def evaluate_edge(q_i: float, q_j: float, d: float, constraint: ModeConstraint, params: BatteryParams) -> EdgeTraversal:
    """Feasibility, gas fraction, fuel cost and switch schedule for one edge.

    Args:
        q_i: charge when leaving the edge's first vertex.
        q_j: charge that must be available at the second vertex.
        d: edge length.
        constraint: ``ELECTRIC_ONLY`` for chords inside a quiet zone.
        params: battery model.

    Returns:
        EdgeTraversal; ``feasible=False`` when no schedule exists.
    """
    if not (math.isfinite(d) and d > 0):
        raise InvalidArgumentError(f"edge length must be positive, got {d}")
    _check_charge("q_i", q_i, params)
    _check_charge("q_j", q_j, params)
    constraint = ModeConstraint(constraint)
    a, b = params.alpha, params.beta

    if q_j > min(params.q_max, q_i + b * d) + EPS_Q:
        return INFEASIBLE
    electric_end = q_i - a * d
    if electric_end >= params.q_min - EPS_Q and q_j <= electric_end + EPS_Q:
        return EdgeTraversal(True, 0.0, 0.0, ((d, Mode.ELECTRIC),))
    if constraint is ModeConstraint.ELECTRIC_ONLY:
        return INFEASIBLE

    lam = _gas_lambda(q_i, q_j, d, params)
    if not (-EPS_Q <= lam <= 1 + EPS_Q):
        return INFEASIBLE
    lam = min(1.0, max(0.0, lam))
    gas = lam * d
    elec = d - gas

    # gas first, then electric
    schedule = _clean([(gas, Mode.GAS), (elec, Mode.ELECTRIC)], d)
    if not _schedule_ok(q_i, q_j, schedule, params):
        lam1 = (params.q_max - q_i) / (b * d)
        lam2 = (params.q_max - q_j) / (a * d)
        candidates = []
        # electric first just long enough that the gas run tops out at q_max
        pre = (q_i + b * gas - params.q_max) / a
        if 0 <= pre <= elec:
            candidates.append([(pre, Mode.ELECTRIC), (gas, Mode.GAS), (elec - pre, Mode.ELECTRIC)])
        if lam1 >= 0 and lam2 >= 0 and lam1 + lam2 <= 1:
            g_mid = max(0.0, gas - lam1 * d)
            e_mid = max(0.0, elec - lam2 * d)
            candidates.append([
                (lam1 * d, Mode.GAS), (e_mid, Mode.ELECTRIC),
                (g_mid, Mode.GAS), (lam2 * d, Mode.ELECTRIC),
            ])
        for cand in candidates:
            schedule = _clean(cand, d)
            if _schedule_ok(q_i, q_j, schedule, params):
                break
        else:
            return _long_edge(q_i, q_j, d, params)
    return EdgeTraversal(True, lam, params.c_f * lam * d, schedule)


def _long_edge(q_i, q_j, d, params):
    """Exact minimum-gas 4-piece schedule via a tiny LP.

    Only reached when the closed-form schedules leave the charge window, which
    cannot happen below ``params.max_three_switch_length``.
    """
    from scipy.optimize import linprog

    a, b = params.alpha, params.beta
    margin = 1e-7 * max(1.0, params.charge_range)
    best = None
    for first in (Mode.GAS, Mode.ELECTRIC):
        modes = [first, Mode.ELECTRIC if first is Mode.GAS else Mode.GAS] * 2
        rates = np.array([b if m is Mode.GAS else -a for m in modes])
        gas_mask = np.array([m is Mode.GAS for m in modes], dtype=float)
        prefix = np.tril(np.ones((4, 4))) * rates[None, :]
        a_ub = np.vstack([prefix, -prefix, -prefix[-1:]])
        b_ub = np.concatenate([
            np.full(4, params.q_max - q_i - margin),
            np.full(4, q_i - params.q_min - margin),
            [q_i - q_j - margin],
        ])
        res = linprog(gas_mask, A_ub=a_ub, b_ub=b_ub, A_eq=np.ones((1, 4)), b_eq=[d],
                      bounds=[(0, None)] * 4, method="highs")
        if res.status != 0:
            continue
        schedule = _clean(list(zip(np.maximum(res.x, 0.0), modes)), d)
        if not _schedule_ok(q_i, q_j, schedule, params):
            continue
        gas = sum(length for length, m in schedule if m is Mode.GAS)
        if best is None or gas < best[0]:
            best = (gas, schedule)
    if best is None:
        return INFEASIBLE
    lam = best[0] / d
    return EdgeTraversal(True, lam, params.c_f * best[0], best[1])


def evaluate_edges(q_i, q_j, d, electric_only, params: BatteryParams):
    """Broadcasting version of :func:`evaluate_edge` returning ``(feasible, cost)``.

    Uses the same floating-point expressions as the scalar path so both agree
    bit for bit. Lengths above ``params.max_three_switch_length`` are handed
    to the scalar evaluator.
    """
    q_i, q_j, d, electric_only = np.broadcast_arrays(
        np.asarray(q_i, float), np.asarray(q_j, float), np.asarray(d, float), np.asarray(electric_only, bool)
    )
    a, b = params.alpha, params.beta
    electric_end = q_i - a * d
    blocked = q_j > np.minimum(params.q_max, q_i + b * d) + EPS_Q
    all_electric = ~blocked & (electric_end >= params.q_min - EPS_Q) & (q_j <= electric_end + EPS_Q)
    lam = (q_j - q_i + a * d) / ((a + b) * d)
    mixed = ~blocked & ~all_electric & ~electric_only & (lam >= -EPS_Q) & (lam <= 1 + EPS_Q)
    feasible = all_electric | mixed
    cost = np.where(mixed, params.c_f * np.clip(lam, 0.0, 1.0) * d, 0.0)

    long_idx = np.flatnonzero(mixed & (d > params.max_three_switch_length))
    if len(long_idx):
        feasible = feasible.copy()
        cost = cost.copy()
        flat_f, flat_c = feasible.reshape(-1), cost.reshape(-1)
        for k in long_idx:
            tr = evaluate_edge(q_i.flat[k], q_j.flat[k], d.flat[k], ModeConstraint.ANY, params)
            flat_f[k] = tr.feasible
            flat_c[k] = tr.cost if tr.feasible else 0.0
    return feasible, cost


def brute_force_edge_check(q_i, q_j, d, constraint, params: BatteryParams, grid: float) -> bool:
    """Exhaustive grid search over schedules with at most three switches.

    Switch points are restricted to ``0, grid, 2*grid, ..., d``. Both starting
    modes are tried; empty pieces make fewer switches a special case. The last
    free switch point is resolved exactly per grid cell since every constraint
    on it is linear.
    """
    if not grid > 0:
        raise InvalidArgumentError("grid must be positive")
    a, b = params.alpha, params.beta
    lo_b, hi_b = params.q_min - EPS_Q, params.q_max + EPS_Q
    target = q_j - EPS_Q

    if ModeConstraint(constraint) is ModeConstraint.ELECTRIC_ONLY:
        q_end = q_i - a * d
        return bool(q_end >= lo_b and q_end >= target)
    if q_i + b * d < target:
        return False

    n = max(1, math.ceil(d / grid - 1e-9))
    pos = np.minimum(np.arange(n + 1) * grid, d)

    for first in (Mode.GAS, Mode.ELECTRIC):
        r = [b, -a, b, -a] if first is Mode.GAS else [-a, b, -a, b]
        for i1 in range(n + 1):
            p1 = pos[i1]
            c1 = q_i + r[0] * p1
            if c1 < lo_b or c1 > hi_b:
                break
            if c1 + b * (d - p1) < target:
                continue
            p2 = pos[i1:]
            c2 = c1 + r[1] * (p2 - p1)
            ok2 = (c2 >= lo_b) & (c2 <= hi_b)
            if not ok2.any():
                continue
            p2, c2 = p2[ok2], c2[ok2]
            # p3 in [p2, d]: c3 = c2 + r2 (p3 - p2), c4 = c3 + r3 (d - p3)
            lo = p2.copy()
            hi = np.full_like(p2, d)
            # c3 bounds
            s3 = r[2]
            lo, hi = _tighten(lo, hi, c2 - s3 * p2, s3, lo_b, hi_b)
            # c4 = c2 - r2 p2 + r3 d + (r2 - r3) p3
            s4 = r[2] - r[3]
            base4 = c2 - s3 * p2 + r[3] * d
            lo, hi = _tighten(lo, hi, base4, s4, max(lo_b, target), hi_b)
            k_lo = np.ceil(lo / grid - 1e-9)
            has_grid = (k_lo * grid <= hi + 1e-12) & (k_lo * grid <= d)
            has_end = (lo <= d + 1e-12) & (hi >= d - 1e-12)
            if np.any((lo <= hi + 1e-12) & (has_grid | has_end)):
                return True
    return False


def _tighten(lo, hi, intercept, slope, lower, upper):
    """Intersect ``[lo, hi]`` with ``{p : lower <= intercept + slope * p <= upper}``."""
    if slope > 0:
        lo = np.maximum(lo, (lower - intercept) / slope)
        hi = np.minimum(hi, (upper - intercept) / slope)
    elif slope < 0:
        lo = np.maximum(lo, (upper - intercept) / slope)
        hi = np.minimum(hi, (lower - intercept) / slope)
    else:
        bad = (intercept < lower) | (intercept > upper)
        hi = np.where(bad, -np.inf, hi)
    return lo, hi
