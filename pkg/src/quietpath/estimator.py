"""Scikit-learn style front end: fit on a map, then query start/goal pairs.

``fit`` does the offline work (base graph and charge cores); every query
afterwards only attaches endpoints and searches.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .energy import BatteryParams
from .exceptions import InvalidArgumentError, NoFeasiblePlanError
from .geometry import Zone
from .harness import MapFile, OfflineCache
from .planner import (
    Scenario,
    compute_lower_bound,
    gap_percent,
    plan_feasible,
    plan_no_fly_baseline,
)


def _zones_of(X):
    if isinstance(X, MapFile):
        return X.zones
    zones = tuple(X)
    if not all(isinstance(z, Zone) for z in zones):
        raise InvalidArgumentError("fit expects a MapFile or a sequence of Zone")
    return zones


def check_queries(X) -> np.ndarray:
    """Validate an ``(n, 4)`` array of ``x_start, y_start, x_goal, y_goal`` rows."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True)
    if X.shape[1] != 4:
        raise InvalidArgumentError(f"queries need 4 columns, got {X.shape[1]}")
    return X


class HybridPathPlanner(BaseEstimator):
    """Minimum-fuel planner for one map.

    Parameters:
        delta_l: boundary sampling step.
        delta_q: charge grid step of the feasible (upper-bound) planner.
        n_l: charge intervals per vertex for the lower bound.
        q_init, q_goal: initial charge and required terminal charge.
        alpha, beta, q_min, q_max, c_f: battery model.
        lower_bound: also precompute the interval core so ``transform`` is fast.
    """

    def __init__(self, delta_l=100.0, delta_q=2.5, n_l=40, q_init=80.0, q_goal=50.0,
                 alpha=0.2, beta=0.1, q_min=0.0, q_max=100.0, c_f=1.0, lower_bound=True):
        self.delta_l = delta_l
        self.delta_q = delta_q
        self.n_l = n_l
        self.q_init = q_init
        self.q_goal = q_goal
        self.alpha = alpha
        self.beta = beta
        self.q_min = q_min
        self.q_max = q_max
        self.c_f = c_f
        self.lower_bound = lower_bound

    def _battery(self):
        return BatteryParams(self.alpha, self.beta, self.q_min, self.q_max, self.c_f)

    def fit(self, X, y=None):
        """Build the base graph and charge cores for the zones in ``X``."""
        params = self._battery()
        if not (self.delta_l > 0 and self.delta_q > 0 and int(self.n_l) >= 1):
            raise InvalidArgumentError("delta_l, delta_q and n_l must be positive")
        self.zones_ = _zones_of(X)
        self.params_ = params
        self.cache_ = OfflineCache.build(self.zones_, self.delta_l, params, [self.delta_q],
                                         [int(self.n_l)] if self.lower_bound else [])
        self.offline_seconds_ = self.cache_.seconds
        self.n_vertices_ = self.cache_.base.n_vertices
        return self

    def _scenario(self, row):
        return Scenario(self.zones_, row[:2], row[2:], self.q_init, self.q_goal, self.delta_l,
                        self.delta_q, int(self.n_l), self.params_)

    def plan(self, start, goal):
        """Feasible plan for a single query; raises ``NoFeasiblePlanError``."""
        check_is_fitted(self, "cache_")
        sc = self._scenario(np.r_[np.asarray(start, float), np.asarray(goal, float)])
        return plan_feasible(sc, base=self.cache_.base, core=self.cache_.exact[self.delta_q])

    def bound(self, start, goal):
        check_is_fitted(self, "cache_")
        sc = self._scenario(np.r_[np.asarray(start, float), np.asarray(goal, float)])
        return compute_lower_bound(sc, base=self.cache_.base, core=self.cache_.interval.get(int(self.n_l)))

    def baseline(self, start, goal):
        check_is_fitted(self, "cache_")
        sc = self._scenario(np.r_[np.asarray(start, float), np.asarray(goal, float)])
        return plan_no_fly_baseline(sc, base=self.cache_.base, core=self.cache_.baseline[self.delta_q])

    def predict(self, X):
        """Upper-bound fuel cost per query row, ``inf`` where no plan exists."""
        check_is_fitted(self, "cache_")
        X = check_queries(X)
        out = np.empty(len(X))
        for i, row in enumerate(X):
            try:
                out[i] = self.plan(row[:2], row[2:]).cost
            except NoFeasiblePlanError:
                out[i] = math.inf
        return out

    def transform(self, X):
        """Columns ``[upper bound, lower bound, gap percent]`` per query row."""
        check_is_fitted(self, "cache_")
        X = check_queries(X)
        out = np.full((len(X), 3), np.nan)
        for i, row in enumerate(X):
            try:
                ub = self.plan(row[:2], row[2:]).cost
                lb = self.bound(row[:2], row[2:]).cost
            except NoFeasiblePlanError:
                out[i] = (math.inf, math.nan, math.nan)
                continue
            out[i] = (ub, lb, gap_percent(ub, lb))
        return out

    def fit_transform(self, X, queries):
        return self.fit(X).transform(queries)
