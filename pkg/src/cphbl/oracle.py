"""Optimal stationary randomized placement (the regret benchmark R*).

Per EFS, R*_n is the value of the one-budget LP
    max sum_S p_S R_S  s.t.  sum_S p_S C_S <= b_n,  sum_S p_S = 1,  p >= 0
over capacity-feasible sets S, computed from the true popularities. The
LP optimum lies on the upper concave envelope of the points (C_S, R_S).
Two routes are provided: exhaustive enumeration (small F) and a
Lagrangian route that only needs knapsack solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SystemConfig
from .control import solve_placements

MAX_ENUM_FILES = 22
AUTO_ENUM_FILES = 16


class EnumerationTooLarge(ValueError):
    pass


class LagrangianConvergenceError(RuntimeError):
    def __init__(self, message, bracket):
        super().__init__(message)
        self.bracket = bracket


@dataclass
class FeasibleSetCatalog:
    masks: np.ndarray  # bit f set <=> file f cached
    costs: np.ndarray
    rewards: np.ndarray
    num_files: int

    def row(self, j: int) -> np.ndarray:
        return ((int(self.masks[j]) >> np.arange(self.num_files)) & 1).astype(np.int8)


@dataclass
class MixtureResult:
    value: float
    support: list = field(default_factory=list)  # [(placement row, probability)]
    hull: np.ndarray | None = None  # envelope vertices (C, R), C strictly increasing


def enumerate_sets(sizes, capacity: int, d_row, alpha: float) -> FeasibleSetCatalog:
    """All subsets with total size <= capacity, with cost alpha*sum L and reward sum L*d."""
    sizes = np.asarray(sizes, dtype=np.int64)
    num_files = len(sizes)
    if num_files > MAX_ENUM_FILES:
        raise EnumerationTooLarge(
            f"{num_files} files exceed the enumeration limit of {MAX_ENUM_FILES}; use lagrangian_r_star"
        )
    masks = np.zeros(1, dtype=np.int64)
    used = np.zeros(1, dtype=np.int64)
    rewards = np.zeros(1)
    for f in range(num_files):
        keep = used + sizes[f] <= capacity
        masks = np.concatenate([masks, masks[keep] | (1 << f)])
        rewards = np.concatenate([rewards, rewards[keep] + sizes[f] * float(d_row[f])])
        used = np.concatenate([used, used[keep] + sizes[f]])
    return FeasibleSetCatalog(masks, alpha * used, rewards, num_files)


def enumerate_feasible(cfg: SystemConfig, n: int, d: np.ndarray | None = None) -> FeasibleSetCatalog:
    if d is None:
        d = _true_demand(cfg)
    return enumerate_sets(cfg.file_sizes, cfg.efs_capacity[n], d[n], cfg.alpha)


def upper_envelope(costs, rewards) -> np.ndarray:
    """Indices of the upper concave envelope's vertices, up to the highest reward.

    Vertices come out with strictly increasing cost and strictly decreasing
    slope.
    """
    costs = np.asarray(costs, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    order = np.lexsort((-rewards, costs))  # by cost, best reward first
    hull: list[int] = []
    last_cost = None
    for j in order:
        if costs[j] == last_cost:
            continue
        last_cost = costs[j]
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (costs[b] - costs[a]) * (rewards[j] - rewards[a]) - (rewards[b] - rewards[a]) * (costs[j] - costs[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(int(j))
    best = int(np.argmax(rewards[hull]))
    return np.array(hull[: best + 1], dtype=np.int64)


def optimal_mixture(catalog: FeasibleSetCatalog, budget: float) -> MixtureResult:
    """Best randomization over the catalog with expected cost <= budget."""
    hull = upper_envelope(catalog.costs, catalog.rewards)
    hc, hr = catalog.costs[hull], catalog.rewards[hull]
    points = np.column_stack([hc, hr])
    c = min(float(budget), float(hc[-1]))
    if c < hc[0]:
        # only possible if the empty set is missing; it never is
        raise ValueError("budget below the cheapest feasible set")
    i = int(np.searchsorted(hc, c, side="right")) - 1
    if i >= len(hull) - 1 or hc[i] == c:
        return MixtureResult(float(hr[i]), [(catalog.row(hull[i]), 1.0)], points)
    theta = (c - hc[i]) / (hc[i + 1] - hc[i])
    value = hr[i] + theta * (hr[i + 1] - hr[i])
    support = [(catalog.row(hull[i]), 1.0 - theta), (catalog.row(hull[i + 1]), theta)]
    return MixtureResult(float(value), support, points)


def lagrangian_mixture(sizes, capacity: int, d_row, alpha: float, budget: float,
                       tolerance: float = 1e-9, max_iter: int = 200) -> MixtureResult:
    """Same LP via knapsack solves of max sum_f L_f (d_f - lam*alpha) X_f.

    Keeps a bracket of envelope points, one costing more than the budget and
    one costing at most the budget, and moves the multiplier to the slope of
    the chord between them. It stops when no set lies more than
    ``tolerance`` above the chord, i.e. when the dual bound at that
    multiplier is within ``tolerance`` of the chord value at the budget.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    d_row = np.asarray(d_row, dtype=np.float64)
    caps = np.array([capacity], dtype=np.int64)

    def solve(lam):
        row = solve_placements((sizes * (d_row - lam * alpha))[None, :], sizes, caps)[0]
        used = int(row @ sizes)
        return row, alpha * used, float(sizes[row == 1] @ d_row[row == 1])

    hi_row, c_hi, r_hi = np.zeros(len(sizes), dtype=np.int8), 0.0, 0.0
    lo_row, c_lo, r_lo = solve(0.0)
    points = [(0.0, 0.0), (c_lo, r_lo)]
    if c_lo <= budget:
        return MixtureResult(r_lo, [(lo_row, 1.0)], _envelope_points(points))
    for _ in range(max_iter):
        lam = (r_lo - r_hi) / (c_lo - c_hi)
        row, c, r = solve(lam)
        points.append((c, r))
        gap = (r - lam * c) - (r_lo - lam * c_lo)
        if gap <= tolerance:
            theta = (budget - c_hi) / (c_lo - c_hi)
            value = r_hi + theta * (r_lo - r_hi)
            support = [(hi_row, 1.0 - theta), (lo_row, theta)]
            return MixtureResult(value, [s for s in support if s[1] > 0], _envelope_points(points))
        if c > budget:
            lo_row, c_lo, r_lo = row, c, r
        elif c < budget:
            hi_row, c_hi, r_hi = row, c, r
        else:
            return MixtureResult(r, [(row, 1.0)], _envelope_points(points))
    raise LagrangianConvergenceError(
        f"no convergence within {max_iter} iterations", ((c_hi, r_hi), (c_lo, r_lo))
    )


def _envelope_points(points) -> np.ndarray:
    pts = np.array(points, dtype=np.float64)
    return pts[upper_envelope(pts[:, 0], pts[:, 1])]


def lagrangian_r_star(cfg: SystemConfig, n: int, tolerance: float = 1e-9, d: np.ndarray | None = None) -> float:
    if d is None:
        d = _true_demand(cfg)
    return lagrangian_mixture(
        cfg.file_sizes, cfg.efs_capacity[n], d[n], cfg.alpha, float(cfg.budget[n]), tolerance
    ).value


def efs_mixture(cfg: SystemConfig, n: int, d: np.ndarray, method: str = "auto") -> MixtureResult:
    if method == "auto":
        method = "enumerate" if cfg.num_files <= AUTO_ENUM_FILES else "lagrangian"
    if method == "enumerate":
        return optimal_mixture(enumerate_feasible(cfg, n, d), float(cfg.budget[n]))
    return lagrangian_mixture(cfg.file_sizes, cfg.efs_capacity[n], d[n], cfg.alpha, float(cfg.budget[n]))


def r_star(cfg: SystemConfig, d: np.ndarray | None = None, method: str = "auto") -> float:
    """Optimal time-averaged expected total reward, summed over EFSs."""
    if d is None:
        d = _true_demand(cfg)
    return float(sum(efs_mixture(cfg, n, d, method).value for n in range(cfg.num_efs)))


def optimal_policy_mixtures(cfg: SystemConfig, d: np.ndarray) -> list:
    return [efs_mixture(cfg, n, d).support for n in range(cfg.num_efs)]


def _true_demand(cfg: SystemConfig) -> np.ndarray:
    from .demand import PopularityModel

    return PopularityModel.from_config(cfg).mean_demand
