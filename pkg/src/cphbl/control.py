"""Virtual queues and the per-slot weighted knapsack placement.

The knapsack routines are numba-compiled; they are the only implementation
(tests exercise them against brute-force enumeration).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


class PlacementConsistencyError(RuntimeError):
    pass


def update_queue(q, budget, cost):
    """Q(t+1) = max(Q(t) - b, 0) + C(t); works on scalars or per-EFS arrays."""
    return np.maximum(np.asarray(q, dtype=np.float64) - budget, 0.0) + cost


@dataclass
class WeightTable:
    weights: np.ndarray  # N x F

    @property
    def positive(self) -> np.ndarray:
        """Membership in F_{n,1} (w >= 0); the rest form F_{n,2}."""
        return self.weights >= 0

    def order(self, n: int) -> np.ndarray:
        """phi_{n,1..}: files of F_{n,1} in ascending index order."""
        return np.flatnonzero(self.positive[n])


def compute_weights(estimates: np.ndarray, queues: np.ndarray, sizes: np.ndarray, v: float, alpha: float) -> WeightTable:
    """w_{n,f} = L_f (V d_{n,f} - alpha Q_n); zero weights belong to F_{n,1}."""
    q = np.asarray(queues, dtype=np.float64)[:, None]
    return WeightTable(sizes * (v * np.asarray(estimates, dtype=np.float64) - alpha * q))


@njit(cache=True)
def knapsack_dp(weights, sizes, capacity):
    """Table v[i, m]: best total weight from the first i items within m units."""
    n_items = weights.shape[0]
    table = np.zeros((n_items + 1, capacity + 1))
    for i in range(1, n_items + 1):
        size = sizes[i - 1]
        w = weights[i - 1]
        for m in range(1, capacity + 1):
            if size > m:
                table[i, m] = table[i - 1, m]
            else:
                table[i, m] = max(table[i - 1, m], table[i - 1, m - size] + w)
    return table


@njit(cache=True)
def backtrack_placement(table, weights, sizes, i, m):
    """Recover a selection attaining table[i, m], testing inclusion first."""
    chosen = np.zeros(weights.shape[0], dtype=np.bool_)
    target = table[i, m]
    while i >= 1:
        size = sizes[i - 1]
        if m - size >= 0 and table[i, m] == table[i - 1, m - size] + weights[i - 1]:
            chosen[i - 1] = True
            m -= size
        elif table[i, m] == table[i - 1, m]:
            pass
        else:
            raise RuntimeError("knapsack backtracking found no consistent branch")
        i -= 1
    total = 0.0
    for j in range(weights.shape[0]):
        if chosen[j]:
            total += weights[j]
    if total != target:
        raise RuntimeError("reconstructed knapsack value differs from the DP optimum")
    return chosen


@njit(cache=True)
def place_rows(weights, sizes, capacities):
    """Solve one knapsack per row; items with negative weight are never cached."""
    n_rows, n_files = weights.shape
    out = np.zeros((n_rows, n_files), dtype=np.int8)
    for n in range(n_rows):
        count = 0
        for f in range(n_files):
            if weights[n, f] >= 0:
                count += 1
        idx = np.empty(count, dtype=np.int64)
        count = 0
        for f in range(n_files):
            if weights[n, f] >= 0:
                idx[count] = f
                count += 1
        w = weights[n, idx]
        s = sizes[idx]
        table = knapsack_dp(w, s, capacities[n])
        chosen = backtrack_placement(table, w, s, count, capacities[n])
        for j in range(count):
            if chosen[j]:
                out[n, idx[j]] = 1
    return out


def set_cache_placement(estimates_row, q_n, sizes, capacity, v, alpha) -> np.ndarray:
    """Placement row X_n(t) for one EFS from its estimates and queue backlog."""
    table = compute_weights(np.asarray(estimates_row, dtype=np.float64)[None, :], [q_n], sizes, v, alpha)
    try:
        return place_rows(table.weights, np.asarray(sizes, dtype=np.int64), np.array([capacity], dtype=np.int64))[0]
    except RuntimeError as exc:
        raise PlacementConsistencyError(str(exc)) from exc


def solve_placements(weights: np.ndarray, sizes: np.ndarray, capacities: np.ndarray) -> np.ndarray:
    try:
        return place_rows(np.ascontiguousarray(weights, dtype=np.float64), sizes, capacities)
    except RuntimeError as exc:
        raise PlacementConsistencyError(str(exc)) from exc
