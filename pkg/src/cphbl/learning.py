"""Per-arm observation statistics and popularity estimators.

All functions operate elementwise, so they accept either a single arm's
numbers or whole N x F tables (with ``k_n`` broadcast as an (N, 1) column).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .demand import HistorySet


@dataclass
class ArmStats:
    online_count: np.ndarray
    hist_count: np.ndarray
    online_sum: np.ndarray
    hist_sum: np.ndarray
    online_sum_sq: np.ndarray
    hist_sum_sq: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "ArmStats":
        return cls(*(np.zeros(shape, dtype=np.int64) for _ in range(6)))

    @property
    def n_obs(self) -> np.ndarray:
        return self.online_count + self.hist_count

    @property
    def mean(self) -> np.ndarray:
        """Empirical mean over online and historical observations (nan if none)."""
        n = self.n_obs
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, (self.online_sum + self.hist_sum) / np.maximum(n, 1), np.nan)

    @property
    def second_moment(self) -> np.ndarray:
        n = self.n_obs
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, (self.online_sum_sq + self.hist_sum_sq) / np.maximum(n, 1), np.nan)

    def copy(self) -> "ArmStats":
        return ArmStats(*(np.array(a, copy=True) for a in self.__dict__.values()))


def init_stats(history: HistorySet, k_n) -> tuple[ArmStats, np.ndarray]:
    """Zero online statistics seeded with history; every initial estimate is K_n."""
    counts = np.asarray(history.counts, dtype=np.int64)
    stats = ArmStats(
        online_count=np.zeros_like(counts),
        hist_count=counts.copy(),
        online_sum=np.zeros_like(counts),
        hist_sum=np.asarray(history.sums, dtype=np.int64).copy(),
        online_sum_sq=np.zeros_like(counts),
        hist_sum_sq=np.asarray(history.sums_sq, dtype=np.int64).copy(),
    )
    initial = np.broadcast_to(np.asarray(k_n, dtype=np.float64).reshape(-1, 1), counts.shape).copy()
    return stats, initial


def hucb1_radius(t, n_obs, k_n):
    return k_n * np.sqrt(3.0 * np.log(t) / (2.0 * n_obs))


def hucb1_estimate(mean, n_obs, t, k_n):
    """min{mean + K_n sqrt(3 ln t / (2 (h+H))), K_n}; requires h+H > 0 and t >= 1."""
    return np.minimum(mean + hucb1_radius(t, n_obs, k_n), k_n)


def ucbt_estimate(mean, second_moment, n_obs, t, k_n):
    """UCB1-tuned with rewards normalized by K_n, then rescaled.

    The variance proxy is the normalized sample variance plus
    sqrt(2 ln t / (h+H)); the radius uses min(1/4, proxy).
    """
    log_t = np.log(t)
    var = second_moment / k_n**2 - (mean / k_n) ** 2 + np.sqrt(2.0 * log_t / n_obs)
    radius = k_n * np.sqrt(log_t / n_obs * np.minimum(0.25, var))
    return np.minimum(mean + radius, k_n)


_VARIANTS = {"hucb1": 0, "ucbt": 1, "greedy": 2}


@njit(cache=True)
def _estimate_kernel(online_count, hist_count, online_sum, hist_sum, online_sq, hist_sq, t, k_n, variant):
    rows, cols = online_count.shape
    out = np.empty((rows, cols))
    log_t = np.log(t) if t > 0 else 0.0
    for n in range(rows):
        k = k_n[n]
        for f in range(cols):
            obs = online_count[n, f] + hist_count[n, f]
            if t <= 0 or obs == 0:
                out[n, f] = k
                continue
            mean = (online_sum[n, f] + hist_sum[n, f]) / obs
            if variant == 0:
                est = mean + k * np.sqrt(3.0 * log_t / (2.0 * obs))
            elif variant == 1:
                m2 = (online_sq[n, f] + hist_sq[n, f]) / obs
                var = m2 / k**2 - (mean / k) ** 2 + np.sqrt(2.0 * log_t / obs)
                est = mean + k * np.sqrt(log_t / obs * min(0.25, var))
            else:
                est = mean
            out[n, f] = min(est, k)
    return out


def estimate_table(stats: ArmStats, t: int, k_n: np.ndarray, variant: str = "hucb1") -> np.ndarray:
    """Per-arm estimates for slot t, keeping the initial value K_n where
    the estimator is not yet defined (t == 0 or no observations)."""
    try:
        code = _VARIANTS[variant]
    except KeyError:
        raise ValueError(f"unknown estimator {variant!r}") from None
    return _estimate_kernel(
        stats.online_count, stats.hist_count, stats.online_sum, stats.hist_sum,
        stats.online_sum_sq, stats.hist_sum_sq, int(t), np.asarray(k_n, dtype=np.float64), code,
    )


def update_stats(stats: ArmStats, demand: np.ndarray, placement: np.ndarray) -> ArmStats:
    """Record this slot's demand for every cached arm (in place)."""
    x = np.asarray(placement)
    dx = demand * x
    stats.online_count += x
    stats.online_sum += dx
    stats.online_sum_sq += demand * dx
    return stats
