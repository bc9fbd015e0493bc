"""Per-slot cache placement policies.

Every policy follows the same two-step slot protocol: ``decide(t)`` returns
the N x F placement before demands are drawn, then ``observe(t, demand,
placement)`` credits rewards and costs and updates internal state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .config import SystemConfig
from .control import compute_weights, place_rows, solve_placements, update_queue
from .demand import DemandMatrix, HistorySet, PopularityModel
from .learning import _VARIANTS, ArmStats, _estimate_kernel, estimate_table, init_stats, update_stats


@dataclass
class SlotOutcome:
    reward: np.ndarray  # R_n(t)
    cost: np.ndarray  # C_n(t)


def _policy_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


class Policy:
    name = "policy"
    queues: np.ndarray | None = None

    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg
        self.sizes = cfg.sizes_array
        self.capacity = cfg.capacity_array
        self.alpha = cfg.alpha
        self.k_n = cfg.users_per_efs
        self.placement = np.zeros((cfg.num_efs, cfg.num_files), dtype=np.int8)

    def decide(self, t: int) -> np.ndarray:
        return self.placement

    def observe(self, t: int, demand: DemandMatrix, placement: np.ndarray) -> SlotOutcome:
        return SlotOutcome(self._reward(demand.counts, placement), self._cost(placement))

    def _reward(self, counts, placement):
        return (counts * placement) @ self.sizes

    def _cost(self, placement):
        return self.alpha * (placement @ self.sizes)


class NullPolicy(Policy):
    """Caches nothing; useful as a regret reference."""

    name = "null"


class CPHBLPolicy(Policy):
    """History-aware bandit learning with virtual-queue budget control.

    ``estimator`` selects how popularity is estimated: ``hucb1`` (default),
    ``ucbt`` (UCB1-tuned), or ``greedy`` (empirical means with
    epsilon-greedy exploration).
    """

    name = "cphbl"

    def __init__(self, cfg: SystemConfig, history: HistorySet, estimator: str = "hucb1", epsilon: float = 0.0):
        super().__init__(cfg)
        self.estimator = estimator
        self.epsilon = float(epsilon)
        self.v = cfg.v
        self.budget = cfg.budget_array
        self.stats, self.estimates = init_stats(history, self.k_n)
        self.queues = np.zeros(cfg.num_efs)
        self.rng = _policy_rng(cfg.seeds.policy)
        self.explored = np.zeros(cfg.num_efs, dtype=bool)

    def decide(self, t: int) -> np.ndarray:
        self.estimates = estimate_table(self.stats, t, self.k_n, self.estimator)
        if self.estimator == "greedy":
            rows = []
            for n in range(self.cfg.num_efs):
                row, self.explored[n] = epsilon_greedy_select(
                    self.estimates[n], self.queues[n], self.sizes, self.capacity[n],
                    self.v, self.alpha, self.epsilon, self.rng,
                )
                rows.append(row)
            self.placement = np.array(rows, dtype=np.int8)
        else:
            table = compute_weights(self.estimates, self.queues, self.sizes, self.v, self.alpha)
            self.placement = solve_placements(table.weights, self.sizes, self.capacity)
        return self.placement

    def observe(self, t: int, demand: DemandMatrix, placement: np.ndarray) -> SlotOutcome:
        out = super().observe(t, demand, placement)
        update_stats(self.stats, demand.counts, placement)
        self.queues = update_queue(self.queues, self.budget, out.cost)
        return out

    @property
    def supports_block(self) -> bool:
        return self.estimator in ("hucb1", "ucbt")

    def run_block(self, t0: int, counts: np.ndarray):
        """Run decide/observe for ``len(counts)`` consecutive slots in one
        compiled call. Gives the same placements, rewards and queues as the
        per-slot methods."""
        s = self.stats
        x, r, c = _cphbl_block(
            t0, np.ascontiguousarray(counts, dtype=np.int64), s.online_count, s.hist_count, s.online_sum,
            s.hist_sum, s.online_sum_sq, s.hist_sum_sq, self.queues, self.k_n.astype(np.float64),
            self.sizes, self.capacity, self.v, self.alpha, self.budget, _VARIANTS[self.estimator],
        )
        self.placement = x[-1].copy()
        return x, r, c


@njit(cache=True)
def _cphbl_block(t0, counts, online_count, hist_count, online_sum, hist_sum, online_sq, hist_sq,
                 queues, k_n, sizes, caps, v, alpha, budget, variant):
    n_slots, n_efs, n_files = counts.shape
    xs = np.zeros((n_slots, n_efs, n_files), dtype=np.int8)
    rewards = np.zeros((n_slots, n_efs))
    costs = np.zeros((n_slots, n_efs))
    weights = np.empty((n_efs, n_files))
    for j in range(n_slots):
        est = _estimate_kernel(online_count, hist_count, online_sum, hist_sum, online_sq, hist_sq,
                               t0 + j, k_n, variant)
        for n in range(n_efs):
            for f in range(n_files):
                weights[n, f] = sizes[f] * (v * est[n, f] - alpha * queues[n])
        x = place_rows(weights, sizes, caps)
        xs[j] = x
        for n in range(n_efs):
            hit = 0
            used = 0
            for f in range(n_files):
                if x[n, f]:
                    dem = counts[j, n, f]
                    hit += sizes[f] * dem
                    used += sizes[f]
                    online_count[n, f] += 1
                    online_sum[n, f] += dem
                    online_sq[n, f] += dem * dem
            rewards[j, n] = hit
            costs[j, n] = alpha * used
            queues[n] = max(queues[n] - budget[n], 0.0) + costs[j, n]
    return xs, rewards, costs


def epsilon_greedy_select(means_row, q_n, sizes, capacity, v, alpha, epsilon, rng):
    """One EFS's epsilon-greedy placement on mean-based weights.

    Returns ``(row, explored)``. When exploring, files with non-negative
    weight are drawn uniformly at random, one at a time, among those that
    still fit, until none fits.
    """
    table = compute_weights(np.asarray(means_row, dtype=np.float64)[None, :], [q_n], sizes, v, alpha)
    if rng.random() < epsilon:
        row = np.zeros(len(sizes), dtype=np.int8)
        free = int(capacity)
        remaining = list(table.order(0))
        while True:
            fitting = [f for f in remaining if sizes[f] <= free]
            if not fitting:
                break
            pick = fitting[rng.integers(len(fitting))]
            row[pick] = 1
            free -= int(sizes[pick])
            remaining.remove(pick)
        return row, True
    row = solve_placements(table.weights, np.asarray(sizes, dtype=np.int64), np.array([capacity], dtype=np.int64))[0]
    return row, False


class MCUCBPolicy(Policy):
    """Combinatorial UCB without history or budget: capacity-only knapsack on
    L_f times the UCB estimate from online observations."""

    name = "mcucb"

    def __init__(self, cfg: SystemConfig):
        super().__init__(cfg)
        self.stats = ArmStats.zeros((cfg.num_efs, cfg.num_files))

    def decide(self, t: int) -> np.ndarray:
        est = estimate_table(self.stats, t, self.k_n, "hucb1")
        self.placement = solve_placements(self.sizes * est, self.sizes, self.capacity)
        return self.placement

    def observe(self, t: int, demand: DemandMatrix, placement: np.ndarray) -> SlotOutcome:
        out = super().observe(t, demand, placement)
        update_stats(self.stats, demand.counts, placement)
        return out


class _ReactivePolicy(Policy):
    """Request-driven eviction cache. Requests are served in ascending user
    order; a miss evicts lowest-priority files until the new file fits.
    Reward uses the slot's starting contents, cost the end-of-slot contents."""

    def __init__(self, cfg: SystemConfig):
        super().__init__(cfg)
        self.efs_of_user = cfg.efs_of_user
        self.meta: list[dict[int, tuple]] = [{} for _ in range(cfg.num_efs)]
        self.free = self.capacity.astype(np.int64).copy()

    def _on_hit(self, meta, f, stamp):
        raise NotImplementedError

    def _on_insert(self, meta, f, stamp):
        raise NotImplementedError

    def observe(self, t: int, demand: DemandMatrix, placement: np.ndarray) -> SlotOutcome:
        reward = self._reward(demand.counts, placement)
        num_users = len(self.efs_of_user)
        for k, f in enumerate(demand.requests):
            n = self.efs_of_user[k]
            f = int(f)
            meta = self.meta[n]
            stamp = t * num_users + k
            if f in meta:
                self._on_hit(meta, f, stamp)
                continue
            size = int(self.sizes[f])
            if size > self.capacity[n]:
                continue
            while self.free[n] < size:
                victim = min(meta, key=meta.__getitem__)
                del meta[victim]
                self.free[n] += self.sizes[victim]
            self._on_insert(meta, f, stamp)
            self.free[n] -= size
        self.placement = np.zeros_like(self.placement)
        for n, meta in enumerate(self.meta):
            self.placement[n, list(meta)] = 1
        return SlotOutcome(reward, self._cost(self.placement))


class LFUPolicy(_ReactivePolicy):
    """Evicts the file with the fewest requests since it entered the cache
    (oldest insertion first on ties). Counters reset on eviction."""

    name = "lfu"

    def _on_hit(self, meta, f, stamp):
        count, inserted = meta[f]
        meta[f] = (count + 1, inserted)

    def _on_insert(self, meta, f, stamp):
        meta[f] = (1, stamp)


class LRUPolicy(_ReactivePolicy):
    """Evicts the file whose last request is oldest."""

    name = "lru"

    def _on_hit(self, meta, f, stamp):
        meta[f] = (stamp,)

    def _on_insert(self, meta, f, stamp):
        meta[f] = (stamp,)


class MixturePolicy(Policy):
    """Draws each EFS's placement i.i.d. from a fixed distribution over sets.

    ``mixtures[n]`` is a list of (placement row, probability).
    """

    name = "oracle"

    def __init__(self, cfg: SystemConfig, mixtures):
        super().__init__(cfg)
        self.mixtures = [
            (np.array([r for r, _ in mix], dtype=np.int8), np.array([p for _, p in mix], dtype=np.float64))
            for mix in mixtures
        ]
        self.rng = _policy_rng(cfg.seeds.policy)

    def decide(self, t: int) -> np.ndarray:
        rows = []
        for sets, probs in self.mixtures:
            j = min(int(np.searchsorted(np.cumsum(probs), self.rng.random(), side="right")), len(probs) - 1)
            rows.append(sets[j])
        self.placement = np.array(rows, dtype=np.int8)
        return self.placement


def make_policy(cfg: SystemConfig, model: PopularityModel, history: HistorySet) -> Policy:
    spec = cfg.policy
    if spec.name == "cphbl":
        return CPHBLPolicy(cfg, history, spec.estimator, float(spec.epsilon))
    if spec.name == "mcucb":
        return MCUCBPolicy(cfg)
    if spec.name == "lfu":
        return LFUPolicy(cfg)
    if spec.name == "lru":
        return LRUPolicy(cfg)
    if spec.name == "null":
        return NullPolicy(cfg)
    if spec.name == "oracle":
        from .oracle import optimal_policy_mixtures

        return MixturePolicy(cfg, optimal_policy_mixtures(cfg, model.mean_demand))
    raise ValueError(f"unknown policy {spec.name!r}")
