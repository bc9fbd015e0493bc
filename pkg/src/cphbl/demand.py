"""Zipf popularity model, per-slot demand sampling and offline history.

Every user issues exactly one request per slot, drawn from its own Zipf pmf
over file ranks (rank 1 = file index 0). Random streams are numpy ``PCG64``
generators seeded through ``SeedSequence``; user ``k`` of the demand stream
uses ``SeedSequence(demand_seed, spawn_key=(k,))`` so that every EFS row
depends only on the streams of its own users.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SystemConfig


def zipf_pmf(skew: float, num_files: int) -> np.ndarray:
    """p_f proportional to f**(-skew) over ranks 1..F, normalized."""
    if num_files < 1:
        raise ValueError("zipf_pmf needs at least one file")
    if skew < 0:
        raise ValueError("zipf skew must be >= 0")
    weights = np.arange(1, num_files + 1, dtype=np.float64) ** (-float(skew))
    return weights / weights.sum()


@dataclass(frozen=True)
class PopularityModel:
    user_pmf: np.ndarray  # K x F
    efs_of_user: np.ndarray  # K
    num_efs: int

    @classmethod
    def from_config(cls, cfg: SystemConfig) -> "PopularityModel":
        pmf = np.vstack([zipf_pmf(s, cfg.num_files) for s in cfg.zipf_skew])
        return cls(pmf, cfg.efs_of_user, cfg.num_efs)

    @property
    def num_files(self) -> int:
        return self.user_pmf.shape[1]

    @property
    def users_per_efs(self) -> np.ndarray:
        return np.bincount(self.efs_of_user, minlength=self.num_efs)

    @property
    def mean_demand(self) -> np.ndarray:
        """True popularity d_{n,f}: expected requests per slot (N x F)."""
        d = np.zeros((self.num_efs, self.num_files))
        np.add.at(d, self.efs_of_user, self.user_pmf)
        return d

    def demand_distribution(self, n: int, f: int) -> np.ndarray:
        """Exact pmf of D_{n,f} over {0..K_n}: a Poisson-binomial of the users' hit chances."""
        dist = np.array([1.0])
        for p in self.user_pmf[self.efs_of_user == n, f]:
            dist = np.convolve(dist, [1.0 - p, p])
        return dist


@dataclass
class DemandMatrix:
    counts: np.ndarray  # N x F requests per file
    requests: np.ndarray  # K file index requested by each user


def aggregate_requests(requests: np.ndarray, efs_of_user: np.ndarray, num_efs: int, num_files: int) -> np.ndarray:
    """Turn per-user requests (..., K) into counts (..., N, F)."""
    lead = requests.shape[:-1]
    flat = requests.reshape(-1, requests.shape[-1])
    rows = np.arange(flat.shape[0])[:, None] * (num_efs * num_files)
    idx = rows + efs_of_user[None, :] * num_files + flat
    counts = np.bincount(idx.ravel(), minlength=flat.shape[0] * num_efs * num_files)
    return counts.reshape(*lead, num_efs, num_files)


class DemandSampler:
    """Per-user demand streams, sampled in blocks of slots.

    ``user_entropy`` overrides the entropy of individual users' streams
    (defaults to ``seed`` for every user).
    """

    def __init__(self, model: PopularityModel, seed: int, user_entropy: dict[int, int] | None = None):
        self.model = model
        entropy = dict(user_entropy or {})
        self._gens = [
            np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy.get(k, seed), spawn_key=(k,))))
            for k in range(len(model.efs_of_user))
        ]
        self._cdf = np.cumsum(model.user_pmf, axis=1)
        self._cdf[:, -1] = 1.0

    def sample_requests(self, num_slots: int) -> np.ndarray:
        out = np.empty((num_slots, len(self._gens)), dtype=np.int64)
        for k, gen in enumerate(self._gens):
            u = gen.random(num_slots)
            out[:, k] = np.searchsorted(self._cdf[k], u, side="right")
        np.minimum(out, self.model.num_files - 1, out=out)
        return out

    def block(self, num_slots: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (counts (B, N, F), requests (B, K)) for the next ``num_slots`` slots."""
        req = self.sample_requests(num_slots)
        counts = aggregate_requests(req, self.model.efs_of_user, self.model.num_efs, self.model.num_files)
        return counts, req


def sample_slot_demands(model: PopularityModel, sampler: DemandSampler) -> DemandMatrix:
    counts, req = sampler.block(1)
    return DemandMatrix(counts[0], req[0])


class TraceDemandSource:
    """Replays a fixed demand trace (slot, efs, file, count) instead of sampling.

    Per-user requests are reconstructed by handing each EFS's requests, in
    ascending file order, to its users in ascending user order.
    """

    def __init__(self, counts: np.ndarray, efs_of_user: np.ndarray):
        self.counts = np.asarray(counts, dtype=np.int64)
        self.efs_of_user = np.asarray(efs_of_user)
        self._pos = 0
        users = [np.flatnonzero(self.efs_of_user == n) for n in range(self.counts.shape[1])]
        for n, us in enumerate(users):
            if np.any(self.counts[:, n, :].sum(axis=1) != len(us)):
                raise ValueError(f"trace rows for EFS {n} must sum to its user count {len(us)}")
        self._users = users

    def block(self, num_slots: int) -> tuple[np.ndarray, np.ndarray]:
        end = self._pos + num_slots
        if end > len(self.counts):
            raise ValueError(f"trace has only {len(self.counts)} slots, need {end}")
        counts = self.counts[self._pos:end]
        self._pos = end
        req = np.empty((num_slots, len(self.efs_of_user)), dtype=np.int64)
        for n, us in enumerate(self._users):
            for b in range(num_slots):
                req[b, us] = np.repeat(np.arange(counts.shape[2]), counts[b, n])
        return counts, req


def export_trace(counts: np.ndarray, path: str | Path) -> None:
    """Write a (T, N, F) demand array as CSV rows slot,efs,file,count (non-zero counts only)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "efs", "file", "count"])
        for t, n, f in zip(*np.nonzero(counts)):
            w.writerow([int(t), int(n), int(f), int(counts[t, n, f])])


def import_trace(path: str | Path, num_efs: int, num_files: int) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(int(r["slot"]), int(r["efs"]), int(r["file"]), int(r["count"])) for r in csv.DictReader(fh)]
    horizon = max((r[0] for r in rows), default=-1) + 1
    counts = np.zeros((horizon, num_efs, num_files), dtype=np.int64)
    for t, n, f, c in rows:
        counts[t, n, f] = c
    return counts


@dataclass
class HistorySet:
    counts: np.ndarray  # N x F, H_{n,f}
    sums: np.ndarray  # N x F, sum of the H observations
    sums_sq: np.ndarray  # N x F, sum of squared observations

    @property
    def h_min(self) -> int:
        return int(self.counts.min())


def generate_history(model: PopularityModel, counts: np.ndarray, seed: int) -> HistorySet:
    """Draw H_{n,f} i.i.d. copies of D_{n,f} for every arm.

    The H draws of an arm are summarized by a multinomial over the exact
    distribution of D_{n,f}, which is what H independent slots of the
    one-request-per-user mechanism would produce for that arm.
    """
    counts = np.asarray(counts, dtype=np.int64)
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    sums = np.zeros_like(counts)
    sums_sq = np.zeros_like(counts)
    num_efs, num_files = counts.shape
    for n in range(num_efs):
        for f in range(num_files):
            h = int(counts[n, f])
            if h == 0:
                continue
            dist = model.demand_distribution(n, f)
            tally = gen.multinomial(h, dist / dist.sum())
            values = np.arange(len(dist), dtype=np.int64)
            sums[n, f] = int(tally @ values)
            sums_sq[n, f] = int(tally @ values**2)
    return HistorySet(counts.copy(), sums, sums_sq)
