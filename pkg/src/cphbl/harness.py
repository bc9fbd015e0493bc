"""Simulation loop, regret and bound evaluation, sweeps and CSV output."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from numba import njit

from .config import PolicySpec, Seeds, SystemConfig, config_hash, validate_config
from .demand import DemandMatrix, DemandSampler, PopularityModel, generate_history
from .oracle import r_star as compute_r_star
from .policies import CPHBLPolicy, Policy, make_policy

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
BLOCK = 4096
SWEEP_AXES = ("V", "T", "H_min", "b", "policy")


class InvariantViolation(RuntimeError):
    def __init__(self, message: str, slot: int):
        super().__init__(f"slot {slot}: {message}")
        self.slot = slot


@dataclass
class BoundReport:
    B: float
    gamma: float
    queue_numerator: float
    v: float
    h_min: int
    sum_km: float  # sum_n K_n M_n

    def bound(self, horizon, v=None, h_min=None):
        """Regret upper bound B/V + 4 sum K_n M_n / T + Gamma sqrt(ln T / (T + H_min))."""
        v = self.v if v is None else v
        h_min = self.h_min if h_min is None else h_min
        horizon = np.asarray(horizon, dtype=np.float64)
        return self.B / v + 4.0 * self.sum_km / horizon + self.gamma * np.sqrt(np.log(horizon) / (horizon + h_min))


def theoretical_bounds(cfg: SystemConfig) -> BoundReport:
    k = cfg.users_per_efs.astype(np.float64)
    m = cfg.capacity_array.astype(np.float64)
    b = cfg.budget_array
    alpha = cfg.alpha
    total_size = float(sum(cfg.file_sizes))
    big_b = float(np.sum((b**2 + alpha**2 * m**2) / 2.0))
    gamma = float(2.0 * np.sum(k * np.sqrt(6.0 * m * total_size)))
    return BoundReport(
        B=big_b,
        gamma=gamma,
        queue_numerator=big_b + cfg.v * float(np.sum(2.0 * k * m)),
        v=cfg.v,
        h_min=cfg.h_min,
        sum_km=float(np.sum(k * m)),
    )


@dataclass
class RunRecord:
    """Checkpointed cumulative totals of one run; averages are derived."""

    slots: np.ndarray  # checkpoint t (number of completed slots)
    cum_reward: np.ndarray  # sum over tau < t of sum_n R_n(tau)
    cum_expected_reward: np.ndarray  # sum over tau < t of sum_{n,f} L_f d_{n,f} X_{n,f}(tau)
    cum_cost: np.ndarray  # (checkpoints, N)
    queues: np.ndarray  # Q_n(t), (checkpoints, N)
    cum_queue_sum: np.ndarray  # sum over tau < t of sum_n Q_n(tau)
    r_star: float
    bounds: BoundReport
    config_hash: str
    seeds: Seeds
    wall_clock: float = 0.0
    per_slot: dict | None = None

    @property
    def reward_avg(self):
        return self.cum_reward / self.slots

    @property
    def expected_reward_avg(self):
        return self.cum_expected_reward / self.slots

    @property
    def cost_avg(self):
        return self.cum_cost / self.slots[:, None]

    @property
    def queue_sum_avg(self):
        return self.cum_queue_sum / self.slots

    @property
    def regret(self):
        return compute_regret(self, self.r_star)[0]

    @property
    def bound_series(self):
        return self.bounds.bound(self.slots)


def compute_regret(record: RunRecord, r_star: float) -> tuple[np.ndarray, np.ndarray]:
    """(expected-reward regret, realized-reward regret) at each checkpoint."""
    return r_star - record.expected_reward_avg, r_star - record.reward_avg


@njit(cache=True)
def _queue_path(q0, budget, costs):
    out = np.empty((costs.shape[0] + 1, q0.shape[0]))
    out[0] = q0
    for j in range(costs.shape[0]):
        for n in range(q0.shape[0]):
            out[j + 1, n] = max(out[j, n] - budget[n], 0.0) + costs[j, n]
    return out


@lru_cache(maxsize=64)
def _cached_r_star(key) -> float:
    cfg = key
    return compute_r_star(cfg)


def r_star_for(cfg: SystemConfig) -> float:
    # R* ignores seeds, policy, horizon and V; normalize them so the cache hits
    key = replace(cfg, seeds=Seeds(), policy=PolicySpec(), horizon=1, v_param=Fraction(1),
                  history_counts=((0,) * cfg.num_files,) * cfg.num_efs)
    return _cached_r_star(key)


def checkpoint_slots(horizon: int, stride: int) -> np.ndarray:
    pts = list(range(stride, horizon + 1, stride)) if stride > 0 else []
    if not pts or pts[-1] != horizon:
        pts.append(horizon)
    return np.array(pts, dtype=np.int64)


def run_simulation(
    cfg: SystemConfig,
    checkpoint_stride: int = 1000,
    keep_per_slot: bool = False,
    demand_source=None,
    policy: Policy | None = None,
    fast: bool = True,
) -> RunRecord:
    """Run decide -> demand -> observe for every slot of the horizon.

    With ``fast`` set, policies that provide a compiled ``run_block`` are
    advanced a block of slots at a time; results are identical.
    """
    validate_config(cfg)
    start = time.perf_counter()
    horizon = cfg.horizon
    model = PopularityModel.from_config(cfg)
    d = model.mean_demand
    sizes = cfg.sizes_array
    caps = cfg.capacity_array
    ld = (sizes * d).astype(np.float64)
    budget = cfg.budget_array
    max_cost = cfg.alpha * caps

    if policy is None:
        history = generate_history(model, cfg.history_array, cfg.seeds.history)
        policy = make_policy(cfg, model, history)
    source = demand_source if demand_source is not None else DemandSampler(model, cfg.seeds.demand)

    cps = checkpoint_slots(horizon, checkpoint_stride)
    ncp = len(cps)
    n_efs = cfg.num_efs
    rec_reward = np.zeros(ncp)
    rec_exp = np.zeros(ncp)
    rec_cost = np.zeros((ncp, n_efs))
    rec_queue = np.zeros((ncp, n_efs))
    rec_qsum = np.zeros(ncp)
    cp_i = 0

    carry_reward = 0.0
    carry_exp = 0.0
    carry_cost = np.zeros(n_efs)
    carry_qsum = 0.0
    queue = np.zeros(n_efs)
    slots_kept: dict[str, list] = {"placement": [], "reward": [], "cost": [], "queue": [], "counts": []}

    t0 = 0
    while t0 < horizon:
        size = min(BLOCK, horizon - t0)
        counts_blk, req_blk = source.block(size)
        if fast and getattr(policy, "supports_block", False):
            x_blk, r_blk, c_blk = policy.run_block(t0, counts_blk)
        else:
            x_blk = np.empty((size, n_efs, cfg.num_files), dtype=np.int8)
            r_blk = np.empty((size, n_efs))
            c_blk = np.empty((size, n_efs))
            for j in range(size):
                t = t0 + j
                x = policy.decide(t)
                x_blk[j] = x
                out = policy.observe(t, DemandMatrix(counts_blk[j], req_blk[j]), x)
                r_blk[j] = out.reward
                c_blk[j] = out.cost

        used = x_blk.astype(np.int64) @ sizes
        bad = np.argwhere(used > caps)
        if len(bad):
            raise InvariantViolation("placement exceeds EFS capacity", t0 + int(bad[0, 0]))
        bad = np.argwhere(c_blk > max_cost + 1e-9)
        if len(bad):
            raise InvariantViolation("storage cost exceeds alpha*M_n", t0 + int(bad[0, 0]))
        q_path = _queue_path(queue, budget, c_blk)
        if isinstance(policy, CPHBLPolicy) and not np.array_equal(q_path[-1], policy.queues):
            raise InvariantViolation("policy queue diverged from harness queue", t0 + size - 1)
        if np.any(q_path < 0):
            raise InvariantViolation("negative virtual queue", t0 + int(np.argwhere(q_path < 0)[0, 0]))

        exp_blk = np.einsum("bnf,nf->b", x_blk, ld)
        cum_r = carry_reward + np.cumsum(r_blk.sum(axis=1))
        cum_e = carry_exp + np.cumsum(exp_blk)
        cum_c = carry_cost + np.cumsum(c_blk, axis=0)
        cum_q = carry_qsum + np.cumsum(q_path[:-1].sum(axis=1))
        while cp_i < ncp and cps[cp_i] <= t0 + size:
            j = cps[cp_i] - t0 - 1
            rec_reward[cp_i] = cum_r[j]
            rec_exp[cp_i] = cum_e[j]
            rec_cost[cp_i] = cum_c[j]
            rec_queue[cp_i] = q_path[j + 1]
            rec_qsum[cp_i] = cum_q[j]
            cp_i += 1
        carry_reward, carry_exp, carry_cost, carry_qsum = cum_r[-1], cum_e[-1], cum_c[-1], cum_q[-1]
        queue = q_path[-1]
        if keep_per_slot:
            slots_kept["placement"].append(x_blk)
            slots_kept["reward"].append(r_blk)
            slots_kept["cost"].append(c_blk)
            slots_kept["queue"].append(q_path[:-1])
            slots_kept["counts"].append(np.asarray(counts_blk))
        t0 += size

    per_slot = {k: np.concatenate(v) for k, v in slots_kept.items()} if keep_per_slot else None
    return RunRecord(
        slots=cps,
        cum_reward=rec_reward,
        cum_expected_reward=rec_exp,
        cum_cost=rec_cost,
        queues=rec_queue,
        cum_queue_sum=rec_qsum,
        r_star=r_star_for(cfg),
        bounds=theoretical_bounds(cfg),
        config_hash=config_hash(cfg),
        seeds=cfg.seeds,
        wall_clock=time.perf_counter() - start,
        per_slot=per_slot,
    )


# --- sweeps ----------------------------------------------------------------

def derive_seeds(base: Seeds, index: int) -> Seeds:
    """Seeds for replicate ``index``; the same index gives the same demand
    trace at every sweep point."""

    def one(seed):
        return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint32)[0])

    return Seeds(one(base.demand), one(base.history), one(base.policy))


def parse_policy(text: str) -> PolicySpec:
    """``name[:estimator[:epsilon]]``, e.g. ``cphbl:greedy:0.1``."""
    parts = str(text).split(":")
    spec = PolicySpec(name=parts[0])
    if len(parts) > 1:
        spec = replace(spec, estimator=parts[1])
    if len(parts) > 2:
        spec = replace(spec, epsilon=Fraction(parts[2]))
    return spec


def parse_history(value, horizon: int) -> int:
    """History counts may be given relative to T: ``0.1T``, ``T``, ``TlogT``."""
    text = str(value).strip()
    if text.endswith("TlogT"):
        factor = float(text[:-5] or 1)
        return int(round(factor * horizon * math.log(horizon)))
    if text.endswith("T"):
        factor = float(text[:-1] or 1)
        return int(round(factor * horizon))
    return int(text)


def apply_axis(cfg: SystemConfig, axis: str, value) -> SystemConfig:
    if axis == "V":
        return replace(cfg, v_param=Fraction(str(value)))
    if axis == "T":
        return replace(cfg, horizon=int(value))
    if axis == "H_min":
        return cfg.with_history(parse_history(value, cfg.horizon))
    if axis == "b":
        return cfg.with_budget(str(value))
    if axis == "policy":
        return replace(cfg, policy=value if isinstance(value, PolicySpec) else parse_policy(value))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)
    records: list = field(default_factory=list)


def summary_row(cfg: SystemConfig, record: RunRecord, axis="", value="", seed_index=0) -> dict:
    reg_e, reg_r = compute_regret(record, record.r_star)
    cost = record.cost_avg[-1]
    budgets = cfg.budget_array
    return {
        "schema_version": SCHEMA_VERSION,
        "config_hash": record.config_hash,
        "axis": axis,
        "value": str(value),
        "seed_index": seed_index,
        "seed_demand": cfg.seeds.demand,
        "seed_history": cfg.seeds.history,
        "seed_policy": cfg.seeds.policy,
        "policy": cfg.policy.name,
        "estimator": cfg.policy.estimator,
        "epsilon": float(cfg.policy.epsilon),
        "v_param": cfg.v,
        "budget_total": float(budgets.sum()),
        "horizon": cfg.horizon,
        "h_min": cfg.h_min,
        "r_star": record.r_star,
        "total_reward_avg": float(record.reward_avg[-1]),
        "expected_reward_avg": float(record.expected_reward_avg[-1]),
        "regret_expected": float(reg_e[-1]),
        "regret_realized": float(reg_r[-1]),
        "total_cost_avg": float(cost.sum()),
        "max_cost_over_budget": float(np.max(cost / budgets)),
        "queue_sum_avg": float(record.queue_sum_avg[-1]),
        "bound_B": record.bounds.B,
        "bound_gamma": record.bounds.gamma,
        "bound_value": float(record.bound_series[-1]),
    }


def _run_one(args):
    cfg, stride, axis, value, index = args
    rec = run_simulation(cfg, checkpoint_stride=stride)
    return summary_row(cfg, rec, axis, value, index), rec


def sweep(cfg: SystemConfig, axis: str, values, seeds=20, checkpoint_stride: int = 1000,
          workers: int = 1, keep_records: bool = False) -> SweepResult:
    """One run per (value, replicate); replicate i uses the same seeds at every value.

    ``seeds`` is a replicate count or an explicit list of replicate indices.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    indices = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    jobs = []
    for value in values:
        point = apply_axis(cfg, axis, value)
        for i in indices:
            jobs.append((replace(point, seeds=derive_seeds(cfg.seeds, i)), checkpoint_stride, axis, value, i))
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    out = SweepResult()
    for row, rec in results:
        out.rows.append(row)
        if keep_records:
            out.records.append(rec)
    return out


# --- CSV -------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))  # shortest round-trip decimal
    return str(x)


def timeseries_columns(num_efs: int) -> list[str]:
    return (
        ["schema_version", "slot", "total_reward_avg", "expected_reward_avg", "regret_expected",
         "regret_realized", "queue_sum_avg", "bound"]
        + [f"cost_avg_efs_{n + 1}" for n in range(num_efs)]
        + [f"queue_{n + 1}" for n in range(num_efs)]
    )


def timeseries_rows(record: RunRecord) -> list[list]:
    reg_e, reg_r = compute_regret(record, record.r_star)
    bound = record.bound_series
    rows = []
    for i, t in enumerate(record.slots):
        rows.append(
            [SCHEMA_VERSION, int(t), record.reward_avg[i], record.expected_reward_avg[i], reg_e[i], reg_r[i],
             record.queue_sum_avg[i], bound[i]]
            + list(record.cost_avg[i])
            + list(record.queues[i])
        )
    return rows


def _write(path: Path, header: list[str], rows) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_csv(obj, path: str | Path) -> Path:
    """Write a RunRecord as a time-series CSV or a list of summary rows as a summary CSV."""
    path = Path(path)
    if isinstance(obj, RunRecord):
        _write(path, timeseries_columns(obj.cost_avg.shape[1]), timeseries_rows(obj))
    else:
        rows = list(obj.rows if isinstance(obj, SweepResult) else obj)
        header = list(rows[0]) if rows else list(SUMMARY_COLUMNS)
        _write(path, header, ([r[k] for k in header] for r in rows))
    return path


def read_csv(path: str | Path) -> list[dict]:
    """Parse an emitted CSV back into typed values (ints, floats, strings)."""

    def parse(v: str):
        for conv in (int, float):
            try:
                return conv(v)
            except ValueError:
                pass
        return v

    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


SUMMARY_COLUMNS = (
    "schema_version", "config_hash", "axis", "value", "seed_index", "seed_demand", "seed_history",
    "seed_policy", "policy", "estimator", "epsilon", "v_param", "budget_total", "horizon", "h_min",
    "r_star", "total_reward_avg", "expected_reward_avg", "regret_expected", "regret_realized",
    "total_cost_avg", "max_cost_over_budget", "queue_sum_avg", "bound_B", "bound_gamma", "bound_value",
)
