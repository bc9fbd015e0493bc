"""System configuration: schema, validation and YAML round-trip.

A config file is YAML with five fixed sections (``topology``, ``catalog``,
``cache``, ``learning``, ``run``); see ``docs/config.md``. Unknown keys are
rejected.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np
import yaml

POLICIES = ("cphbl", "mcucb", "lfu", "lru", "oracle", "null")
ESTIMATORS = ("hucb1", "ucbt", "greedy")


class ConfigError(ValueError):
    """Raised when a configuration violates one or more invariants.

    ``problems`` lists every failed check, not only the first.
    """

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


@dataclass(frozen=True)
class Seeds:
    demand: int = 1
    history: int = 2
    policy: int = 3

    @classmethod
    def from_master(cls, master: int, index: int = 0) -> "Seeds":
        """Derive three independent stream seeds from one master seed."""
        states = [
            np.random.SeedSequence([master, index, stream]).generate_state(1, np.uint32)[0]
            for stream in range(3)
        ]
        return cls(*(int(s) for s in states))


@dataclass(frozen=True)
class PolicySpec:
    name: str = "cphbl"
    estimator: str = "hucb1"
    epsilon: Fraction = Fraction(0)


@dataclass(frozen=True)
class SystemConfig:
    """Full experiment parameterization. EFS, user and file indices are 0-based."""

    num_efs: int
    num_users: int
    user_assignment: tuple[tuple[int, ...], ...]  # users served by each EFS
    file_sizes: tuple[int, ...]
    efs_capacity: tuple[int, ...]
    unit_storage_cost: Fraction
    budget: tuple[Fraction, ...]
    v_param: Fraction
    horizon: int
    history_counts: tuple[tuple[int, ...], ...]  # N x F
    zipf_skew: tuple[float, ...]  # per user
    seeds: Seeds = field(default_factory=Seeds)
    policy: PolicySpec = field(default_factory=PolicySpec)

    @property
    def num_files(self) -> int:
        return len(self.file_sizes)

    @property
    def users_per_efs(self) -> np.ndarray:
        return np.array([len(u) for u in self.user_assignment], dtype=np.int64)

    @property
    def efs_of_user(self) -> np.ndarray:
        owner = np.empty(self.num_users, dtype=np.int64)
        for n, users in enumerate(self.user_assignment):
            owner[list(users)] = n
        return owner

    @property
    def sizes_array(self) -> np.ndarray:
        return np.array(self.file_sizes, dtype=np.int64)

    @property
    def capacity_array(self) -> np.ndarray:
        return np.array(self.efs_capacity, dtype=np.int64)

    @property
    def budget_array(self) -> np.ndarray:
        return np.array([float(b) for b in self.budget])

    @property
    def alpha(self) -> float:
        return float(self.unit_storage_cost)

    @property
    def v(self) -> float:
        return float(self.v_param)

    @property
    def history_array(self) -> np.ndarray:
        return np.array(self.history_counts, dtype=np.int64).reshape(self.num_efs, self.num_files)

    @property
    def h_min(self) -> int:
        return int(self.history_array.min()) if self.num_files else 0

    def with_history(self, count: int) -> "SystemConfig":
        row = (int(count),) * self.num_files
        return replace(self, history_counts=(row,) * self.num_efs)

    def with_budget(self, b) -> "SystemConfig":
        return replace(self, budget=(_rational(b, "budget"),) * self.num_efs)


def _rational(value: Any, name: str) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ConfigError([f"{name}: expected a number, got {value!r}"])
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, (float, str)):
        try:
            # str() keeps the decimal the user wrote (0.1 -> 1/10)
            return Fraction(str(value).strip())
        except (ValueError, ZeroDivisionError):
            pass
    raise ConfigError([f"{name}: cannot parse {value!r} as a rational"])


def _format_rational(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def validate_config(cfg: SystemConfig) -> SystemConfig:
    """Return ``cfg`` unchanged if every invariant holds, else raise ConfigError."""
    problems: list[str] = []

    def is_int(x) -> bool:
        return isinstance(x, (int, np.integer)) and not isinstance(x, bool)

    if not is_int(cfg.num_efs) or cfg.num_efs < 1:
        problems.append("num_efs must be a positive integer")
    if not is_int(cfg.num_users) or cfg.num_users < 1:
        problems.append("num_users must be a positive integer")
    if not is_int(cfg.horizon) or cfg.horizon < 1:
        problems.append("horizon must be a positive integer")

    # partition of users
    if len(cfg.user_assignment) != cfg.num_efs:
        problems.append(f"user_assignment must have one user list per EFS ({cfg.num_efs})")
    seen: dict[int, int] = {}
    overlap = set()
    for n, users in enumerate(cfg.user_assignment):
        for k in users:
            if not is_int(k) or not 0 <= k < cfg.num_users:
                problems.append(f"user_assignment[{n}] contains invalid user {k!r}")
                continue
            if k in seen:
                overlap.add(k)
            seen[k] = n
    if overlap:
        problems.append(f"user sets must be disjoint (users {sorted(overlap)} assigned more than once)")
    missing = sorted(set(range(cfg.num_users if is_int(cfg.num_users) else 0)) - set(seen))
    if missing:
        problems.append(f"every user must be served by an EFS (unassigned: {missing})")

    # catalog and capacities
    if not cfg.file_sizes:
        problems.append("file_sizes must not be empty")
    for f, size in enumerate(cfg.file_sizes):
        if not is_int(size) or size < 1:
            problems.append(f"file_sizes[{f}] must be an integer >= 1, got {size!r}")
    if len(cfg.efs_capacity) != cfg.num_efs:
        problems.append("efs_capacity must have one entry per EFS")
    catalog = sum(s for s in cfg.file_sizes if is_int(s))
    for n, cap in enumerate(cfg.efs_capacity):
        if not is_int(cap) or cap < 1:
            problems.append(f"efs_capacity[{n}] must be an integer >= 1, got {cap!r}")
        elif cap >= catalog:
            problems.append(
                f"efs_capacity[{n}]={cap}: capacity must be strictly less than catalog size ({catalog})"
            )

    if cfg.unit_storage_cost <= 0:
        problems.append("unit_storage_cost must be positive")
    if cfg.v_param <= 0:
        problems.append("v_param must be positive")
    if len(cfg.budget) != cfg.num_efs:
        problems.append("budget must have one entry per EFS")
    for n, b in enumerate(cfg.budget):
        if b <= 0:
            problems.append(f"budget[{n}] must be positive")

    if len(cfg.history_counts) != cfg.num_efs or any(
        len(row) != len(cfg.file_sizes) for row in cfg.history_counts
    ):
        problems.append("history_counts must be an N x F matrix")
    elif any(not is_int(h) or h < 0 for row in cfg.history_counts for h in row):
        problems.append("history_counts entries must be non-negative integers")

    if len(cfg.zipf_skew) != cfg.num_users:
        problems.append("zipf_skew must have one entry per user")
    elif any(not np.isfinite(s) or s < 0 for s in cfg.zipf_skew):
        problems.append("zipf_skew entries must be finite and >= 0")

    p = cfg.policy
    if p.name not in POLICIES:
        problems.append(f"policy.name must be one of {POLICIES}, got {p.name!r}")
    if p.estimator not in ESTIMATORS:
        problems.append(f"policy.estimator must be one of {ESTIMATORS}, got {p.estimator!r}")
    if not 0 <= p.epsilon <= 1:
        problems.append("policy.epsilon must lie in [0, 1]")

    if problems:
        raise ConfigError(problems)

    for n, (b, cap) in enumerate(zip(cfg.budget, cfg.efs_capacity)):
        if b >= cfg.unit_storage_cost * cap:
            warnings.warn(
                f"budget[{n}]={_format_rational(b)} >= alpha*M_n: storage budget is non-binding",
                stacklevel=2,
            )
    return cfg


# --- YAML round-trip -------------------------------------------------------

_SCHEMA = {
    "topology": {"num_efs", "num_users", "efs_users"},
    "catalog": {"file_sizes", "zipf_skew"},
    "cache": {"capacity", "unit_storage_cost", "budget"},
    "learning": {"v_param", "history_counts"},
    "run": {"horizon", "seeds", "policy"},
}
_SEED_KEYS = {"demand", "history", "policy"}
_POLICY_KEYS = {"name", "estimator", "epsilon"}


def config_to_dict(cfg: SystemConfig) -> dict:
    hist = cfg.history_counts
    flat = {h for row in hist for h in row}
    return {
        "topology": {
            "num_efs": cfg.num_efs,
            "num_users": cfg.num_users,
            "efs_users": [list(u) for u in cfg.user_assignment],
        },
        "catalog": {
            "file_sizes": list(cfg.file_sizes),
            "zipf_skew": [float(s) for s in cfg.zipf_skew],
        },
        "cache": {
            "capacity": list(cfg.efs_capacity),
            "unit_storage_cost": _format_rational(cfg.unit_storage_cost),
            "budget": [_format_rational(b) for b in cfg.budget],
        },
        "learning": {
            "v_param": _format_rational(cfg.v_param),
            "history_counts": flat.pop() if len(flat) == 1 else [list(r) for r in hist],
        },
        "run": {
            "horizon": cfg.horizon,
            "seeds": {"demand": cfg.seeds.demand, "history": cfg.seeds.history, "policy": cfg.seeds.policy},
            "policy": {
                "name": cfg.policy.name,
                "estimator": cfg.policy.estimator,
                "epsilon": _format_rational(cfg.policy.epsilon),
            },
        },
    }


def _per_efs(value, n: int, name: str, conv) -> tuple:
    if isinstance(value, list):
        return tuple(conv(v, f"{name}[{i}]") for i, v in enumerate(value))
    return (conv(value, name),) * n


def config_from_dict(data: dict) -> SystemConfig:
    """Build (and validate) a config from parsed YAML."""
    problems = []
    if not isinstance(data, dict):
        raise ConfigError(["config root must be a mapping"])
    for key in data:
        if key not in _SCHEMA:
            problems.append(f"unknown section {key!r}")
    for section, keys in _SCHEMA.items():
        body = data.get(section)
        if not isinstance(body, dict):
            problems.append(f"missing section {section!r}")
            continue
        for key in body:
            if key not in keys:
                problems.append(f"unknown key {section}.{key}")
        for key in keys - set(body):
            if not (section == "run" and key in ("seeds", "policy")):
                problems.append(f"missing key {section}.{key}")
    run = data.get("run") or {}
    seeds = run.get("seeds") or {}
    policy = run.get("policy") or {}
    problems += [f"unknown key run.seeds.{k}" for k in seeds if k not in _SEED_KEYS]
    problems += [f"unknown key run.policy.{k}" for k in policy if k not in _POLICY_KEYS]
    if problems:
        raise ConfigError(problems)

    def as_int(v, name):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError([f"{name}: expected an integer, got {v!r}"])
        return v

    topo, cat, cache, learn = data["topology"], data["catalog"], data["cache"], data["learning"]
    n = as_int(topo["num_efs"], "topology.num_efs")
    sizes = tuple(as_int(s, f"catalog.file_sizes[{i}]") for i, s in enumerate(cat["file_sizes"]))
    hist = learn["history_counts"]
    if isinstance(hist, list):
        hist_rows = tuple(tuple(as_int(h, "learning.history_counts") for h in row) for row in hist)
    else:
        hist_rows = ((as_int(hist, "learning.history_counts"),) * len(sizes),) * n

    cfg = SystemConfig(
        num_efs=n,
        num_users=as_int(topo["num_users"], "topology.num_users"),
        user_assignment=tuple(tuple(u) for u in topo["efs_users"]),
        file_sizes=sizes,
        efs_capacity=_per_efs(cache["capacity"], n, "cache.capacity", as_int),
        unit_storage_cost=_rational(cache["unit_storage_cost"], "cache.unit_storage_cost"),
        budget=_per_efs(cache["budget"], n, "cache.budget", _rational),
        v_param=_rational(learn["v_param"], "learning.v_param"),
        horizon=as_int(run["horizon"], "run.horizon"),
        history_counts=hist_rows,
        zipf_skew=tuple(float(s) for s in cat["zipf_skew"]),
        seeds=Seeds(**{k: as_int(v, f"run.seeds.{k}") for k, v in seeds.items()}),
        policy=PolicySpec(
            name=policy.get("name", "cphbl"),
            estimator=policy.get("estimator", "hucb1"),
            epsilon=_rational(policy.get("epsilon", 0), "run.policy.epsilon"),
        ),
    )
    return validate_config(cfg)


def dump_config(cfg: SystemConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=None, width=100)


def load_config(path: str | Path) -> SystemConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(yaml.safe_load(fh))


def parse_config(text: str) -> SystemConfig:
    return config_from_dict(yaml.safe_load(text))


def config_hash(cfg: SystemConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:16]


def evaluation_config(
    *,
    v_param=50,
    budget=8,
    horizon: int = 200_000,
    history: int = 1000,
    scenario_seed: int = 2022,
    seeds: Seeds | None = None,
    policy: PolicySpec | None = None,
) -> SystemConfig:
    """The simulation setting of the evaluation section at desk scale.

    N=4 EFSs, K=20 users (5 per EFS), F=20 files with sizes cycling through
    1, 2, 4, 8 units, M_n=16, alpha=1. Per-user Zipf skews are drawn once from
    [0.56, 1.2] using ``scenario_seed`` and rounded to two decimals.
    """
    rng = np.random.default_rng(scenario_seed)
    num_efs, num_users, num_files = 4, 20, 20
    order = rng.permutation(num_users)
    assignment = tuple(tuple(sorted(int(k) for k in order[n::num_efs])) for n in range(num_efs))
    skews = tuple(round(float(s), 2) for s in rng.uniform(0.56, 1.2, size=num_users))
    cfg = SystemConfig(
        num_efs=num_efs,
        num_users=num_users,
        user_assignment=assignment,
        file_sizes=tuple([1, 2, 4, 8][f % 4] for f in range(num_files)),
        efs_capacity=(16,) * num_efs,
        unit_storage_cost=Fraction(1),
        budget=(_rational(budget, "budget"),) * num_efs,
        v_param=_rational(v_param, "v_param"),
        horizon=horizon,
        history_counts=((history,) * num_files,) * num_efs,
        zipf_skew=skews,
        seeds=seeds or Seeds(),
        policy=policy or PolicySpec(),
    )
    return validate_config(cfg)
