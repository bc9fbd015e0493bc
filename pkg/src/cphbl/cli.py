"""Command line entry point: ``cphbl run | sweep | oracle | verify``.

Exit codes: 0 success, 1 validation error, 2 runtime invariant violation,
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, Seeds, dump_config, load_config, evaluation_config
from .control import PlacementConsistencyError
from .harness import (
    SWEEP_AXES,
    InvariantViolation,
    emit_csv,
    r_star_for,
    run_simulation,
    summary_row,
    sweep,
    theoretical_bounds,
)

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("cphbl")


def _load(args):
    if args.config:
        return load_config(args.config)
    return evaluation_config()


def cmd_run(args) -> int:
    cfg = _load(args)
    if args.seed is not None:
        cfg = replace(cfg, seeds=Seeds.from_master(args.seed))
    if args.horizon is not None:
        cfg = replace(cfg, horizon=args.horizon)
    record = run_simulation(cfg, checkpoint_stride=args.checkpoint_stride)
    out = Path(args.out_dir)
    emit_csv(record, out / "timeseries.csv")
    emit_csv([summary_row(cfg, record)], out / "summary.csv")
    (out / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")
    # wall clock lives outside the CSVs so those stay byte-stable
    (out / "run_meta.json").write_text(
        json.dumps({"config_hash": record.config_hash, "wall_clock_s": record.wall_clock}, indent=2) + "\n",
        encoding="utf-8",
    )
    log.info("run finished in %.2fs, regret %.4f", record.wall_clock, record.regret[-1])
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.horizon is not None:
        cfg = replace(cfg, horizon=args.horizon)
    values = [v for v in args.values.split(",") if v.strip()]
    result = sweep(cfg, args.axis, values, seeds=args.seeds, checkpoint_stride=args.checkpoint_stride,
                   workers=args.workers)
    path = emit_csv(result, Path(args.out_dir) / f"sweep_{args.axis}.csv")
    log.info("wrote %d rows to %s", len(result.rows), path)
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _load(args)
    report = theoretical_bounds(cfg)
    payload = {
        "r_star": r_star_for(cfg),
        "B": report.B,
        "gamma": report.gamma,
        "queue_bound_numerator": report.queue_numerator,
        "regret_bound": float(report.bound(cfg.horizon)),
        "horizon": cfg.horizon,
        "v_param": cfg.v,
        "h_min": cfg.h_min,
    }
    print(json.dumps(payload, indent=2))
    return EXIT_OK


def cmd_verify(args) -> int:
    """Randomized checks of the knapsack solver and the two R* routes."""
    from itertools import product

    from .control import set_cache_placement
    from .oracle import enumerate_sets, lagrangian_mixture, optimal_mixture

    rng = np.random.default_rng(args.seed)
    failures = 0
    for _ in range(args.instances):
        num_files = int(rng.integers(1, 13))
        sizes = rng.integers(1, 9, num_files)
        cap = int(rng.integers(0, 31))
        est = rng.uniform(0, 5, num_files)
        row = set_cache_placement(est, 0.0, sizes, cap, 1.0, 1.0)
        best = max(
            sum(w * s * e for w, s, e in zip(bits, sizes, est))
            for bits in product((0, 1), repeat=num_files)
            if sum(b * s for b, s in zip(bits, sizes)) <= cap
        )
        got = float(np.sum(sizes * est * row))
        if abs(got - best) > 1e-9 * max(1.0, best):
            failures += 1
        if cap == 0:
            continue
        budget = float(rng.uniform(0, cap))
        a = optimal_mixture(enumerate_sets(sizes, cap, est, 1.0), budget).value
        b = lagrangian_mixture(sizes, cap, est, 1.0, budget).value
        if abs(a - b) > 1e-9:
            failures += 1
    print(f"verify: {args.instances} instances, {failures} failures")
    return EXIT_OK if failures == 0 else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cphbl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config (default: built-in evaluation setting)")

    p = sub.add_parser("run", help="simulate one configuration")
    common(p)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--seed", type=int, help="master seed overriding the config's stream seeds")
    p.add_argument("--horizon", type=int)
    p.add_argument("--checkpoint-stride", type=int, default=1000)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter sweep")
    common(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma separated, e.g. 10,20,30 or 0,0.1T,T")
    p.add_argument("--seeds", type=int, default=20, help="replicates per value")
    p.add_argument("--horizon", type=int)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--checkpoint-stride", type=int, default=1000)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="print R* and the theoretical bounds")
    common(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("verify", help="randomized knapsack and oracle cross-checks")
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantViolation, PlacementConsistencyError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
