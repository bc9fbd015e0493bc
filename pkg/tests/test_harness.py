from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from cphbl.config import ConfigError, PolicySpec
from cphbl.demand import DemandSampler, PopularityModel, TraceDemandSource
from cphbl.harness import (
    SUMMARY_COLUMNS,
    InvariantViolation,
    RunRecord,
    apply_axis,
    checkpoint_slots,
    compute_regret,
    derive_seeds,
    emit_csv,
    parse_history,
    parse_policy,
    read_csv,
    run_simulation,
    sweep,
    theoretical_bounds,
    timeseries_columns,
)
from cphbl.policies import Policy

GOLDEN = Path(__file__).parent / "golden" / "timeseries_small.csv"


def test_bound_constants_evaluation_setting(eval_cfg):
    rep = theoretical_bounds(eval_cfg)
    assert rep.B == 640
    assert rep.sum_km == 4 * 5 * 16
    assert abs(rep.gamma - 2 * 4 * 5 * np.sqrt(6 * 16 * 75)) < 1e-9
    assert rep.queue_numerator == 640 + 50 * 2 * 320
    assert np.all(np.isfinite([rep.B, rep.gamma, rep.bound(10**5)]))


def test_bound_limits(eval_cfg):
    rep = theoretical_bounds(eval_cfg)
    t = 10_000
    limit = rep.B / rep.v + 4 * rep.sum_km / t
    assert abs(rep.bound(t, h_min=1e30) - limit) < 1e-9
    assert rep.bound(t, h_min=10**6) < rep.bound(t, h_min=0)
    # only the B/V term depends on V, so doubling V removes half of it
    assert abs((rep.bound(t, v=40) - rep.bound(t, v=80)) - rep.B / 80) < 1e-12


def test_checkpoints_include_horizon():
    assert checkpoint_slots(2500, 1000).tolist() == [1000, 2000, 2500]
    assert checkpoint_slots(3000, 1000).tolist() == [1000, 2000, 3000]
    assert checkpoint_slots(7, 0).tolist() == [7]


def test_zero_horizon_rejected(small_cfg):
    with pytest.raises(ConfigError):
        run_simulation(replace(small_cfg, horizon=0))


def test_null_policy_regret_equals_r_star(small_cfg):
    cfg = replace(small_cfg, policy=PolicySpec(name="null"))
    a = run_simulation(cfg, checkpoint_stride=100)
    b = run_simulation(replace(cfg, seeds=replace(cfg.seeds, demand=999)), checkpoint_stride=100)
    assert np.all(a.regret == a.r_star) and np.all(a.cost_avg == 0)
    assert np.array_equal(a.regret, b.regret)


def test_oracle_policy_regret_vanishes(small_cfg):
    cfg = replace(small_cfg, policy=PolicySpec(name="oracle"), horizon=40_000)
    rec = run_simulation(cfg, checkpoint_stride=10_000)
    # expected reward of a mixture draw is at most K*max(L) per EFS
    scale = float(np.sum(small_cfg.users_per_efs)) * max(small_cfg.file_sizes)
    assert abs(rec.regret[-1]) <= 4 * scale / np.sqrt(cfg.horizon)
    assert np.all(rec.cost_avg[-1] <= small_cfg.budget_array * 1.05)


def test_expected_and_realized_regret_agree(eval_cfg):
    cfg = replace(eval_cfg, horizon=100_000)
    rec = run_simulation(cfg, checkpoint_stride=cfg.horizon, keep_per_slot=True)
    ps = rec.per_slot
    ld = cfg.sizes_array * PopularityModel.from_config(cfg).mean_demand
    diff = ps["reward"].sum(axis=1) - np.einsum("tnf,nf->t", ps["placement"], ld)
    se = diff.std(ddof=1) / np.sqrt(len(diff))
    reg_e, reg_r = compute_regret(rec, rec.r_star)
    assert abs(reg_e[-1] - reg_r[-1]) <= 3 * se


def test_running_averages_recompute(small_cfg):
    rec = run_simulation(small_cfg, checkpoint_stride=250, keep_per_slot=True)
    ps = rec.per_slot
    for i, t in enumerate(rec.slots):
        assert abs(rec.reward_avg[i] - ps["reward"][:t].sum() / t) < 1e-9
        assert np.allclose(rec.cost_avg[i], ps["cost"][:t].mean(axis=0), rtol=0, atol=1e-9)
        assert abs(rec.queue_sum_avg[i] - ps["queue"][:t].sum() / t) < 1e-9
    assert np.all(ps["queue"] >= 0)
    increments = np.diff(ps["queue"], axis=0)
    assert np.all(increments <= ps["cost"][:-1] + 1e-12)
    assert np.all(ps["cost"] <= small_cfg.alpha * small_cfg.capacity_array)


def test_fast_and_slow_paths_agree(small_cfg):
    a = run_simulation(small_cfg, checkpoint_stride=300)
    b = run_simulation(small_cfg, checkpoint_stride=300, fast=False)
    for name in ("cum_reward", "cum_expected_reward", "cum_cost", "queues", "cum_queue_sum"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_trace_replay_matches_sampled_run(small_cfg):
    model = PopularityModel.from_config(small_cfg)
    counts, _ = DemandSampler(model, small_cfg.seeds.demand).block(small_cfg.horizon)
    a = run_simulation(small_cfg, checkpoint_stride=500)
    b = run_simulation(small_cfg, checkpoint_stride=500,
                       demand_source=TraceDemandSource(counts, model.efs_of_user))
    assert np.array_equal(a.cum_reward, b.cum_reward)


def test_capacity_violation_is_reported(small_cfg):
    class Hoarder(Policy):
        def decide(self, t):
            self.placement = np.ones_like(self.placement)
            return self.placement

    with pytest.raises(InvariantViolation) as info:
        run_simulation(small_cfg, policy=Hoarder(small_cfg))
    assert info.value.slot == 0


def test_regret_stays_under_bound(small_cfg):
    rec = run_simulation(small_cfg, checkpoint_stride=100)
    assert np.all(rec.regret <= rec.bound_series)


def test_csv_header_and_round_trip(tmp_path, small_cfg):
    rec = run_simulation(small_cfg, checkpoint_stride=1000)
    path = emit_csv(rec, tmp_path / "ts.csv")
    assert path.read_text().splitlines()[0].split(",") == timeseries_columns(2)
    rows = read_csv(path)
    assert [r["slot"] for r in rows] == rec.slots.tolist()
    assert [r["regret_expected"] for r in rows] == rec.regret.tolist()
    assert [r["queue_2"] for r in rows] == rec.queues[:, 1].tolist()


def test_golden_time_series(tmp_path, small_cfg):
    path = emit_csv(run_simulation(small_cfg, checkpoint_stride=500), tmp_path / "ts.csv")
    assert path.read_bytes() == GOLDEN.read_bytes()


def test_same_seed_gives_identical_csv(tmp_path, small_cfg):
    a = emit_csv(run_simulation(small_cfg), tmp_path / "a.csv")
    b = emit_csv(run_simulation(small_cfg), tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()


def test_empty_sweep(tmp_path, small_cfg):
    result = sweep(small_cfg, "V", [], seeds=3)
    assert result.rows == []
    path = emit_csv(result, tmp_path / "s.csv")
    assert path.read_text().strip() == ",".join(SUMMARY_COLUMNS)


def test_sweep_rows_and_pairing(tmp_path, small_cfg):
    cfg = replace(small_cfg, horizon=500)
    result = sweep(cfg, "V", ["10", "40"], seeds=2, keep_records=True)
    assert [(r["value"], r["seed_index"]) for r in result.rows] == [("10", 0), ("10", 1), ("40", 0), ("40", 1)]
    assert result.rows[0]["seed_demand"] == result.rows[2]["seed_demand"]
    assert result.rows[0]["seed_demand"] != result.rows[1]["seed_demand"]
    assert list(result.rows[0]) == list(SUMMARY_COLUMNS)
    parsed = read_csv(emit_csv(result, tmp_path / "s.csv"))
    assert parsed[3]["regret_expected"] == result.rows[3]["regret_expected"]
    again = sweep(cfg, "V", ["10", "40"], seeds=2)
    assert again.rows == result.rows


def test_sweep_rejects_unknown_axis(small_cfg):
    with pytest.raises(ValueError):
        sweep(small_cfg, "alpha", [1])


def test_axis_helpers(small_cfg):
    assert parse_history("0.1T", 1000) == 100 and parse_history("T", 1000) == 1000
    assert parse_history("TlogT", 100) == round(100 * np.log(100)) and parse_history("7", 10) == 7
    assert parse_policy("cphbl:greedy:0.1") == PolicySpec("cphbl", "greedy", Fraction(1, 10))
    assert apply_axis(small_cfg, "V", "30").v == 30
    assert apply_axis(small_cfg, "H_min", "T").h_min == small_cfg.horizon
    assert np.all(apply_axis(small_cfg, "b", "2").budget_array == 2)
    assert apply_axis(small_cfg, "policy", "lru").policy.name == "lru"
    assert derive_seeds(small_cfg.seeds, 0) != derive_seeds(small_cfg.seeds, 1)


def test_record_is_run_record(small_cfg):
    assert isinstance(run_simulation(replace(small_cfg, horizon=5)), RunRecord)
