from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cphbl.control import set_cache_placement
from cphbl.oracle import (
    EnumerationTooLarge,
    LagrangianConvergenceError,
    enumerate_sets,
    lagrangian_mixture,
    lagrangian_r_star,
    optimal_mixture,
    r_star,
    upper_envelope,
)


def recursive_count(sizes, capacity):
    if not sizes:
        return 1
    head, rest = sizes[0], sizes[1:]
    total = recursive_count(rest, capacity)
    if head <= capacity:
        total += recursive_count(rest, capacity - head)
    return total


def test_pair_that_does_not_fit():
    cat = enumerate_sets([4, 4], 4, [3.0, 1.0], 1.0)
    assert sorted(cat.masks.tolist()) == [0, 1, 2]
    assert len(set(cat.masks.tolist())) == len(cat.masks)


def test_empty_catalog_holds_only_empty_set():
    cat = enumerate_sets([], 5, [], 1.0)
    assert cat.masks.tolist() == [0] and cat.costs.tolist() == [0] and cat.rewards.tolist() == [0]


def test_enumeration_guard():
    with pytest.raises(EnumerationTooLarge):
        enumerate_sets([1] * 23, 5, [1.0] * 23, 1.0)


def test_count_matches_recursive_enumerator():
    rng = np.random.default_rng(12)
    for _ in range(10):
        sizes = rng.integers(1, 9, 12).tolist()
        cap = int(rng.integers(0, 40))
        assert len(enumerate_sets(sizes, cap, np.ones(12), 1.0).masks) == recursive_count(sizes, cap)


def test_hand_instance_both_routes():
    cat = enumerate_sets([4, 4], 4, [3.0, 1.0], 1.0)
    mix = optimal_mixture(cat, 2.0)
    assert mix.value == 6.0
    probs = {tuple(row.tolist()): p for row, p in mix.support}
    assert probs == {(0, 0): 0.5, (1, 0): 0.5}
    lag = lagrangian_mixture([4, 4], 4, [3.0, 1.0], 1.0, 2.0)
    assert abs(lag.value - 6.0) <= 1e-9


def test_mixture_support_is_feasible_and_attains_value():
    rng = np.random.default_rng(5)
    sizes = rng.integers(1, 6, 10)
    d = rng.uniform(0, 3, 10)
    mix = optimal_mixture(enumerate_sets(sizes, 12, d, 1.0), 5.5)
    assert len(mix.support) <= 2 and abs(sum(p for _, p in mix.support) - 1) < 1e-12
    cost = sum(p * (row @ sizes) for row, p in mix.support)
    reward = sum(p * (row @ (sizes * d)) for row, p in mix.support)
    assert cost <= 5.5 + 1e-12 and abs(reward - mix.value) < 1e-9
    assert all(row @ sizes <= 12 for row, _ in mix.support)


def test_non_binding_budget_gives_knapsack_optimum():
    rng = np.random.default_rng(6)
    sizes = rng.integers(1, 6, 9)
    d = rng.uniform(0, 3, 9)
    row = set_cache_placement(d, 0.0, sizes, 10, 1.0, 1.0)
    best = float(row @ (sizes * d))
    assert abs(optimal_mixture(enumerate_sets(sizes, 10, d, 1.0), 10).value - best) < 1e-12
    assert abs(lagrangian_mixture(sizes, 10, d, 1.0, 50).value - best) < 1e-12


def test_zero_budget_gives_zero():
    assert optimal_mixture(enumerate_sets([1, 2], 3, [2.0, 1.0], 1.0), 0).value == 0
    assert lagrangian_mixture([1, 2], 3, [2.0, 1.0], 1.0, 0).value == 0


@pytest.mark.parametrize("budget,alpha", [(3.0, 1.0), (7.5, 1.0), (20.0, 1.0), (3.0, 0.5)])
def test_uniform_unit_catalog_closed_form(budget, alpha):
    d, cap = 1.7, 10
    expected = d * min(budget / alpha, cap)
    assert abs(optimal_mixture(enumerate_sets([1] * 14, cap, [d] * 14, alpha), budget).value - expected) < 1e-9
    assert abs(lagrangian_mixture([1] * 14, cap, [d] * 14, alpha, budget).value - expected) < 1e-9


def test_lagrangian_matches_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(200):
        sizes = rng.integers(1, 9, 12)
        cap = int(rng.integers(1, 40))
        d = rng.uniform(0, 5, 12)
        b = float(rng.uniform(0, cap))
        exact = optimal_mixture(enumerate_sets(sizes, cap, d, 1.0), b).value
        assert abs(lagrangian_mixture(sizes, cap, d, 1.0, b).value - exact) <= 1e-9


def test_lagrangian_reports_bracket_on_iteration_cap():
    with pytest.raises(LagrangianConvergenceError) as info:
        lagrangian_mixture([1, 2, 3, 5, 7], 12, [0.3, 1.1, 0.9, 2.2, 1.4], 1.0, 4.3, max_iter=0)
    assert len(info.value.bracket) == 2


def test_hull_is_concave():
    rng = np.random.default_rng(8)
    sizes = rng.integers(1, 8, 11)
    cat = enumerate_sets(sizes, 25, rng.uniform(0, 4, 11), 1.0)
    hull = upper_envelope(cat.costs, cat.rewards)
    c, r = cat.costs[hull], cat.rewards[hull]
    assert np.all(np.diff(c) > 0)
    slopes = np.diff(r) / np.diff(c)
    assert np.all(np.diff(slopes) <= 1e-12)
    assert r[-1] == cat.rewards.max()


@given(
    sizes=st.lists(st.integers(1, 6), min_size=1, max_size=9),
    seed=st.integers(0, 2**32 - 1),
    b1=st.floats(0, 30),
    b2=st.floats(0, 30),
)
@settings(max_examples=100, deadline=None)
def test_monotone_in_budget_and_demand(sizes, seed, b1, b2):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0, 3, len(sizes))
    cap = int(rng.integers(0, 20))
    lo, hi = sorted((b1, b2))
    cat = enumerate_sets(sizes, cap, d, 1.0)
    assert optimal_mixture(cat, lo).value <= optimal_mixture(cat, hi).value + 1e-12
    bumped = d.copy()
    bumped[int(rng.integers(len(sizes)))] += 0.5
    assert optimal_mixture(cat, lo).value <= optimal_mixture(enumerate_sets(sizes, cap, bumped, 1.0), lo).value + 1e-12


def test_r_star_is_sum_over_efs(small_cfg):
    total = r_star(small_cfg)
    assert abs(total - r_star(small_cfg, method="lagrangian")) < 1e-9
    assert abs(total - sum(lagrangian_r_star(small_cfg, n) for n in range(2))) < 1e-9


def test_r_star_evaluation_setting(eval_cfg):
    assert abs(r_star(eval_cfg) - 17.973024964115105) < 1e-9
    assert abs(r_star(eval_cfg, method="enumerate") - r_star(eval_cfg, method="lagrangian")) < 1e-9
    # a budget beyond alpha*M removes the coupling constraint
    loose = eval_cfg.with_budget(Fraction(100))
    assert r_star(loose) > r_star(eval_cfg)
    assert r_star(replace(eval_cfg, budget=(Fraction(0),) * 4)) == 0
