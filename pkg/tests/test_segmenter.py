from __future__ import annotations

import time

import numpy as np
import pytest
from oracles import constrained_optimum, outcomes, penalized_optimum

from conftest import random_table
from correctsched.costmodel import CostModel
from correctsched.segmenter import (
    BracketError,
    Mode,
    Segment,
    Segmentation,
    SpanTable,
    bracket_lambda,
    brute_force_segmentation,
    optimize_segmentation,
    penalized_score,
    segment_dp,
    segment_transcript,
)
from correctsched.utility import UtilityModel

TOL = 1e-9


def check_tiling(seg: Segmentation, n: int, r: int):
    assert seg.boundaries[:1] in ((), (0,))
    if n:
        assert seg.boundaries[0] == 0 and seg.boundaries[-1] == n
    for s in seg.segments:
        if s.mode is Mode.VERIFY:
            assert len(s) <= r
        else:
            assert s.predicted_cost_s == 0 and s.predicted_utility == 0
    assert seg.total_utility == pytest.approx(sum(s.predicted_utility for s in seg.segments))
    assert seg.total_cost_s == pytest.approx(sum(s.predicted_cost_s for s in seg.segments))


def test_penalized_score():
    tab = SpanTable.from_arrays([[3.0]], [[10.0]])
    assert penalized_score(tab, 0, 1, "verify", 0.1) == pytest.approx(2.0)
    assert penalized_score(tab, 0, 1, Mode.SKIP, 0.1) == 0.0
    assert penalized_score(tab, 0, 1, Mode.VERIFY, 0.0) == 3.0


def test_zero_utility_gives_all_skip():
    tab = SpanTable.from_word_utilities(np.zeros(9), 3)
    seg = segment_dp(tab, 0.5)
    assert [s.mode for s in seg.segments] == [Mode.SKIP]
    assert seg.stats["score"] == 0.0


def test_lambda_zero_verifies_everything_in_longest_pieces():
    tab = SpanTable.from_word_utilities(np.full(10, 0.3), 4)
    seg = segment_dp(tab, 0.0)
    assert all(s.mode is Mode.VERIFY for s in seg.segments)
    assert seg.total_utility == pytest.approx(3.0)
    assert [len(s) for s in seg.segments] == [4, 4, 2]


def test_empty_span():
    tab = SpanTable.from_word_utilities(np.zeros(0), 3)
    seg = segment_dp(tab, 1.0)
    assert seg.segments == () and seg.total_utility == 0 and seg.total_cost_s == 0
    assert optimize_segmentation(tab, 10.0).segments == ()


def test_dp_matches_exhaustive_penalized_optimum():
    rng = np.random.default_rng(0)
    for k in range(150):
        n, r = int(rng.integers(1, 13)), int(rng.integers(1, 5))
        tab, u, c = random_table(rng, n, r, additive=k % 2 == 0)
        lam = float(rng.choice([0.0, 0.01, 0.05, 0.1, 0.3, 1.0]))
        seg = segment_dp(tab, lam)
        check_tiling(seg, n, r)
        assert seg.total_utility - lam * seg.total_cost_s == pytest.approx(penalized_optimum(u, c, n, r, lam), abs=1e-9)


def test_optimize_trivial_budgets():
    rng = np.random.default_rng(1)
    tab, u, c = random_table(rng, 10, 3, additive=True)
    zero = optimize_segmentation(tab, 0.0)
    assert zero.total_utility == 0 and zero.total_cost_s == 0
    assert all(s.mode is Mode.SKIP for s in zero.segments)
    full = segment_dp(tab, 0.0)
    big = optimize_segmentation(tab, full.total_cost_s + 1)
    assert big.total_utility == pytest.approx(full.total_utility)


def test_optimize_within_band_and_feasible():
    rng = np.random.default_rng(2)
    for k in range(60):
        n, r = int(rng.integers(2, 13)), int(rng.integers(1, 5))
        tab, u, c = random_table(rng, n, r, additive=k % 3 == 0)
        budget = float(rng.uniform(0.1, 0.9)) * segment_dp(tab, 0.0).total_cost_s
        seg = optimize_segmentation(tab, budget)
        check_tiling(seg, n, r)
        assert seg.total_cost_s <= budget + TOL
        assert seg.total_utility * 1.01 >= constrained_optimum(u, c, n, r, budget) - TOL


def test_brute_force_agrees_with_oracle():
    rng = np.random.default_rng(3)
    for _ in range(40):
        n, r = int(rng.integers(1, 11)), int(rng.integers(1, 4))
        tab, u, c = random_table(rng, n, r)
        budget = float(rng.uniform(0, 1)) * sum(c[i][0] for i in range(n))
        seg = brute_force_segmentation(tab, budget)
        assert seg.total_cost_s <= budget + TOL
        assert seg.total_utility == pytest.approx(constrained_optimum(u, c, n, r, budget))


def test_brute_force_examples_and_cap():
    tab = SpanTable.from_arrays([[1.0]], [[3.0]])
    seg = brute_force_segmentation(tab, 3.0)
    assert [s.mode for s in seg.segments] == [Mode.VERIFY] and seg.total_utility == 1.0
    assert brute_force_segmentation(tab, 0.0).total_utility == 0.0
    with pytest.raises(ValueError):
        brute_force_segmentation(SpanTable.from_word_utilities(np.ones(17), 2), 5.0)


def test_brute_force_lambda_consistency():
    # at the final penalty the DP solution must be a penalized optimum among all outcomes
    rng = np.random.default_rng(4)
    for _ in range(30):
        n, r = int(rng.integers(3, 11)), int(rng.integers(1, 4))
        tab, u, c = random_table(rng, n, r)
        budget = 0.4 * segment_dp(tab, 0.0).total_cost_s
        seg = optimize_segmentation(tab, budget)
        exact = brute_force_segmentation(tab, budget)
        assert exact.total_utility >= seg.total_utility - TOL
        lam = seg.stats.get("lam")
        if lam is not None:
            dp = segment_dp(tab, lam)
            best = max(uu - lam * cc for uu, cc, _ in outcomes(u, c, n, r))
            assert dp.total_utility - lam * dp.total_cost_s == pytest.approx(best, rel=1e-8, abs=1e-8)


def test_bracket_directions():
    tab = SpanTable.from_word_utilities(np.full(12, 0.5), 3)
    full_cost = segment_dp(tab, 0.0).total_cost_s
    st = bracket_lambda(tab, 0.5 * full_cost)
    assert st.lower.total_cost_s <= 0.5 * full_cost < st.upper.total_cost_s
    assert st.lambda_lower > st.lambda_upper
    assert st.lower.total_utility <= st.upper.total_utility
    # lambda = 1 is feasible here (utility below cost everywhere), so the upper side is found by division
    assert segment_dp(tab, 1.0).total_cost_s <= 0.5 * full_cost
    assert st.lambda_lower == 1.0 and st.lambda_upper == pytest.approx(0.1)
    # a rich instance where lambda = 1 is over budget: the feasible side is found by multiplication
    rich = SpanTable.from_word_utilities(np.full(12, 50.0), 3)
    st = bracket_lambda(rich, 10.0)
    assert st.lambda_upper >= 1.0 and st.lambda_lower == pytest.approx(10 * st.lambda_upper)
    assert st.lower.total_cost_s <= 10.0 < st.upper.total_cost_s


def test_bracketing_terminates_quickly_on_random_instances():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n, r = int(rng.integers(2, 13)), int(rng.integers(1, 5))
        tab, *_ = random_table(rng, n, r)
        cost = segment_dp(tab, 0.0).total_cost_s
        budget = float(rng.uniform(0.05, 0.95)) * cost
        if segment_dp(tab, 1e12).total_cost_s > budget:
            continue
        if min(np.nanmin(tab.cost[:, :1]), np.inf) > budget:
            continue
        st = bracket_lambda(tab, budget)
        assert st.scalings <= 20


def test_bracket_error_on_pathological_cap():
    tab = SpanTable.from_word_utilities(np.full(6, 1.0), 2)
    with pytest.raises(BracketError):
        bracket_lambda(tab, 7.0, lam0=1e-30, max_scalings=2)


def test_lambda_monotonicity_and_bisection_iterations():
    rng = np.random.default_rng(6)
    for _ in range(30):
        n = int(rng.integers(50, 400))
        tab = SpanTable.from_word_utilities(rng.beta(1, 3, n), 20)
        lams = np.geomspace(1e-3, 10, 25)
        segs = [segment_dp(tab, lam) for lam in lams]
        for a, b in zip(segs, segs[1:]):
            assert b.total_cost_s <= a.total_cost_s + 1e-9
            assert b.total_utility <= a.total_utility + 1e-9
        seg = optimize_segmentation(tab, 0.3 * segs[0].total_cost_s)
        assert seg.stats.get("iterations", 0) <= 60


def test_segment_dict_round_trip():
    tab = SpanTable.from_word_utilities(np.linspace(0, 1, 15), 4)
    seg = optimize_segmentation(tab, 20.0)
    again = Segmentation.from_dict(seg.to_dict())
    assert again.segments == seg.segments
    assert again.total_cost_s == pytest.approx(seg.total_cost_s)
    with pytest.raises(ValueError):
        Segment(3, 3, Mode.SKIP, 0, 0)


def test_transcript_offsets_are_absolute(small_corpus):
    seg = segment_transcript(small_corpus, CostModel.fit(()), UtilityModel(), 60.0, start=100, stop=300)
    assert seg.boundaries[0] == 100 and seg.boundaries[-1] == 300
    assert seg.total_cost_s <= 60.0 + TOL


def test_linear_scaling_of_the_kernel():
    rng = np.random.default_rng(8)
    times = {}
    for n in (20000, 80000):
        tab = SpanTable.from_word_utilities(rng.beta(1, 3, n), 20)
        segment_dp(tab, 0.1)
        best = np.inf
        for _ in range(3):
            t0 = time.perf_counter()
            segment_dp(tab, 0.1)
            best = min(best, time.perf_counter() - t0)
        times[n] = best
    assert times[80000] / times[20000] < 4 * 1.6


def test_halving_max_len_roughly_halves_optimize_time():
    rng = np.random.default_rng(9)
    u = rng.beta(1, 3, 100000)
    t = {}
    for r in (10, 20):
        tab = SpanTable.from_word_utilities(u, r)
        budget = 0.3 * segment_dp(tab, 0.0).total_cost_s
        best = np.inf
        for _ in range(3):
            t0 = time.perf_counter()
            optimize_segmentation(tab, budget)
            best = min(best, time.perf_counter() - t0)
        t[r] = best
    assert 0.3 < t[10] / t[20] < 0.8
