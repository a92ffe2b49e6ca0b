import math
from fractions import Fraction

import numpy as np
import pytest

from moeplan.accounting import ModelDims, active_params, total_params
from moeplan.errors import InvalidConstraintsError, SearchSpaceTooLarge
from moeplan.optimizer import (
    Constraints,
    align_width,
    brute_force_optimize,
    compare_with_oracle,
    loss_proxy,
    optimize,
    solve_layers,
    solve_topk,
)


def random_constraints(rng, lo=3.0, hi=7.0, aligns=(1, 2, 4)):
    c_total = int(10 ** rng.uniform(lo, hi))
    c_active = max(1, int(c_total * 10 ** rng.uniform(-2, 0)))
    return Constraints(c_total, c_active, k_align=int(rng.choice(aligns)))


def assert_candidate_valid(cand, c):
    d = cand.dims
    assert cand.feasible
    assert cand.n_total == total_params(d) <= c.c_total
    assert cand.n_active == active_params(d) <= c.c_active
    assert d.d % c.k_align == 0
    assert 1 <= d.n_topk <= d.n_exp
    assert d.n_exp in c.n_exp_grid


class TestConstraints:
    def test_rejects_active_above_total(self):
        with pytest.raises(InvalidConstraintsError):
            Constraints(100, 200)

    def test_rejects_empty_gamma_range(self):
        with pytest.raises(InvalidConstraintsError):
            Constraints(1000, 100, gamma_range=(64, 32))

    def test_rejects_empty_grid(self):
        with pytest.raises(InvalidConstraintsError):
            Constraints(1000, 100, n_exp_grid=())

    def test_rejects_bad_alignment(self):
        with pytest.raises(InvalidConstraintsError):
            Constraints(1000, 100, k_align=0)

    def test_defaults(self):
        c = Constraints(1000, 100)
        assert c.n_exp_grid == (2, 4, 8, 16, 32, 64, 128, 256, 512)
        assert list(c.gammas) == list(range(32, 65))
        assert c.g == 4


class TestSolveLayers:
    def test_qwen_scale_cell(self):
        # cube root of 2.35e11 / (44^2 * 100) is 106.67..., frozen from a 50-digit oracle
        assert solve_layers(2.35e11, 44, 128) == 106

    def test_budget_below_one_layer(self):
        assert solve_layers(44**2 * 100 - 1, 44, 128) == 0
        assert solve_layers(44**2 * 100, 44, 128) == 1

    @pytest.mark.parametrize("c_total", [10**6, 2.35e11, 7_777_777_777, 10**15])
    def test_literal_constant_form(self, c_total):
        # g = 4 turns 4 + 3 n/g into 4 + 0.75 n, i.e. exactly 100 for n = 128
        c = Fraction(c_total)
        for gamma in (32, 44, 64):
            l = solve_layers(c_total, gamma, 128, g=4)
            assert gamma**2 * l**3 * 100 <= c < gamma**2 * (l + 1) ** 3 * 100

    def test_fractional_granularity(self):
        g = Fraction(27, 10)
        l = solve_layers(10**9, 40, 64, g)
        mult = 4 + 3 * Fraction(64) / g
        assert 40**2 * l**3 * mult <= 10**9 < 40**2 * (l + 1) ** 3 * mult


class TestAlignWidth:
    def test_qwen_scale_cell(self):
        d = align_width(44, 106, 128, 2.35e11, 128)
        assert d == 4608
        assert 106 * 4608**2 * 100 <= 235_000_000_000

    def test_exact_fit_needs_no_decrement(self):
        # 1 * 2^2 * (4 + 3) = 28
        assert align_width(2, 1, 1, 28, 4) == 2

    def test_decrements_until_budget_fits(self):
        d = align_width(44, 106, 128, 106 * 4600**2 * 100, 128)
        assert d == 4480
        assert 106 * d**2 * 100 <= 106 * 4600**2 * 100 < 106 * (d + 128) ** 2 * 100

    def test_degenerate_budget(self):
        assert align_width(1, 1, 1, 1, 2) == 0

    def test_rounding_ties(self):
        # gamma * l / k = 2.5 lands on an exact tie
        assert align_width(5, 1, 2, 10**9, 2) == 4
        assert align_width(5, 1, 2, 10**9, 2, rounding="half_up") == 6


class TestSolveTopk:
    def test_qwen_scale_cell(self):
        assert solve_topk(2.2e10, 106, 4608, 128) == 7

    def test_literal_constant_form(self):
        core = 106 * 4608**2
        expected = math.floor(Fraction(4, 3) * (Fraction(22 * 10**9, core) - 4))
        assert solve_topk(2.2e10, 106, 4608, 128, g=4) == expected

    def test_attention_term_exhausts_budget(self):
        assert solve_topk(4 * 106 * 4608**2, 106, 4608, 128) < 1

    def test_clamped_at_expert_count(self):
        assert solve_topk(10**18, 2, 64, 16) == 16


class TestLossProxy:
    def test_more_topk_is_better(self):
        a = ModelDims(8, 384, 4, 128, 8)
        assert loss_proxy(a.replace(n_topk=16)) < loss_proxy(a)

    def test_expert_penalty_factor(self):
        # doubling n_exp and n_topk with g doubled keeps N_total and s fixed
        a = ModelDims(8, 384, 4, 64, 4)
        b = ModelDims(8, 384, 8, 128, 8)
        assert total_params(a) == total_params(b)
        assert loss_proxy(b) / loss_proxy(a) == pytest.approx(2**0.005, rel=1e-12)

    def test_zero_exponents(self):
        assert loss_proxy(ModelDims(3, 17, 4, 9, 2), (0.0, 0.0, 0.0)) == 1.0

    def test_hand_value(self):
        d = ModelDims(8, 384, 4, 128, 8)
        expected = total_params(d) ** -0.052 * 128**0.023 * 8**-0.018
        assert loss_proxy(d) == pytest.approx(expected, rel=1e-13)


class TestOptimize:
    def test_single_candidate_space(self):
        # only gamma = 32, n_exp = 2 admits a layer: 32^2 * 5.5 = 5632 <= 5700
        c = Constraints(5700, 5000, k_align=32)
        res = optimize(c)
        assert res.candidate.dims == ModelDims(1, 32, 4, 2, 1)
        assert res.n_infeasible == res.n_cells - 1
        assert brute_force_optimize(c, mode="exhaustive").candidate == res.candidate

    def test_no_feasible_candidate(self):
        c = Constraints(1000, 500)
        res = optimize(c)
        assert res.candidate is None and not res.feasible
        assert res.infeasible_reasons() == {"depth": res.n_cells}
        assert brute_force_optimize(c).candidate is None
        assert brute_force_optimize(c, mode="exhaustive").candidate is None

    def test_records_every_cell(self):
        res = optimize(Constraints(10**8, 10**7))
        assert res.n_cells == 9 * 33
        assert [(c.n_exp, c.gamma) for c in res.cells[:2]] == [(2, 32), (2, 33)]

    def test_qwen_scale_plan(self):
        c = Constraints(2.35e11, 2.2e10, k_align=128)
        cand = optimize(c).candidate
        assert_candidate_valid(cand, c)
        assert cand.n_total >= Fraction(95, 100) * c.c_total
        assert (cand.dims.l, cand.dims.d, cand.dims.n_exp, cand.dims.n_topk) == (87, 3712, 256, 19)

    def test_deterministic(self):
        c = Constraints(3 * 10**7, 4 * 10**6, k_align=4)
        assert optimize(c) == optimize(c)

    def test_independent_of_grid_order(self):
        a = Constraints(3 * 10**7, 4 * 10**6, n_exp_grid=(2, 4, 8, 16, 32, 64))
        b = Constraints(3 * 10**7, 4 * 10**6, n_exp_grid=(64, 8, 32, 2, 16, 4))
        assert optimize(a).candidate == optimize(b).candidate

    def test_tie_prefers_fewer_experts(self):
        # with zero exponents every candidate ties on the proxy
        c = Constraints(10**7, 10**7, exponents=(0.0, 0.0, 0.0))
        cand = optimize(c).candidate
        assert cand.dims.n_exp == 2

    def test_fuzzed_feasibility(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            c = random_constraints(rng, 3, 12, aligns=(1, 2, 4, 8, 64, 128))
            cand = optimize(c).candidate
            if cand is not None:
                assert_candidate_valid(cand, c)


class TestOracle:
    def test_agrees_on_algorithm_candidate_set(self):
        rng = np.random.default_rng(99)
        for _ in range(40):
            c = random_constraints(rng)
            assert optimize(c).candidate == brute_force_optimize(c).candidate

    def test_exhaustive_never_worse(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            c = random_constraints(rng, 3, 6)
            cmp = compare_with_oracle(c)
            if cmp.greedy.candidate is not None:
                assert cmp.exhaustive.candidate.loss_proxy <= cmp.greedy.candidate.loss_proxy

    @pytest.mark.parametrize("c_total,c_active,k_align,greedy,better", [
        (294546, 4971, 1, (1, 32, 256, 1), (1, 28, 256, 3)),
        (163594, 142851, 2, (2, 112, 2, 2), (3, 92, 2, 2)),
    ])
    def test_interior_point_beats_greedy(self, c_total, c_active, k_align, greedy, better):
        cmp = compare_with_oracle(Constraints(c_total, c_active, k_align=k_align))
        g, e = cmp.greedy.candidate.dims, cmp.exhaustive.candidate.dims
        assert (g.l, g.d, g.n_exp, g.n_topk) == greedy
        assert (e.l, e.d, e.n_exp, e.n_topk) == better
        assert not cmp.greedy_is_optimal
        assert cmp.gaps

    def test_greedy_can_miss_every_cell(self):
        # the deepest layer count overshoots the active budget in every cell,
        # while a narrower width still fits
        cmp = compare_with_oracle(Constraints(14835, 441))
        assert cmp.greedy.candidate is None
        assert cmp.exhaustive.candidate.dims == ModelDims(1, 8, 4, 8, 3)

    def test_search_space_guard(self):
        with pytest.raises(SearchSpaceTooLarge):
            brute_force_optimize(Constraints(10**12, 10**11), mode="exhaustive")

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            brute_force_optimize(Constraints(10**4, 10**3), mode="random")


class TestBudgetMonotonicity:
    def test_active_budget(self):
        rng = np.random.default_rng(1)
        for _ in range(150):
            c = random_constraints(rng, 4, 9, aligns=(1, 2, 4, 8))
            more = Constraints(c.c_total, min(c.c_total, c.c_active * 2), k_align=c.k_align)
            a, b = optimize(c).candidate, optimize(more).candidate
            if a is not None:
                assert b is not None and b.loss_proxy <= a.loss_proxy

    def test_total_budget_for_exhaustive_search(self):
        rng = np.random.default_rng(3)
        for _ in range(15):
            c = random_constraints(rng, 4, 6)
            more = Constraints(c.c_total * 2, c.c_active, k_align=c.k_align)
            a = brute_force_optimize(c, mode="exhaustive").candidate
            b = brute_force_optimize(more, mode="exhaustive").candidate
            if a is not None:
                assert b.loss_proxy <= a.loss_proxy

    def test_total_budget_not_monotone_for_greedy_search(self):
        # a larger total budget forces a deeper, wider cell whose attention
        # term alone exhausts the active budget
        small = optimize(Constraints(113_200_319, 2_130_338))
        large = optimize(Constraints(298_116_000, 2_130_338))
        assert small.candidate.dims == ModelDims(5, 240, 4, 512, 4)
        assert large.candidate is None
        assert set(large.infeasible_reasons()) <= {"active", "depth"}
