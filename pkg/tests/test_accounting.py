from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moeplan.accounting import (
    ModelDims,
    active_params,
    active_ratio_formula,
    as_rational,
    budget_deviation,
    granularity_variants,
    param_budget,
    round_rational,
    solve_experts_for_budget,
    sparsity_stats,
    total_params,
)
from moeplan.errors import InfeasibleBudgetError, InvalidDimsError
from moeplan.reference import CORE_DIMS, CORE_TOTALS_128_8, WIDTH_DEPTH_ROWS


def dims(l, d, g, n_exp, n_topk, **kw):
    return ModelDims(l, d, g, n_exp, n_topk, **kw)


class TestModelDims:
    def test_rejects_topk_above_experts(self):
        with pytest.raises(InvalidDimsError, match="n_topk exceeds n_exp"):
            dims(1, 1, 1, 8, 9)

    @pytest.mark.parametrize("field", ["l", "d", "n_exp", "n_topk"])
    def test_rejects_non_positive(self, field):
        kw = dict(l=2, d=8, g=1, n_exp=4, n_topk=2)
        kw[field] = 0
        with pytest.raises(InvalidDimsError):
            ModelDims(**kw)

    def test_rejects_non_positive_granularity(self):
        with pytest.raises(InvalidDimsError):
            dims(2, 8, 0, 4, 2)
        with pytest.raises(InvalidDimsError):
            dims(2, 8, -1, 4, 2)

    def test_rejects_fractional_layers(self):
        with pytest.raises(InvalidDimsError):
            dims(2.5, 8, 1, 4, 2)

    def test_fractional_granularity_allowed_by_default(self):
        m = dims(94, 4096, 2.7, 128, 8)
        assert m.g == Fraction(27, 10)
        assert m.d_exp == Fraction(40960, 27)

    def test_strict_mode_rejects_fractional_expert_width(self):
        with pytest.raises(InvalidDimsError, match="not an integer"):
            dims(94, 4096, 2.7, 128, 8, strict=True)
        assert dims(8, 384, 4, 128, 8, strict=True).d_exp == 96


class TestCounts:
    @pytest.mark.parametrize("ld,expected", list(zip(CORE_DIMS, CORE_TOTALS_128_8)))
    def test_core_ladder_totals(self, ld, expected):
        n = total_params(dims(*ld, 4, 128, 8))
        assert n == expected
        assert isinstance(n, int)

    def test_unit_dims(self):
        assert total_params(dims(1, 1, 1, 1, 1)) == 7
        assert active_params(dims(1, 1, 1, 8, 1)) == 7

    def test_active_smallest_ladder_model(self):
        assert active_params(dims(6, 288, 4, 128, 8)) == 6 * 288**2 * 10 == 4_976_640

    def test_fractional_count_is_exact(self):
        m = dims(1, 1, 3, 2, 1)
        assert total_params(m) == Fraction(4) + Fraction(6, 3) == 6
        m = dims(1, 1, Fraction(7, 2), 2, 1)
        assert total_params(m) == Fraction(4) + Fraction(12, 7)

    def test_dense_limit(self):
        m = dims(3, 64, 2, 8, 8)
        assert total_params(m) == active_params(m)

    @given(
        l=st.integers(1, 64), d=st.integers(1, 8192), g=st.integers(1, 16),
        n_exp=st.integers(1, 1024), data=st.data(),
    )
    def test_total_dominates_active(self, l, d, g, n_exp, data):
        n_topk = data.draw(st.integers(1, n_exp))
        b = param_budget(dims(l, d, g, n_exp, n_topk))
        assert b.n_total >= b.n_active > 0
        assert (b.n_total == b.n_active) == (n_exp == n_topk)

    @given(l=st.integers(1, 64), d=st.integers(1, 4096), g=st.integers(1, 16),
           k=st.integers(1, 64), n_topk=st.integers(1, 64))
    def test_integral_when_granularity_divides(self, l, d, g, k, n_topk):
        n_exp = g * k
        n_topk = min(n_topk, n_exp)
        n = total_params(dims(l, d, g, n_exp, n_topk))
        assert isinstance(n, int)
        assert n == l * d * d * (4 + 3 * k)


class TestSparsityStats:
    def test_expert_ratio(self):
        assert sparsity_stats(dims(8, 384, 4, 128, 8)).s == 16

    def test_dense(self):
        st_ = sparsity_stats(dims(8, 384, 4, 8, 8))
        assert st_.s == 1 and st_.active_ratio == 1

    def test_width_depth_ratio(self):
        assert sparsity_stats(dims(8, 336, 4, 43, 4)).gamma == 42


class TestActiveRatioFormula:
    def test_hand_substitution(self):
        assert active_ratio_formula(128, 4, 16) == pytest.approx(0.10, rel=1e-15)

    @pytest.mark.parametrize("n_exp,g", [(1, 1), (128, 4), (7, 2.7)])
    def test_dense_is_one(self, n_exp, g):
        assert active_ratio_formula(n_exp, g, 1) == 1.0

    def test_many_experts_limit(self):
        assert active_ratio_formula(1e9, 4, 8) == pytest.approx(1 / 8, rel=1e-7)

    def test_rejects_sparsity_below_one(self):
        with pytest.raises(ValueError):
            active_ratio_formula(8, 4, 0.5)

    def test_strictly_decreasing_in_experts(self):
        for g in (1, 2, 4, 8):
            for s in (2, 4, 8, 16, 32):
                prev = active_ratio_formula(1, g, s)
                for n in range(2, 4097):
                    cur = active_ratio_formula(n, g, s)
                    assert cur < prev, (g, s, n)
                    prev = cur

    @given(l=st.integers(1, 64), d=st.integers(1, 4096), g=st.integers(1, 16),
           n_topk=st.integers(1, 64), s=st.integers(1, 64))
    def test_agrees_with_counts(self, l, d, g, n_topk, s):
        m = dims(l, d, g, n_topk * s, n_topk)
        direct = sparsity_stats(m).active_ratio
        assert active_ratio_formula(m.n_exp, g, s) == pytest.approx(direct, rel=1e-12)


class TestGranularityVariants:
    def test_finer_experts(self):
        base = dims(8, 384, 2, 64, 4)
        (v,) = granularity_variants(base, [4])
        assert v == dims(8, 384, 8, 256, 16)
        assert param_budget(v) == param_budget(base)

    def test_identity(self):
        base = dims(8, 384, 2, 64, 4)
        assert granularity_variants(base, [1]) == [base]

    def test_coarser_experts(self):
        base = dims(18, 1024, 4, 128, 8)
        (v,) = granularity_variants(base, [Fraction(1, 2)])
        assert v == dims(18, 1024, 2, 64, 4)
        assert param_budget(v) == param_budget(base)

    def test_rejects_non_integral_counts(self):
        with pytest.raises(InvalidDimsError):
            granularity_variants(dims(8, 384, 4, 128, 8), [Fraction(1, 16)])

    @settings(max_examples=200)
    @given(l=st.integers(1, 32), d=st.integers(1, 4096), g=st.integers(1, 16),
           n_topk=st.integers(1, 32), s=st.integers(1, 16),
           num=st.integers(1, 8), den=st.sampled_from([1, 2, 4]))
    def test_iso_budget(self, l, d, g, n_topk, s, num, den):
        base = dims(l, d, g, n_topk * s * den, n_topk * den)
        f = Fraction(num, den)
        (v,) = granularity_variants(base, [f])
        assert total_params(v) == total_params(base)
        assert active_params(v) == active_params(base)


class TestSolveExperts:
    REF = dims(8, 336, 4, 43, 4)

    def targets(self):
        return total_params(self.REF), active_params(self.REF)

    def test_self_consistency(self):
        sol = solve_experts_for_budget(8, 336, 4, *self.targets())
        assert (sol.n_exp, sol.n_topk) == (43, 4)
        assert sol.total_deviation_pct == 0 and sol.active_deviation_pct == 0

    @pytest.mark.parametrize("l,d,expected", [
        (16, 272, (32, 2)), (8, 384, (32, 2)), (4, 544, (32, 2)), (8, 224, (103, 16)),
    ])
    def test_reconstructs_ablation_rows(self, l, d, expected):
        sol = solve_experts_for_budget(l, d, 4, *self.targets())
        assert (sol.n_exp, sol.n_topk) == expected

    def test_formula_rounds_deep_narrow_row_to_nearest(self):
        # (32739840 / 921600 - 4) * 4/3 = 42.03...: the rounding rule lands on 42, not 43
        sol = solve_experts_for_budget(16, 240, 4, *self.targets())
        assert (sol.n_exp, sol.n_topk) == (42, 4)
        assert sol.total_deviation_pct == pytest.approx(100 * (32_716_800 / 32_739_840 - 1))

    @pytest.mark.parametrize("row", WIDTH_DEPTH_ROWS)
    def test_published_deviation_columns(self, row):
        l, d, n_exp, n_topk, active_pct, total_pct = row
        total_dev, active_dev = budget_deviation(dims(l, d, 4, n_exp, n_topk), *self.targets())
        assert total_dev == pytest.approx(total_pct, abs=0.005 + 1e-9)
        assert active_dev == pytest.approx(active_pct, abs=0.005 + 1e-9)

    def test_infeasible_when_dense_term_exhausts_budget(self):
        with pytest.raises(InfeasibleBudgetError):
            solve_experts_for_budget(8, 336, 4, 10**9, 4 * 8 * 336**2)

    def test_rounding_modes(self):
        t = self.targets()
        floor = solve_experts_for_budget(16, 240, 4, *t, rounding="floor")
        ceil = solve_experts_for_budget(16, 240, 4, *t, rounding="ceil")
        assert (floor.n_exp, ceil.n_exp) == (42, 43)

    def test_clamps_topk_to_experts(self):
        sol = solve_experts_for_budget(1, 1, 1, 10, 10)
        assert sol.n_exp == 2 and sol.n_topk == 2


def test_round_rational_half_even():
    assert round_rational(Fraction(5, 2)) == 2
    assert round_rational(Fraction(7, 2)) == 4
    assert round_rational(Fraction(5, 2), "half_up") == 3


def test_as_rational_uses_decimal_text():
    assert as_rational(2.7) == Fraction(27, 10)
    assert as_rational("1/3") == Fraction(1, 3)
    assert as_rational(2.35e11) == 235_000_000_000
