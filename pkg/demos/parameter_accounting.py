"""
Counting MoE parameters
=======================

Total and active parameter counts for a few configurations, the active
ratio as a function of expert count, and iso-budget granularity variants.
"""

# %%
# A configuration is five numbers: layers, width, granularity (d / d_exp),
# number of experts and number of activated experts.

from fractions import Fraction

import numpy as np

from moeplan import (
    ModelDims,
    active_ratio_formula,
    granularity_variants,
    param_budget,
    solve_experts_for_budget,
    sparsity_stats,
)

small = ModelDims(l=6, d=288, g=4, n_exp=128, n_topk=8)
budget = param_budget(small)
print(budget.n_total, budget.n_active)
print(sparsity_stats(small))

# %%
# Counts stay exact. With a granularity that does not divide the width the
# expert width is fractional, and the count comes back as a Fraction.

odd = ModelDims(l=94, d=4096, g=Fraction(27, 10), n_exp=128, n_topk=8)
print(odd.d_exp, param_budget(odd).n_total)

# %%
# At fixed sparsity the share of active parameters falls toward 1/s as the
# expert count grows, because the attention block becomes a smaller part of
# the total.

for n_exp in (8, 32, 128, 512, 2048):
    print(n_exp, round(active_ratio_formula(n_exp, 4, 16), 4))
print("limit", 1 / 16)

# %%
# Splitting every expert in two (doubling g, n_exp and n_topk together)
# leaves both budgets untouched.

base = ModelDims(l=8, d=384, g=1, n_exp=32, n_topk=2)
for v in granularity_variants(base, [1, 2, 4, 8, 16]):
    b = param_budget(v)
    print(f"g={v.g!s:>3} n_exp={v.n_exp:>4} n_topk={v.n_topk:>3}  {b.n_total}  {b.n_active}")

# %%
# Going the other way: given a depth and width, pick the expert counts that
# best match a reference model's budgets.

ref = param_budget(ModelDims(8, 336, 4, 43, 4))
for l, d in [(16, 272), (8, 384), (4, 544), (8, 224)]:
    sol = solve_experts_for_budget(l, d, 4, ref.n_total, ref.n_active)
    print(l, d, sol.n_exp, sol.n_topk,
          f"{sol.total_deviation_pct:+.2f}%", f"{sol.active_deviation_pct:+.2f}%")

np.testing.assert_equal(budget.n_total, 49_766_400)
