"""
Planning an MoE configuration under budgets
===========================================

Runs the per-cell greedy search for a model with a 235B total and 22B
active parameter budget, looks at the cell diagnostics, and checks the
greedy choice against exhaustive enumeration on a small budget.
"""

# %%
# Budgets, width alignment and the default grids (gamma 32..64, n_exp a
# power of two up to 512, g = 4).

from fractions import Fraction

from moeplan import Constraints, compare_with_oracle, optimize
from moeplan.reference import QWEN3_ACTUAL, QWEN3_PLANNED

constraints = Constraints(c_total=235e9, c_active=22e9, k_align=128)
result = optimize(constraints)
best = result.candidate
print(best.dims, f"gamma={best.gamma}")
print(f"total  {best.n_total:,} ({float(Fraction(best.n_total) / constraints.c_total):.2%})")
print(f"active {best.n_active:,} ({float(Fraction(best.n_active) / constraints.c_active):.2%})")
print("published planner output", QWEN3_PLANNED, "shipped model", QWEN3_ACTUAL)

# %%
# Every (n_exp, gamma) cell is kept. Here the large-n_exp cells with deep
# stacks run out of active budget before a single expert fits.

print(result.n_cells, "cells,", result.n_infeasible, "infeasible:", result.infeasible_reasons())

# %%
# The greedy rule takes the deepest stack that fits and the widest aligned
# width below gamma * l. A shallower or narrower point in the same cell can
# leave room for more active experts and a lower proxy.

cmp = compare_with_oracle(Constraints(294_546, 4_971))
print("greedy    ", cmp.greedy.candidate.dims, cmp.greedy.candidate.loss_proxy)
print("exhaustive", cmp.exhaustive.candidate.dims, cmp.exhaustive.candidate.loss_proxy)
print(len(cmp.gaps), "cells where enumeration found a better point")

# %%
# The same effect means a larger total budget can make the greedy result
# worse: the deeper, wider cells it forces may leave no active budget.

for c_total in (113_200_319, 298_116_000):
    plan = optimize(Constraints(c_total, 2_130_338))
    print(c_total, plan.candidate.dims if plan.candidate else None)
