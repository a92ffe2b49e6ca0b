"""
Log-log regression of loss on configuration
===========================================

Fits power laws in total parameters, expert count and top-k to a synthetic
63-model grid, ranks competing feature sets, and rewrites the winning law in
terms of sparsity.
"""

# %%
# The synthetic grid has seven (l, d) sizes and nine (n_exp, n_topk) pairs.
# Losses follow a known power law with 1% multiplicative noise.

import numpy as np

from moeplan import FeatureSpec, fit_power_law, model_selection, sparsity_form
from moeplan.synthetic import power_law_records

rng = np.random.default_rng(0)
records = power_law_records(exponents=(-0.052, 0.023, -0.018), noise_sigma=0.01, rng=rng)
print(len(records), "records")

# %%
# One fit with the full diagnostics table.

report = fit_power_law(records, FeatureSpec.parse("Ntotal+nexp+ntopk"))
print(report.summary())

# %%
# Several candidate feature sets side by side. Interaction terms built from
# nearly collinear logs get flagged, and a design whose columns are exactly
# dependent (log s = log n_exp - log n_topk) is reported as a failure.

specs = [FeatureSpec.parse(s) for s in (
    "Ntotal", "Nactive", "Ntotal+s", "Ntotal+nexp+ntopk",
    "Ntotal+Nactive+Ntotal*Nactive", "s+nexp+ntopk",
)]
for entry in model_selection(records, specs):
    if entry.ok:
        print(f"{str(entry.spec):<32}{entry.report.r_squared:.4f}  {', '.join(entry.verdicts) or 'ok'}")
    else:
        print(f"{str(entry.spec):<32}failed: {entry.error}")

# %%
# At fixed N_total the (n_exp, n_topk) law is the same as an (s, n_exp) law:
# the sparsity exponent is minus the top-k exponent and what is left over
# lands on n_exp.

sf = sparsity_form(report)
print(f"N_total^{sf.n_total:.4f} s^{sf.s:.4f} n_exp^{sf.n_exp:.4f}")
