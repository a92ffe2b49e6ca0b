"""
Comparing two configurations with fitted loss curves
====================================================

Generates loss curves over model size and token count from two known
laws, fits ``A N^-alpha + B D^-beta + E`` to each, and checks which
configuration is lower across the grid.
"""

# %%
# Synthetic curves on seven model sizes and five token counts.

import tempfile
import time

from moeplan import ChinchillaFit, compare_configs, fit_chinchilla
from moeplan.io import write_plot_data
from moeplan.reference import CHINCHILLA_128_8, CHINCHILLA_256_16, CORE_TOTALS_128_8
from moeplan.synthetic import chinchilla_points

tokens = [9e9, 18e9, 27e9, 36e9, 50e9]
laws = {"128/8": ChinchillaFit(**CHINCHILLA_128_8), "256/16": ChinchillaFit(**CHINCHILLA_256_16)}
curves = {k: chinchilla_points(law, CORE_TOTALS_128_8, tokens) for k, law in laws.items()}

# %%
# Each fit runs BFGS from all 7500 grid starts at once and keeps the best
# admissible result. This takes several seconds per curve.

fits = {}
for label, points in curves.items():
    t0 = time.perf_counter()
    fits[label] = fit_chinchilla(points)
    f = fits[label]
    print(f"{label:>7}  A={f.A:.4g} B={f.B:.4g} E={f.E:.4g} alpha={f.alpha:.4g} "
          f"beta={f.beta:.4g}  ({time.perf_counter() - t0:.1f} s)")

# %%
# Predicted losses side by side; a negative difference means the first
# configuration is lower.

report = compare_configs(fits["128/8"], fits["256/16"], CORE_TOTALS_128_8, tokens,
                         labels=("128/8", "256/16"))
print(report.table())

# %%
# One tab-separated file per token count, ready for any plotting tool.

with tempfile.TemporaryDirectory() as tmp:
    for path in write_plot_data(report, tmp):
        print(path.name)
