"""
The moeplan command line
========================

Drives every subcommand from Python through ``moeplan.cli.main``. The same
arguments work from a shell, e.g. ``moeplan count --l 6 --d 288 --n-exp 128
--n-topk 8``.
"""

# %%
# Scratch files go in a temporary directory.

import json
import tempfile
from pathlib import Path

import numpy as np

from moeplan import ChinchillaFit
from moeplan.cli import main
from moeplan.io import chinchilla_fit_to_dict, write_curve, write_records
from moeplan.reference import CHINCHILLA_128_8, CHINCHILLA_256_16, CORE_TOTALS_128_8
from moeplan.synthetic import chinchilla_points, power_law_records

tmp = Path(tempfile.mkdtemp())


def run(*argv):
    code = main([str(a) for a in argv])
    print(f"-> exit {code}\n")


# %%
# Parameter counts, granularity variants and expert solving.

run("count", "--l", 6, "--d", 288, "--g", 4, "--n-exp", 128, "--n-topk", 8)
run("variants", "--l", 8, "--d", 384, "--g", 1, "--n-exp", 32, "--n-topk", 2, "--factors", "1,2,4,8,16")
run("solve-experts", "--l", 16, "--d", 272, "--reference", "8,336,4,43,4")

# %%
# Power-law fits read a records CSV. Passing several specs ranks them.

write_records(tmp / "records.csv", power_law_records(noise_sigma=0.01, rng=np.random.default_rng(1)))
run("fit-power", tmp / "records.csv", "--spec", "Ntotal+nexp+ntopk")
run("fit-power", tmp / "records.csv", "--spec", "Ntotal", "--spec", "Ntotal+s", "--spec", "Ntotal+nexp+ntopk")

# %%
# Loss-curve fits read an (n_total, tokens_D, loss_L) CSV. ``--compare``
# accepts another curve or a saved fit, and ``--plot-data`` writes the series.

tokens = [9e9, 18e9, 27e9, 36e9, 50e9]
write_curve(tmp / "curve.csv", chinchilla_points(ChinchillaFit(**CHINCHILLA_128_8), CORE_TOTALS_128_8, tokens))
(tmp / "other.json").write_text(json.dumps(chinchilla_fit_to_dict(ChinchillaFit(**CHINCHILLA_256_16))))
run("fit-chinchilla", tmp / "curve.csv", "--init-grid", "coarse", "--compare", tmp / "other.json",
    "--labels", "128/8,256/16", "--plot-data", tmp / "plots")

# %%
# Plans are JSON objects; unknown keys are rejected. An impossible budget
# exits with code 3.

(tmp / "plan.json").write_text(json.dumps({"c_total": 2.35e11, "c_active": 2.2e10, "k_align": 128}))
run("plan", tmp / "plan.json")
(tmp / "tiny.json").write_text(json.dumps({"c_total": 1000, "c_active": 500}))
run("plan", tmp / "tiny.json")
