"""Published reference configurations and coefficients.

These are the published MoE study values used as fixtures by tests, demos and
reports. Nothing here is computed.
"""

from fractions import Fraction

# Core (l, d) ladder of the scaling study, with N_total at g=4, (n_exp, n_topk) = (128, 8).
CORE_DIMS = (
    (6, 288),
    (6, 384),
    (8, 384),
    (8, 512),
    (10, 640),
    (14, 768),
    (16, 1024),
)
CORE_TOTALS_128_8 = (
    49_766_400,
    88_473_600,
    117_964_800,
    209_715_200,
    409_600_000,
    825_753_600,
    1_677_721_600,
)

# (n_exp, n_topk) pairs crossed with CORE_DIMS in the scaling study (63 models).
EXPERT_CONFIGS = (
    (32, 2),
    (64, 2),
    (64, 4),
    (128, 2),
    (128, 8),
    (256, 2),
    (256, 4),
    (256, 8),
    (256, 16),
)

SCALING_GRANULARITY = 4
SCALING_TOKENS = 9_000_000_000

# Granularity ablation: (l, d) bases, each swept over these (g, n_exp, n_topk).
GRANULARITY_BASES = ((8, 384), (18, 1024))
GRANULARITY_CHAIN = (
    (1, 32, 2),
    (2, 64, 4),
    (4, 128, 8),
    (8, 256, 16),
    (16, 512, 32),
)

# Width-to-depth ablation at g=4: (l, d, n_exp, n_topk, active_dev_pct, total_dev_pct),
# deviations relative to the (8, 336, 43, 4) row.
WIDTH_DEPTH_ROWS = (
    (16, 272, 32, 2, 2.98, 1.24),
    (8, 384, 32, 2, 2.62, 0.89),
    (4, 544, 32, 2, 2.98, 1.24),
    (16, 240, 43, 4, 2.04, 2.04),
    (8, 336, 43, 4, 0.00, 0.00),
    (4, 480, 43, 4, 2.04, 2.04),
    (16, 160, 103, 16, 3.66, 1.65),
    (8, 224, 103, 16, 1.59, -0.38),
    (4, 320, 103, 16, 3.66, 1.65),
)
WIDTH_DEPTH_REFERENCE = (8, 336, 43, 4)

# Fitted log-log exponents for (N_total, n_exp, n_topk).
LOSS_EXPONENTS = (-0.052, 0.023, -0.018)
# The same law rewritten over (N_total, s, n_exp).
SPARSITY_FORM_EXPONENTS = (-0.052, 0.018, 0.005)

# R^2 reported for each feature combination on the (unpublished) 63-model dataset.
REPORTED_R_SQUARED = {
    "Ntotal": 0.926,
    "Nactive": 0.641,
    "Nactive+s": 0.944,
    "Ntotal+s": 0.983,
    "Ntotal+nexp+ntopk": 0.985,
    "Nactive+nexp+ntopk": 0.981,
    "Ntotal+s+Ntotal*s": 0.983,
    "Ntotal+Nactive+Ntotal*Nactive": 0.988,
    "Ntotal+Nactive+s": 0.985,
    "Ntotal+Nactive": 0.979,
    "Ntotal+Nactive+nexp": 0.983,
    "Ntotal+Nactive+ntopk": 0.984,
}

# Chinchilla-form coefficients (A, B, E, alpha, beta).
CHINCHILLA_128_8 = dict(A=28.0, B=229.0, E=1.08, alpha=0.28, beta=0.16)
CHINCHILLA_256_16 = dict(A=564.0, B=640_500.0, E=2.0, alpha=0.64, beta=0.36)

# Planner comparison against Qwen3-235B-A22B.
QWEN3_CONSTRAINTS = dict(c_total=235e9, c_active=22e9, k_align=128)
QWEN3_PLANNED = (94, 4096, 128, 7)  # (l, d, n_exp, n_topk) reported by the planner run
QWEN3_ACTUAL = (83, 5312, 128, 8)
QWEN3_GRANULARITY = Fraction(27, 10)
