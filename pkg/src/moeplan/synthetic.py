"""Synthetic experiment records and loss curves with known generating laws."""

from __future__ import annotations

import math
from typing import Iterable, Optional, Sequence

import numpy as np

from .accounting import ModelDims, total_params
from .chinchilla import ChinchillaFit, CurvePoint
from .reference import (
    CORE_DIMS,
    EXPERT_CONFIGS,
    LOSS_EXPONENTS,
    SCALING_GRANULARITY,
    SCALING_TOKENS,
)
from .regression import ExperimentRecord


def scaling_grid_dims(
    core_dims: Sequence[tuple[int, int]] = CORE_DIMS,
    expert_configs: Sequence[tuple[int, int]] = EXPERT_CONFIGS,
    g=SCALING_GRANULARITY,
) -> list[ModelDims]:
    """Every expert configuration crossed with every core ``(l, d)``."""
    return [ModelDims(l, d, g, n_exp, n_topk)
            for n_exp, n_topk in expert_configs for l, d in core_dims]


def power_law_records(
    exponents: Sequence[float] = LOSS_EXPONENTS,
    constant: float = 8.0,
    noise_sigma: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    dims: Optional[Iterable[ModelDims]] = None,
    tokens: int = SCALING_TOKENS,
) -> list[ExperimentRecord]:
    """Records with ``L = constant * N_total^e1 * n_exp^e2 * n_topk^e3``.

    ``noise_sigma`` adds multiplicative log-normal noise, ``exp(N(0, sigma^2))``.
    """
    if dims is None:
        dims = scaling_grid_dims()
    e1, e2, e3 = exponents
    if noise_sigma > 0 and rng is None:
        rng = np.random.default_rng()
    out = []
    for dm in dims:
        log_loss = (math.log(constant) + e1 * math.log(total_params(dm))
                    + e2 * math.log(dm.n_exp) + e3 * math.log(dm.n_topk))
        if noise_sigma > 0:
            log_loss += noise_sigma * rng.standard_normal()
        out.append(ExperimentRecord(dm, tokens, math.exp(log_loss)))
    return out


def chinchilla_points(fit: ChinchillaFit, n_values: Iterable[float],
                      d_values: Iterable[float]) -> list[CurvePoint]:
    """Exact curve values on the ``N x D`` product grid (D outer, N inner)."""
    return [CurvePoint(float(n), float(d), float(fit.predict(n, d)))
            for d in d_values for n in n_values]
