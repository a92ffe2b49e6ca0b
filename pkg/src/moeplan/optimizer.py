"""Budget-constrained search for an MoE configuration.

For every expert count ``n_exp`` and integer width-to-depth ratio ``gamma``:

1. take the deepest ``l`` with ``gamma^2 l^3 (4 + 3 n_exp / g) <= c_total``;
2. set ``d`` to ``gamma l`` rounded to a multiple of ``k_align`` and step it
   down by ``k_align`` until ``l d^2 (4 + 3 n_exp / g) <= c_total``;
3. take the largest ``n_topk <= n_exp`` with ``l d^2 (4 + 3 n_topk / g) <= c_active``;
4. score the cell with the power-law loss proxy.

The lowest proxy wins. Budget comparisons use exact integer arithmetic, and
``g`` may be any positive rational.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .accounting import (
    ModelDims,
    RoundingMode,
    active_params,
    as_rational,
    round_rational,
    total_params,
)
from .errors import InvalidConstraintsError, SearchSpaceTooLarge
from .reference import LOSS_EXPONENTS

__all__ = [
    "Constraints",
    "ConfigCandidate",
    "CellResult",
    "PlanResult",
    "OracleComparison",
    "solve_layers",
    "align_width",
    "solve_topk",
    "loss_proxy",
    "optimize",
    "brute_force_optimize",
    "compare_with_oracle",
]

DEFAULT_N_EXP_GRID = tuple(2**k for k in range(1, 10))


@dataclass(frozen=True)
class Constraints:
    c_total: Fraction
    c_active: Fraction
    k_align: int = 1
    gamma_range: tuple[int, int] = (32, 64)
    n_exp_grid: tuple[int, ...] = DEFAULT_N_EXP_GRID
    g: Fraction = Fraction(4)
    exponents: tuple[float, float, float] = LOSS_EXPONENTS
    rounding: RoundingMode = "half_even"

    def __post_init__(self):
        try:
            c_total, c_active, g = (as_rational(v) for v in (self.c_total, self.c_active, self.g))
        except (TypeError, ValueError, ZeroDivisionError) as exc:
            raise InvalidConstraintsError(str(exc)) from exc
        object.__setattr__(self, "c_total", c_total)
        object.__setattr__(self, "c_active", c_active)
        object.__setattr__(self, "g", g)
        if c_total <= 0 or c_active <= 0:
            raise InvalidConstraintsError("budgets must be positive")
        if c_active > c_total:
            raise InvalidConstraintsError(
                f"c_active ({c_active}) exceeds c_total ({c_total})"
            )
        if g <= 0:
            raise InvalidConstraintsError(f"g must be positive, got {g}")
        if isinstance(self.k_align, bool) or int(self.k_align) != self.k_align or self.k_align < 1:
            raise InvalidConstraintsError(f"k_align must be a positive integer, got {self.k_align}")
        object.__setattr__(self, "k_align", int(self.k_align))

        lo, hi = (int(v) for v in self.gamma_range)
        if lo < 1 or hi < lo:
            raise InvalidConstraintsError(f"gamma_range must be a non-empty positive range, got {self.gamma_range}")
        object.__setattr__(self, "gamma_range", (lo, hi))

        grid = tuple(int(n) for n in self.n_exp_grid)
        if not grid or min(grid) < 1:
            raise InvalidConstraintsError("n_exp_grid must be a non-empty set of positive integers")
        object.__setattr__(self, "n_exp_grid", grid)

        exps = tuple(float(e) for e in self.exponents)
        if len(exps) != 3:
            raise InvalidConstraintsError("exponents must be a triple")
        object.__setattr__(self, "exponents", exps)
        if self.rounding not in ("half_even", "half_up", "floor", "ceil"):
            raise InvalidConstraintsError(f"unknown rounding mode {self.rounding!r}")

    @property
    def gammas(self) -> range:
        return range(self.gamma_range[0], self.gamma_range[1] + 1)


@dataclass(frozen=True)
class ConfigCandidate:
    dims: ModelDims
    n_total: object
    n_active: object
    loss_proxy: float
    feasible: bool
    gamma: Optional[int] = None

    @classmethod
    def build(cls, dims: ModelDims, constraints: Constraints, gamma=None) -> "ConfigCandidate":
        n_total, n_active = total_params(dims), active_params(dims)
        feasible = (
            n_total <= constraints.c_total
            and n_active <= constraints.c_active
            and dims.d % constraints.k_align == 0
            and 1 <= dims.n_topk <= dims.n_exp
        )
        return cls(dims, n_total, n_active, loss_proxy(dims, constraints.exponents),
                   bool(feasible), gamma)

    def rank_key(self) -> tuple:
        """Ascending sort key: proxy, then fewer experts, more top-k, larger total, smaller gamma."""
        return (self.loss_proxy, self.dims.n_exp, -self.dims.n_topk,
                -Fraction(self.n_total), self.gamma if self.gamma is not None else 0)


@dataclass(frozen=True)
class CellResult:
    """Outcome of one ``(n_exp, gamma)`` cell; ``reason`` is set when infeasible."""

    n_exp: int
    gamma: int
    candidate: Optional[ConfigCandidate]
    reason: str = ""


@dataclass
class PlanResult:
    candidate: Optional[ConfigCandidate]
    cells: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.candidate is not None

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_infeasible(self) -> int:
        return sum(c.candidate is None for c in self.cells)

    def infeasible_reasons(self) -> dict:
        counts = {}
        for c in self.cells:
            if c.candidate is None:
                counts[c.reason] = counts.get(c.reason, 0) + 1
        return counts


def _budget_terms(c: Fraction, g: Fraction, n: int) -> tuple[int, int]:
    """Integers ``(lhs_factor, rhs)`` with ``l d^2 (4 + 3n/g) <= c  <=>  l d^2 lhs_factor <= rhs``."""
    # l d^2 (4p + 3nq)/p <= a/b  <=>  l d^2 (4p + 3nq) b <= a p
    p, q = g.numerator, g.denominator
    return (4 * p + 3 * n * q) * c.denominator, c.numerator * p


def _icbrt(x: int) -> int:
    """Largest integer ``r >= 0`` with ``r**3 <= x``."""
    if x <= 0:
        return 0
    r = int(round(x ** (1.0 / 3.0))) if x < 2**1000 else int(math.exp(math.log(x) / 3))
    while r**3 > x:
        r -= 1
    while (r + 1) ** 3 <= x:
        r += 1
    return r


def solve_layers(c_total, gamma: int, n_exp: int, g=4) -> int:
    """Deepest ``l`` with ``gamma^2 l^3 (4 + 3 n_exp / g) <= c_total``; 0 if none."""
    factor, rhs = _budget_terms(as_rational(c_total), as_rational(g), n_exp)
    return _icbrt(rhs // (gamma * gamma * factor))


def align_width(gamma: int, l: int, k_align: int, c_total, n_exp: int, g=4,
                rounding: RoundingMode = "half_even") -> int:
    """Aligned width ``d`` for depth ``l`` that fits ``c_total``; 0 if none.

    Starts from ``gamma l`` rounded to a multiple of ``k_align`` and steps
    down by ``k_align`` while the total budget is exceeded.
    """
    if l < 1:
        return 0
    factor, rhs = _budget_terms(as_rational(c_total), as_rational(g), n_exp)
    d = round_rational(Fraction(gamma * l, k_align), rounding) * k_align
    while d > 0 and l * d * d * factor > rhs:
        d -= k_align
    return max(d, 0)


def solve_topk(c_active, l: int, d: int, n_exp: int, g=4) -> int:
    """``min(n_exp, floor((g/3) (c_active / (l d^2) - 4)))``; values below 1 mean rejection."""
    c, g = as_rational(c_active), as_rational(g)
    core = l * d * d
    # (p/q)/3 * (a/b - 4 core)/core = p (a - 4 core b) / (3 q b core)
    num = g.numerator * (c.numerator - 4 * core * c.denominator)
    den = 3 * g.denominator * c.denominator * core
    return min(n_exp, num // den)


def loss_proxy(dims: ModelDims, exponents: Sequence[float] = LOSS_EXPONENTS) -> float:
    """``N_total^e1 * n_exp^e2 * n_topk^e3``, evaluated in log space."""
    return _proxy(float(Fraction(total_params(dims))), dims.n_exp, dims.n_topk, exponents)


def _proxy(n_total: float, n_exp: int, n_topk: int, exponents) -> float:
    e1, e2, e3 = exponents
    log_value = e1 * math.log(n_total) + e2 * math.log(n_exp) + e3 * math.log(n_topk)
    return math.exp(log_value)


def _evaluate_cell(constraints: Constraints, n_exp: int, gamma: int) -> CellResult:
    g = constraints.g
    l = solve_layers(constraints.c_total, gamma, n_exp, g)
    if l < 1:
        return CellResult(n_exp, gamma, None, "depth")
    d = align_width(gamma, l, constraints.k_align, constraints.c_total, n_exp, g,
                    constraints.rounding)
    if d < 1:
        return CellResult(n_exp, gamma, None, "width")
    n_topk = solve_topk(constraints.c_active, l, d, n_exp, g)
    if n_topk < 1:
        return CellResult(n_exp, gamma, None, "active")
    dims = ModelDims(l, d, g, n_exp, n_topk)
    return CellResult(n_exp, gamma, ConfigCandidate.build(dims, constraints, gamma))


def _best(cells) -> Optional[ConfigCandidate]:
    found = [c.candidate for c in cells if c.candidate is not None]
    return min(found, key=ConfigCandidate.rank_key) if found else None


def optimize(constraints: Constraints) -> PlanResult:
    """Run the per-cell greedy search over ``n_exp_grid x gamma_range``.

    ``PlanResult.candidate`` is ``None`` when no cell is feasible; ``cells``
    always holds every cell in grid order for diagnostics.
    """
    cells = [_evaluate_cell(constraints, n_exp, gamma)
             for n_exp in constraints.n_exp_grid for gamma in constraints.gammas]
    return PlanResult(_best(cells), cells)


# -- exhaustive oracle -------------------------------------------------------

def _cell_enumeration(constraints: Constraints, n_exp: int, gamma: int, mode: str):
    """Best candidate of one cell by enumeration over integer arrays.

    ``mode="greedy"`` picks the cell's point by brute-force characterization
    of the greedy rule (max ``l``, then max aligned ``d`` below the rounded
    target); ``mode="exhaustive"`` scans every ``l`` up to that bound and
    every aligned ``d`` up to ``round(gamma l)``.
    """
    k = constraints.k_align
    factor, rhs = _budget_terms(constraints.c_total, constraints.g, n_exp)
    # active budget: l d^2 (4p + 3 t q) b_a <= a_a p, with t = n_topk
    p, q = constraints.g.numerator, constraints.g.denominator
    b_a, a_a = constraints.c_active.denominator, constraints.c_active.numerator

    # brute-force depth bound: all l with gamma^2 l^3 factor <= rhs
    l_max = 0
    while gamma * gamma * (l_max + 1) ** 3 * factor <= rhs:
        l_max += 1
    if l_max == 0:
        return None
    ls = [l_max] if mode == "greedy" else range(1, l_max + 1)

    best_key, best_dims = None, None
    expert_term = 4 * p + 3 * n_exp * q
    for l in ls:
        top = round_rational(Fraction(gamma * l, k), constraints.rounding)
        ds = [m * k for m in range(top, 0, -1) if l * (m * k) ** 2 * factor <= rhs]
        if mode == "greedy":
            ds = ds[:1]
        t = 0
        # ds is decreasing, so the largest feasible top-k only grows along it
        for d in ds:
            core = l * d * d
            while t < n_exp and core * (4 * p + 3 * (t + 1) * q) * b_a <= a_a * p:
                t += 1
            if t == 0:
                continue
            num = core * expert_term
            key = (_proxy(num / p, n_exp, t, constraints.exponents), n_exp, -t, -num, gamma)
            if best_key is None or key < best_key:
                best_key, best_dims = key, (l, d, t)
    if best_dims is None:
        return None
    l, d, t = best_dims
    return ConfigCandidate.build(ModelDims(l, d, constraints.g, n_exp, t), constraints, gamma)


def brute_force_optimize(constraints: Constraints, mode: str = "greedy",
                         max_points: int = 2_000_000) -> PlanResult:
    """Enumeration-based counterpart of :func:`optimize` for small budgets.

    ``mode="greedy"`` reproduces the search's candidate set without the
    closed-form steps; ``mode="exhaustive"`` also considers every shallower
    or narrower aligned ``(l, d)`` per cell, so its proxy is never worse.
    Raises :class:`SearchSpaceTooLarge` when the estimated number of
    enumerated ``(l, d)`` points exceeds ``max_points``.
    """
    if mode not in ("greedy", "exhaustive"):
        raise ValueError(f"unknown mode {mode!r}")
    g = float(constraints.g)
    c = float(constraints.c_total)
    est = 0
    for n_exp in constraints.n_exp_grid:
        for gamma in constraints.gammas:
            l_max = (c / (gamma * gamma * (4 + 3 * n_exp / g))) ** (1 / 3)
            widths = gamma * l_max / constraints.k_align + 1
            est += widths if mode == "greedy" else l_max * widths
    if est > max_points:
        raise SearchSpaceTooLarge(
            f"about {est:.3g} (l, d) points to enumerate, cap is {max_points}"
        )

    cells = []
    for n_exp in constraints.n_exp_grid:
        for gamma in constraints.gammas:
            cand = _cell_enumeration(constraints, n_exp, gamma, mode)
            cells.append(CellResult(n_exp, gamma, cand, "" if cand else "enumeration"))
    return PlanResult(_best(cells), cells)


@dataclass
class OracleComparison:
    """Greedy search vs. exhaustive enumeration, cell by cell.

    ``gaps`` lists ``(n_exp, gamma, greedy_proxy, exhaustive_proxy)`` for
    cells where enumeration found a strictly better point.
    """

    greedy: PlanResult
    exhaustive: PlanResult
    gaps: list

    @property
    def greedy_is_optimal(self) -> bool:
        if self.exhaustive.candidate is None:
            return self.greedy.candidate is None
        if self.greedy.candidate is None:
            return False
        return self.greedy.candidate.loss_proxy <= self.exhaustive.candidate.loss_proxy


def compare_with_oracle(constraints: Constraints, **kwargs) -> OracleComparison:
    greedy = optimize(constraints)
    exhaustive = brute_force_optimize(constraints, mode="exhaustive", **kwargs)
    gaps = []
    for gc, ec in zip(greedy.cells, exhaustive.cells):
        if ec.candidate is None:
            continue
        g_proxy = gc.candidate.loss_proxy if gc.candidate else math.inf
        if ec.candidate.loss_proxy < g_proxy:
            gaps.append((gc.n_exp, gc.gamma, g_proxy, ec.candidate.loss_proxy))
    return OracleComparison(greedy, exhaustive, gaps)
