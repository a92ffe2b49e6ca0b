"""Non-embedding parameter accounting for fine-grained MoE transformers.

Every layer holds a dense attention block of ``4 d^2`` weights and ``n_exp``
experts of ``3 d d_exp`` weights each, with ``d_exp = d / g``. Hence::

    n_total  = l d^2 (4 + 3 n_exp / g)
    n_active = l d^2 (4 + 3 n_topk / g)

Counts are evaluated with exact rational arithmetic. They come back as ``int``
whenever the result is integral and as :class:`fractions.Fraction` otherwise
(for instance with a fractional granularity such as ``g = 2.7``).
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Literal, Union

from .errors import InfeasibleBudgetError, InvalidDimsError

Count = Union[int, Fraction]
RoundingMode = Literal["half_even", "half_up", "floor", "ceil"]

__all__ = [
    "ModelDims",
    "ParamBudget",
    "SparsityStats",
    "ExpertSolution",
    "as_rational",
    "total_params",
    "active_params",
    "param_budget",
    "sparsity_stats",
    "active_ratio_formula",
    "granularity_variants",
    "solve_experts_for_budget",
    "budget_deviation",
    "round_rational",
]


def as_rational(value) -> Fraction:
    """Convert ints, rationals, floats and numeric strings to an exact Fraction.

    Floats go through their shortest repr, so ``2.7`` becomes ``27/10`` rather
    than the nearest binary fraction.
    """
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, Rational):
        return Fraction(value.numerator, value.denominator)
    if isinstance(value, str):
        return Fraction(value.strip())
    try:
        return Fraction(operator.index(value))
    except TypeError:
        pass
    x = float(value)
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {value!r}")
    return Fraction(repr(x))


def _normalize(x: Fraction) -> Count:
    return x.numerator if x.denominator == 1 else x


def _as_int(name: str, value) -> int:
    if isinstance(value, bool):
        raise InvalidDimsError(f"{name} must be an integer, got {value!r}")
    try:
        return operator.index(value)
    except TypeError:
        pass
    if isinstance(value, float) and value.is_integer():
        return int(value)
    raise InvalidDimsError(f"{name} must be an integer, got {value!r}")


def round_rational(x: Fraction, mode: RoundingMode = "half_even") -> int:
    """Round an exact rational to an integer under the given mode."""
    if mode == "half_even":
        return round(x)
    if mode == "half_up":
        return math.floor(x + Fraction(1, 2))
    if mode == "floor":
        return math.floor(x)
    if mode == "ceil":
        return math.ceil(x)
    raise ValueError(f"unknown rounding mode {mode!r}")


@dataclass(frozen=True)
class ModelDims:
    """A full MoE configuration: depth, width, granularity and expert counts.

    ``g`` is stored as an exact Fraction. With ``strict=True`` the expert
    hidden size ``d / g`` must be integral.
    """

    l: int
    d: int
    g: Fraction
    n_exp: int
    n_topk: int
    strict: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self):
        for name in ("l", "d", "n_exp", "n_topk"):
            object.__setattr__(self, name, _as_int(name, getattr(self, name)))
        try:
            g = as_rational(self.g)
        except (TypeError, ValueError, ZeroDivisionError) as exc:
            raise InvalidDimsError(f"g must be a positive number, got {self.g!r}") from exc
        object.__setattr__(self, "g", g)

        for name in ("l", "d", "n_exp", "n_topk"):
            if getattr(self, name) < 1:
                raise InvalidDimsError(f"{name} must be positive, got {getattr(self, name)}")
        if g <= 0:
            raise InvalidDimsError(f"g must be positive, got {g}")
        if self.n_topk > self.n_exp:
            raise InvalidDimsError(
                f"n_topk exceeds n_exp ({self.n_topk} > {self.n_exp})"
            )
        if self.strict and (self.d / g).denominator != 1:
            raise InvalidDimsError(
                f"expert hidden size d/g = {self.d}/{g} is not an integer"
            )

    @property
    def d_exp(self) -> Fraction:
        """Expert hidden dimension ``d / g`` (possibly fractional)."""
        return Fraction(self.d) / self.g

    @property
    def sparsity(self) -> Fraction:
        return Fraction(self.n_exp, self.n_topk)

    @property
    def gamma(self) -> Fraction:
        return Fraction(self.d, self.l)

    def replace(self, **changes) -> "ModelDims":
        fields = dict(l=self.l, d=self.d, g=self.g, n_exp=self.n_exp,
                      n_topk=self.n_topk, strict=self.strict)
        fields.update(changes)
        return ModelDims(**fields)

    def as_tuple(self) -> tuple:
        return (self.l, self.d, self.g, self.n_exp, self.n_topk)


@dataclass(frozen=True)
class ParamBudget:
    n_total: Count
    n_active: Count


@dataclass(frozen=True)
class SparsityStats:
    s: float
    gamma: float
    active_ratio: float


@dataclass(frozen=True)
class ExpertSolution:
    """Expert counts solved for a target budget, with achieved deviations.

    Deviations are signed percentages ``100 * (achieved / target - 1)``.
    """

    n_exp: int
    n_topk: int
    dims: ModelDims
    total_deviation_pct: float
    active_deviation_pct: float


def _count(dims: ModelDims, experts: int) -> Count:
    core = dims.l * dims.d * dims.d
    return _normalize(core * (4 + 3 * Fraction(experts) / dims.g))


def total_params(dims: ModelDims) -> Count:
    """Non-embedding parameter count, ``l d^2 (4 + 3 n_exp / g)``."""
    return _count(dims, dims.n_exp)


def active_params(dims: ModelDims) -> Count:
    """Parameters touched per token, ``l d^2 (4 + 3 n_topk / g)``."""
    return _count(dims, dims.n_topk)


def param_budget(dims: ModelDims) -> ParamBudget:
    return ParamBudget(total_params(dims), active_params(dims))


def sparsity_stats(dims: ModelDims) -> SparsityStats:
    ratio = Fraction(active_params(dims)) / Fraction(total_params(dims))
    return SparsityStats(
        s=float(dims.sparsity),
        gamma=float(dims.gamma),
        active_ratio=float(ratio),
    )


def active_ratio_formula(n_exp: float, g: float, s: float) -> float:
    """Active/total ratio at fixed total size, as a function of expert count.

    With ``n_topk = n_exp / s`` the core term ``l d^2`` cancels and the ratio
    is ``(4 + 3 n_exp / (g s)) / (4 + 3 n_exp / g)``. For ``s > 1`` it decreases
    in ``n_exp`` towards ``1 / s``.
    """
    if n_exp <= 0:
        raise ValueError(f"n_exp must be positive, got {n_exp}")
    if g <= 0:
        raise ValueError(f"g must be positive, got {g}")
    if s < 1:
        raise ValueError(f"sparsity must be >= 1, got {s}")
    per_expert = 3.0 * n_exp / g
    return (4.0 + per_expert / s) / (4.0 + per_expert)


def granularity_variants(base: ModelDims, factors: Iterable) -> list[ModelDims]:
    """Iso-budget variants that split every expert ``f`` ways.

    Each factor ``f`` maps ``(g, n_exp, n_topk)`` to ``(f g, f n_exp, f n_topk)``,
    leaving ``n_exp / g`` and ``n_topk / g`` and therefore both budgets
    unchanged.
    """
    variants = []
    for factor in factors:
        f = as_rational(factor)
        if f <= 0:
            raise InvalidDimsError(f"factor must be positive, got {factor!r}")
        n_exp, n_topk = f * base.n_exp, f * base.n_topk
        if n_exp.denominator != 1 or n_topk.denominator != 1:
            raise InvalidDimsError(
                f"factor {f} gives non-integral expert counts ({n_exp}, {n_topk})"
            )
        variants.append(base.replace(g=base.g * f, n_exp=int(n_exp), n_topk=int(n_topk)))
    return variants


def _deviation_pct(achieved, target) -> float:
    return float(100 * (Fraction(achieved) / Fraction(target) - 1))


def budget_deviation(dims: ModelDims, target_total, target_active) -> tuple[float, float]:
    """Signed percentage deviations of ``dims``' budgets from the targets.

    Returns ``(total_pct, active_pct)``.
    """
    return (
        _deviation_pct(total_params(dims), as_rational(target_total)),
        _deviation_pct(active_params(dims), as_rational(target_active)),
    )


def solve_experts_for_budget(
    l: int,
    d: int,
    g,
    target_total,
    target_active,
    rounding: RoundingMode = "half_even",
) -> ExpertSolution:
    """Pick ``(n_exp, n_topk)`` so that ``(l, d, g)`` lands near the targets.

    Both counts come from inverting the budget formulas and rounding,
    ``n = round((target / (l d^2) - 4) g / 3)``, then clamping to
    ``1 <= n_topk <= n_exp``.
    """
    l, d = _as_int("l", l), _as_int("d", d)
    if l < 1 or d < 1:
        raise InvalidDimsError("l and d must be positive")
    g = as_rational(g)
    if g <= 0:
        raise InvalidDimsError(f"g must be positive, got {g}")
    c_total, c_active = as_rational(target_total), as_rational(target_active)
    if c_active > c_total:
        raise InfeasibleBudgetError(
            f"active target {c_active} exceeds total target {c_total}"
        )
    core = l * d * d
    if c_active <= 4 * core:
        raise InfeasibleBudgetError(
            f"dense term 4 l d^2 = {4 * core} already meets the active target {c_active}"
        )

    n_exp = round_rational((c_total / core - 4) * g / 3, rounding)
    n_topk = round_rational((c_active / core - 4) * g / 3, rounding)
    n_exp = max(n_exp, 1)
    n_topk = min(max(n_topk, 1), n_exp)

    dims = ModelDims(l, d, g, n_exp, n_topk)
    total_dev, active_dev = budget_deviation(dims, c_total, c_active)
    return ExpertSolution(n_exp, n_topk, dims, total_dev, active_dev)
