"""Log-log OLS fits of loss against MoE size variables, with diagnostics.

A feature specification lists log-terms such as ``log(N_total)`` or products
``log(N_total)*log(s)``; the response is always ``log(loss)`` and an intercept
is always included as the last design column. Natural logs throughout.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import linalg, special

from .accounting import ModelDims, active_params, total_params
from .errors import DesignError, MoEPlanError, SingularDesignError

__all__ = [
    "VARIABLES",
    "ExperimentRecord",
    "FeatureSpec",
    "FitReport",
    "SelectionEntry",
    "SparsityExponents",
    "build_design_matrix",
    "ols_fit",
    "fit_power_law",
    "student_t_sf",
    "model_selection",
    "predict_log_loss",
    "sparsity_form",
    "sparsity_form_exponents",
]

VARIABLES = ("N_total", "N_active", "s", "n_exp", "n_topk", "D")

_ALIASES = {
    "ntotal": "N_total",
    "n_total": "N_total",
    "nactive": "N_active",
    "n_active": "N_active",
    "s": "s",
    "sparsity": "s",
    "nexp": "n_exp",
    "n_exp": "n_exp",
    "ntopk": "n_topk",
    "n_topk": "n_topk",
    "d": "D",
    "tokens": "D",
    "tokens_d": "D",
}

_SHORT = {"N_total": "Ntotal", "N_active": "Nactive", "s": "s",
          "n_exp": "nexp", "n_topk": "ntopk", "D": "D"}

INTERCEPT = "const"


@dataclass(frozen=True)
class ExperimentRecord:
    """One trained model: its configuration, token count and held-out loss."""

    dims: ModelDims
    tokens_D: int
    loss_L: float

    def __post_init__(self):
        if not self.tokens_D > 0:
            raise ValueError(f"tokens_D must be positive, got {self.tokens_D}")
        if not (self.loss_L > 0 and math.isfinite(self.loss_L)):
            raise ValueError(f"loss_L must be positive and finite, got {self.loss_L}")

    @property
    def n_total(self):
        return total_params(self.dims)

    @property
    def n_active(self):
        return active_params(self.dims)

    @property
    def s(self):
        return self.dims.sparsity

    def value(self, name: str) -> float:
        """Raw (un-logged) value of a regression variable."""
        if name == "N_total":
            return float(self.n_total)
        if name == "N_active":
            return float(self.n_active)
        if name == "s":
            return float(self.s)
        if name == "n_exp":
            return float(self.dims.n_exp)
        if name == "n_topk":
            return float(self.dims.n_topk)
        if name == "D":
            return float(self.tokens_D)
        raise KeyError(f"unknown variable {name!r}")


@dataclass(frozen=True)
class FeatureSpec:
    """Ordered log-terms of a regression; each term is a tuple of variables.

    A one-variable term means ``log(v)``; a two-variable term means
    ``log(v1) * log(v2)``.
    """

    terms: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        terms = tuple(tuple(t) for t in self.terms)
        if not terms:
            raise ValueError("a feature spec needs at least one term")
        seen = set()
        for term in terms:
            if not 1 <= len(term) <= 2:
                raise ValueError(f"terms have one or two variables, got {term}")
            for v in term:
                if v not in VARIABLES:
                    raise ValueError(f"unknown variable {v!r}; expected one of {VARIABLES}")
            key = tuple(sorted(term))
            if key in seen:
                raise ValueError(f"duplicate term {self._label(term)}")
            seen.add(key)
        object.__setattr__(self, "terms", terms)

    @staticmethod
    def _label(term) -> str:
        return "*".join(f"log({v})" for v in term)

    @classmethod
    def parse(cls, text: str) -> "FeatureSpec":
        """Parse ``"Ntotal+nexp+ntopk"`` or ``"Ntotal+s+Ntotal*s"`` style strings."""
        terms = []
        for chunk in text.split("+"):
            chunk = chunk.strip()
            if not chunk:
                raise ValueError(f"empty term in spec {text!r}")
            names = []
            for raw in chunk.split("*"):
                raw = re.sub(r"^log\((.*)\)$", r"\1", raw.strip())
                key = raw.lower()
                if key not in _ALIASES:
                    raise ValueError(f"unknown variable {raw!r} in spec {text!r}")
                names.append(_ALIASES[key])
            terms.append(tuple(names))
        return cls(tuple(terms))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self._label(t) for t in self.terms)

    @property
    def variables(self) -> tuple[str, ...]:
        out = []
        for term in self.terms:
            for v in term:
                if v not in out:
                    out.append(v)
        return tuple(out)

    def __str__(self) -> str:
        return "+".join("*".join(_SHORT[v] for v in t) for t in self.terms)


@dataclass
class FitReport:
    """OLS estimates and diagnostics. Arrays are aligned with ``names``."""

    names: tuple[str, ...]
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    r_squared: float
    condition_number: float
    n_obs: int
    significant: np.ndarray
    multicollinearity_flag: bool
    residuals: np.ndarray = field(repr=False)
    spec: Optional[FeatureSpec] = None
    alpha: float = 0.05

    @property
    def dof(self) -> int:
        return self.n_obs - len(self.names)

    @property
    def intercept(self) -> float:
        return float(self.coefficients[self.names.index(INTERCEPT)])

    def coef(self, name: str) -> float:
        """Coefficient by column label, e.g. ``"log(N_total)"``, or by variable name."""
        if name in self.names:
            return float(self.coefficients[self.names.index(name)])
        label = f"log({name})"
        if label in self.names:
            return float(self.coefficients[self.names.index(label)])
        raise KeyError(name)

    def summary(self) -> str:
        head = f"{'term':<32}{'coef':>14}{'std err':>12}{'t':>10}{'P>|t|':>10}  sig"
        lines = [head, "-" * len(head)]
        for i, name in enumerate(self.names):
            lines.append(
                f"{name:<32}{self.coefficients[i]:>14.6g}{self.std_errors[i]:>12.4g}"
                f"{self.t_stats[i]:>10.3g}{self.p_values[i]:>10.3g}  "
                f"{'*' if self.significant[i] else ''}"
            )
        lines.append(f"R^2 = {self.r_squared:.6f}   n = {self.n_obs}   "
                     f"cond = {self.condition_number:.4g}"
                     + ("   (multicollinearity)" if self.multicollinearity_flag else ""))
        return "\n".join(lines)


def student_t_sf(t, dof):
    """Upper tail ``P(T > t)`` of Student's t with ``dof`` degrees of freedom.

    Uses the regularized incomplete beta function:
    ``P(|T| > |t|) = I_{dof/(dof+t^2)}(dof/2, 1/2)``.
    """
    t = np.asarray(t, dtype=float)
    dof = np.asarray(dof, dtype=float)
    if np.any(dof <= 0):
        raise ValueError("dof must be positive")
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(np.isinf(t), 0.0, dof / (dof + t * t))
    half_tail = 0.5 * special.betainc(dof / 2.0, 0.5, x)
    out = np.where(t >= 0, half_tail, 1.0 - half_tail)
    out = np.where(np.isnan(t), np.nan, out)
    return out[()] if out.ndim == 0 else out


def build_design_matrix(
    records: Sequence[ExperimentRecord], spec: FeatureSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix (terms then an intercept column) and ``log(loss)`` response."""
    n, p = len(records), len(spec.terms) + 1
    if n < p:
        raise DesignError(f"need at least {p} observations for {p} coefficients, got {n}")
    logs = {}
    for v in spec.variables:
        raw = np.array([r.value(v) for r in records], dtype=float)
        if np.any(raw <= 0):
            bad = int(np.argmax(raw <= 0))
            raise DesignError(f"{v} is not positive in record {bad} ({raw[bad]})")
        logs[v] = np.log(raw)

    X = np.ones((n, p))
    for j, term in enumerate(spec.terms):
        col = logs[term[0]].copy()
        for v in term[1:]:
            col *= logs[v]
        X[:, j] = col
    y = np.log(np.array([r.loss_L for r in records], dtype=float))
    return X, y


def _condition_number(X: np.ndarray) -> float:
    cols = []
    for col in X.T:
        sd = col.std()
        if sd == 0:
            cols.append(np.ones_like(col))
        else:
            cols.append((col - col.mean()) / sd)
    sv = np.linalg.svd(np.column_stack(cols), compute_uv=False)
    return float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf


def _check_rank(X: np.ndarray, names: Sequence[str], rtol: float) -> None:
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        j = int(np.argmax(norms == 0))
        raise SingularDesignError(f"column {names[j]} is identically zero", [names[j]])
    _, sv, vt = np.linalg.svd(X / norms, full_matrices=False)
    rank = int(np.sum(sv > rtol * sv[0]))
    if rank < X.shape[1]:
        null = vt[rank:]
        involved = [names[j] for j in range(X.shape[1])
                    if np.any(np.abs(null[:, j]) > 1e-6)]
        raise SingularDesignError(
            f"design is rank deficient (rank {rank} < {X.shape[1]}); "
            f"dependent columns: {', '.join(involved)}",
            involved,
        )


def ols_fit(
    X,
    y,
    names: Optional[Sequence[str]] = None,
    alpha: float = 0.05,
    collinearity_threshold: float = 30.0,
    rank_rtol: float = 1e-10,
) -> FitReport:
    """Ordinary least squares via a QR decomposition, with t-tests.

    ``condition_number`` is computed on the design with every non-constant
    column standardized (zero mean, unit variance) and constant columns
    replaced by ones; it is flagged above ``collinearity_threshold``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DesignError(f"shape mismatch: X {X.shape}, y {y.shape}")
    n, p = X.shape
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(p))
    if len(names) != p:
        raise DesignError(f"{len(names)} names for {p} columns")
    if n < p:
        raise DesignError(f"underdetermined design: n={n}, p={p}")
    _check_rank(X, names, rank_rtol)

    Q, R = np.linalg.qr(X)
    beta = linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ beta
    ssr = float(resid @ resid)
    dof = n - p
    if dof == 0:
        # exact interpolation: coefficients are defined, inference is not
        se = t = p_values = np.full(p, np.nan)
    else:
        sigma2 = ssr / dof
        R_inv = linalg.solve_triangular(R, np.eye(p))
        se = np.sqrt(sigma2 * np.sum(R_inv**2, axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(se > 0, beta / se, np.sign(beta) * np.inf)
        p_values = 2.0 * student_t_sf(np.abs(t), dof)
        p_values = np.where(np.isnan(t), 1.0, p_values)

    centered = y - y.mean()
    sst = float(centered @ centered)
    r2 = 1.0 - ssr / sst if sst > 0 else 1.0
    if dof == 0:
        r2 = 1.0

    cond = _condition_number(X)
    return FitReport(
        names=names,
        coefficients=beta,
        std_errors=se,
        t_stats=t,
        p_values=np.asarray(p_values, dtype=float),
        r_squared=r2,
        condition_number=cond,
        n_obs=n,
        significant=np.asarray(p_values < alpha),
        multicollinearity_flag=bool(cond > collinearity_threshold),
        residuals=resid,
        alpha=alpha,
    )


def fit_power_law(records: Sequence[ExperimentRecord], spec: FeatureSpec, **kwargs) -> FitReport:
    """Build the log-log design for ``spec`` and fit it."""
    X, y = build_design_matrix(records, spec)
    report = ols_fit(X, y, names=spec.labels + (INTERCEPT,), **kwargs)
    report.spec = spec
    return report


@dataclass
class SelectionEntry:
    spec: FeatureSpec
    report: Optional[FitReport] = None
    error: Optional[str] = None
    verdicts: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.report is not None


def _verdicts(report: FitReport) -> tuple[str, ...]:
    notes = []
    terms = report.spec.terms
    if any(len(t) > 1 and not report.significant[j] for j, t in enumerate(terms)):
        notes.append("redundant interaction")
    if report.multicollinearity_flag:
        notes.append("multicollinearity")
    if any(len(t) == 1 and report.p_values[j] >= report.alpha for j, t in enumerate(terms)):
        notes.append("low significance")
    return tuple(notes)


def model_selection(
    records: Sequence[ExperimentRecord], specs: Iterable[FeatureSpec], **kwargs
) -> list[SelectionEntry]:
    """Fit every spec and rank by R^2 (descending); failed specs go last.

    A spec that cannot be fitted is kept with its error message instead of
    aborting the batch. Ties keep the input order.
    """
    entries = []
    for spec in specs:
        try:
            report = fit_power_law(records, spec, **kwargs)
        except (MoEPlanError, ValueError) as exc:
            entries.append(SelectionEntry(spec, error=str(exc)))
            continue
        entries.append(SelectionEntry(spec, report, verdicts=_verdicts(report)))
    fitted = sorted((e for e in entries if e.ok), key=lambda e: -e.report.r_squared)
    return fitted + [e for e in entries if not e.ok]


def predict_log_loss(report: FitReport, record: ExperimentRecord) -> float:
    """``intercept + sum(coef_i * term_i(record))`` for a spec-carrying report."""
    if report.spec is None:
        raise ValueError("report has no feature spec attached")
    out = report.intercept
    for j, term in enumerate(report.spec.terms):
        value = 1.0
        for v in term:
            raw = record.value(v)
            if raw <= 0:
                raise DesignError(f"{v} is not positive ({raw})")
            value *= math.log(raw)
        out += float(report.coefficients[j]) * value
    return out


@dataclass(frozen=True)
class SparsityExponents:
    """Loss exponents over ``(N_total, s, n_exp)``."""

    n_total: float
    s: float
    n_exp: float


def sparsity_form_exponents(e_total, e_exp, e_topk) -> SparsityExponents:
    """Rewrite ``N^a n_exp^b n_topk^c`` as ``N^a s^(-c) n_exp^(b+c)``.

    Works on any number type; Fractions stay exact.
    """
    return SparsityExponents(n_total=e_total, s=-e_topk, n_exp=e_exp + e_topk)


def sparsity_form(report: FitReport) -> SparsityExponents:
    """Sparsity-form exponents of a fit over ``N_total + n_exp + n_topk``."""
    return sparsity_form_exponents(
        report.coef("N_total"), report.coef("n_exp"), report.coef("n_topk")
    )
