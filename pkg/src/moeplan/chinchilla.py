"""Chinchilla-form loss curves ``L = A N^-alpha + B D^-beta + E``.

Fitting works in log space: with ``a, b, e = ln A, ln B, ln E`` the model's
log-loss is ``logsumexp(a - alpha ln N, b - beta ln D, e)``, which keeps A, B
and E positive and never overflows. The objective is the Huber loss of the
log residuals, minimized by BFGS from every point of a fixed start grid. All
starts run together as one vectorized batch.

Units: ``N`` is the raw non-embedding parameter count and ``D`` the raw token
count. Coefficients fitted in other units (e.g. billions) are not
interchangeable with these.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConvergenceError, IdentifiabilityError

__all__ = [
    "CurvePoint",
    "ChinchillaFit",
    "ComparisonReport",
    "DEFAULT_INIT_GRID",
    "chinchilla_eval",
    "huber",
    "objective",
    "fit_chinchilla",
    "compare_configs",
    "bfgs_batch",
    "InitGrid",
    "DEFAULT_INIT_GRID",
    "COARSE_INIT_GRID",
]

PARAM_NAMES = ("a", "b", "e", "alpha", "beta")


@dataclass(frozen=True)
class CurvePoint:
    n_total: float
    tokens_D: float
    loss: float

    def __post_init__(self):
        for name in ("n_total", "tokens_D", "loss"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class InitGrid:
    """Start values for the multi-start search (log-coefficients and exponents)."""

    a: tuple = (0.0, 5.0, 10.0, 15.0, 20.0)
    b: tuple = (0.0, 5.0, 10.0, 15.0, 20.0)
    e: tuple = (-1.0, 0.0, 1.0)
    alpha: tuple = tuple(round(0.1 * i, 1) for i in range(10))
    beta: tuple = tuple(round(0.1 * i, 1) for i in range(10))

    def points(self) -> np.ndarray:
        """Grid points in ``(a, b, e, alpha, beta)`` order, last axis fastest."""
        return np.array(list(itertools.product(self.a, self.b, self.e, self.alpha, self.beta)),
                        dtype=float)


DEFAULT_INIT_GRID = InitGrid()
# 36 starts; enough for well-identified laws, much faster than the default
COARSE_INIT_GRID = InitGrid(a=(0.0, 5.0, 10.0), b=(0.0, 5.0, 10.0), e=(0.0,),
                            alpha=(0.2, 0.5), beta=(0.2, 0.5))


@dataclass(frozen=True)
class ChinchillaFit:
    A: float
    B: float
    E: float
    alpha: float
    beta: float
    objective_value: float = 0.0
    converged: bool = True
    start_point: tuple = ()
    delta: float = 1e-3
    iterations: int = 0
    n_starts: int = 0
    n_converged: int = 0

    def __post_init__(self):
        for name in ("A", "B", "E"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @classmethod
    def from_log_params(cls, theta, **meta) -> "ChinchillaFit":
        a, b, e, alpha, beta = (float(v) for v in theta)
        return cls(A=math.exp(a), B=math.exp(b), E=math.exp(e), alpha=alpha, beta=beta, **meta)

    @property
    def log_params(self) -> np.ndarray:
        return np.array([math.log(self.A), math.log(self.B), math.log(self.E),
                         self.alpha, self.beta])

    @property
    def coefficients(self) -> dict:
        return dict(A=self.A, B=self.B, E=self.E, alpha=self.alpha, beta=self.beta)

    def degenerate(self, n_total=None, tokens_D=None, tol: float = 1e-3) -> bool:
        """True when a power-law term is numerically absent.

        That is an exponent below ``tol``, or, when data are given, a term
        contributing less than ``tol`` of the predicted loss at every point.
        """
        if self.alpha < tol or self.beta < tol:
            return True
        if n_total is None or tokens_D is None:
            return False
        n = np.asarray(n_total, dtype=float)
        d = np.asarray(tokens_D, dtype=float)
        loss = chinchilla_eval(self, n, d)
        n_term = self.A * n ** (-self.alpha) / loss
        d_term = self.B * d ** (-self.beta) / loss
        return bool(np.max(n_term) < tol or np.max(d_term) < tol)

    def predict(self, n_total, tokens_D):
        return chinchilla_eval(self, n_total, tokens_D)


def chinchilla_eval(fit: ChinchillaFit, n_total, tokens_D):
    """``A N^-alpha + B D^-beta + E``; accepts scalars or arrays."""
    n = np.asarray(n_total, dtype=float)
    d = np.asarray(tokens_D, dtype=float)
    if np.any(n <= 0) or np.any(d <= 0):
        raise ValueError("n_total and tokens_D must be positive")
    out = fit.A * n ** (-fit.alpha) + fit.B * d ** (-fit.beta) + fit.E
    return float(out) if out.ndim == 0 else out


def huber(residual, delta: float):
    """Huber penalty: ``r^2/2`` inside ``|r| <= delta``, ``delta(|r| - delta/2)`` outside."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    r = np.asarray(residual, dtype=float)
    abs_r = np.abs(r)
    out = np.where(abs_r <= delta, 0.5 * r * r, delta * (abs_r - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def _batch_objective(theta: np.ndarray, log_n, log_d, log_l, delta):
    """Objective and gradient for a batch of parameter rows ``theta`` (S x 5)."""
    a, b, e, alpha, beta = (theta[:, k:k + 1] for k in range(5))
    u1 = a - alpha * log_n
    u2 = b - beta * log_d
    u3 = np.broadcast_to(e, u1.shape)
    m = np.maximum(np.maximum(u1, u2), u3)
    w1, w2, w3 = np.exp(u1 - m), np.exp(u2 - m), np.exp(u3 - m)
    total = w1 + w2 + w3
    lse = m + np.log(total)
    w1, w2, w3 = w1 / total, w2 / total, w3 / total

    r = lse - log_l
    abs_r = np.abs(r)
    f = np.where(abs_r <= delta, 0.5 * r * r, delta * (abs_r - 0.5 * delta)).sum(axis=1)
    psi = np.clip(r, -delta, delta)

    grad = np.empty_like(theta)
    grad[:, 0] = (psi * w1).sum(axis=1)
    grad[:, 1] = (psi * w2).sum(axis=1)
    grad[:, 2] = (psi * w3).sum(axis=1)
    grad[:, 3] = -(psi * w1 * log_n).sum(axis=1)
    grad[:, 4] = -(psi * w2 * log_d).sum(axis=1)
    return f, grad


def _as_arrays(data) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(data, tuple) and len(data) == 3:
        n, d, l = (np.asarray(v, dtype=float) for v in data)
    else:
        pts = list(data)
        n = np.array([p.n_total for p in pts], dtype=float)
        d = np.array([p.tokens_D for p in pts], dtype=float)
        l = np.array([p.loss for p in pts], dtype=float)
    if n.size == 0:
        raise ValueError("no data points")
    if np.any(n <= 0) or np.any(d <= 0) or np.any(l <= 0):
        raise ValueError("curve data must be strictly positive")
    return n, d, l


def objective(log_params, data, delta: float = 1e-3) -> tuple[float, np.ndarray]:
    """Huber loss of ``logsumexp(...) - ln L`` summed over ``data``, with its gradient.

    ``log_params`` is ``(a, b, e, alpha, beta)``; ``data`` is a sequence of
    :class:`CurvePoint` or a tuple of arrays ``(N, D, L)``.
    """
    n, d, l = _as_arrays(data)
    theta = np.asarray(log_params, dtype=float).reshape(1, 5)
    f, g = _batch_objective(theta, np.log(n)[None], np.log(d)[None], np.log(l)[None], delta)
    return float(f[0]), g[0]


@dataclass
class BatchResult:
    x: np.ndarray
    f: np.ndarray
    grad_norm: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray


def bfgs_batch(fun, x0, gtol: float = 1e-8, maxiter: int = 1000,
               c1: float = 1e-4, max_backtracks: int = 60) -> BatchResult:
    """Minimize many independent problems at once with BFGS.

    ``fun(X)`` maps an ``(S, k)`` array to ``(f, grad)`` with shapes ``(S,)`` and
    ``(S, k)``. Each row keeps its own inverse-Hessian estimate. Steps use
    Armijo backtracking from unit length; the curvature update is skipped
    when ``s.y <= 0``. A row stops once its gradient norm is ``<= gtol``, on a
    failed line search, or at ``maxiter``.
    """
    x = np.array(x0, dtype=float, copy=True)
    S, k = x.shape
    f, g = fun(x)
    H = np.tile(np.eye(k), (S, 1, 1))
    fresh = np.ones(S, dtype=bool)
    running = np.isfinite(f) & np.all(np.isfinite(g), axis=1)
    iterations = np.zeros(S, dtype=int)

    for _ in range(maxiter):
        gnorm = np.linalg.norm(g, axis=1)
        running &= gnorm > gtol
        idx = np.flatnonzero(running)
        if idx.size == 0:
            break

        gi = g[idx]
        p = -np.einsum("sij,sj->si", H[idx], gi)
        slope = np.einsum("si,si->s", gi, p)
        uphill = slope >= 0
        if uphill.any():
            H[idx[uphill]] = np.eye(k)
            p[uphill] = -gi[uphill]
            slope[uphill] = -np.einsum("si,si->s", gi[uphill], gi[uphill])

        step = np.ones(idx.size)
        accepted = np.zeros(idx.size, dtype=bool)
        x_new = np.empty_like(p)
        f_new = np.empty(idx.size)
        g_new = np.empty_like(p)
        pending = np.arange(idx.size)
        for _ in range(max_backtracks):
            trial = x[idx[pending]] + step[pending, None] * p[pending]
            ft, gt = fun(trial)
            ok = np.isfinite(ft) & (ft <= f[idx[pending]] + c1 * step[pending] * slope[pending])
            ok &= np.all(np.isfinite(gt), axis=1)
            done = pending[ok]
            x_new[done], f_new[done], g_new[done] = trial[ok], ft[ok], gt[ok]
            accepted[done] = True
            pending = pending[~ok]
            if pending.size == 0:
                break
            step[pending] *= 0.5

        failed = idx[~accepted]
        running[failed] = False

        moved = np.flatnonzero(accepted)
        rows = idx[moved]
        s = x_new[moved] - x[rows]
        y = g_new[moved] - g[rows]
        sy = np.einsum("si,si->s", s, y)
        x[rows], f[rows], g[rows] = x_new[moved], f_new[moved], g_new[moved]
        iterations[rows] += 1

        upd = sy > 1e-300
        if upd.any():
            r, su, yu, syu = rows[upd], s[upd], y[upd], sy[upd]
            first = fresh[r]
            if first.any():
                yy = np.einsum("si,si->s", yu[first], yu[first])
                H[r[first]] = (syu[first] / yy)[:, None, None] * np.eye(k)
                fresh[r[first]] = False
            rho = 1.0 / syu
            Hy = np.einsum("sij,sj->si", H[r], yu)
            yHy = np.einsum("si,si->s", yu, Hy)
            H[r] += ((1.0 + rho * yHy) * rho)[:, None, None] * np.einsum("si,sj->sij", su, su)
            H[r] -= rho[:, None, None] * (np.einsum("si,sj->sij", Hy, su)
                                          + np.einsum("si,sj->sij", su, Hy))

    gnorm = np.linalg.norm(g, axis=1)
    return BatchResult(x=x, f=f, grad_norm=gnorm, converged=gnorm <= gtol,
                       iterations=iterations)


def fit_chinchilla(
    data,
    delta: float = 1e-3,
    init_grid: Optional[InitGrid | np.ndarray] = None,
    gtol: float = 1e-8,
    maxiter: int = 1000,
) -> ChinchillaFit:
    """Fit ``A N^-alpha + B D^-beta + E`` by multi-start BFGS on the Huber objective.

    Every start in ``init_grid`` is run; the lowest objective among finite
    results with non-negative exponents wins, ties going to the earliest
    start. Deterministic for fixed data and grid.
    """
    n, d, l = _as_arrays(data)
    if n.size < 5:
        raise IdentifiabilityError(f"need at least 5 points, got {n.size}")
    if np.unique(n).size < 2:
        raise IdentifiabilityError("all points share one N value; alpha and A are not identifiable")
    if np.unique(d).size < 2:
        raise IdentifiabilityError("all points share one D value; beta and B are not identifiable")

    if init_grid is None:
        init_grid = DEFAULT_INIT_GRID
    starts = init_grid.points() if isinstance(init_grid, InitGrid) else np.atleast_2d(
        np.asarray(init_grid, dtype=float))
    if starts.shape[1] != 5:
        raise ValueError("init grid rows must be (a, b, e, alpha, beta)")

    log_n, log_d, log_l = np.log(n)[None], np.log(d)[None], np.log(l)[None]

    def fun(theta):
        with np.errstate(over="ignore", invalid="ignore"):
            return _batch_objective(theta, log_n, log_d, log_l, delta)

    res = bfgs_batch(fun, starts, gtol=gtol, maxiter=maxiter)

    finite = np.isfinite(res.f) & np.all(np.isfinite(res.x), axis=1)
    admissible = finite & (res.x[:, 3] >= 0) & (res.x[:, 4] >= 0)
    # exp(e) etc. must stay representable for the fit to be usable
    admissible &= np.all(np.abs(res.x[:, :3]) < 700, axis=1)
    meta = dict(delta=delta, n_starts=len(starts), n_converged=int(res.converged.sum()))

    if not admissible.any():
        best = None
        if finite.any():
            j = int(np.flatnonzero(finite)[np.argmin(res.f[finite])])
            best = res.x[j].copy()
        raise ConvergenceError("no start reached an admissible optimum", best=best)

    candidates = np.flatnonzero(admissible)
    j = int(candidates[np.argmin(res.f[candidates])])
    fit = ChinchillaFit.from_log_params(
        res.x[j],
        objective_value=float(res.f[j]),
        converged=bool(res.converged[j]),
        start_point=tuple(float(v) for v in starts[j]),
        iterations=int(res.iterations[j]),
        **meta,
    )
    if not fit.converged:
        warnings.warn(
            f"best start stopped with gradient norm {res.grad_norm[j]:.3g} > {gtol}",
            RuntimeWarning, stacklevel=2,
        )
    return fit


@dataclass
class ComparisonReport:
    """Predicted losses of two fits over an ``(N, D)`` grid.

    ``rows`` holds ``(N, D, loss_a, loss_b, loss_a - loss_b)``.
    """

    label_a: str
    label_b: str
    rows: np.ndarray
    dominance_fraction: float

    @property
    def sign(self) -> np.ndarray:
        return np.sign(self.rows[:, 4])

    def series(self) -> dict:
        """Per-D slices: ``{D: array of (N, loss_a, loss_b)}`` sorted by N."""
        out = {}
        for dval in np.unique(self.rows[:, 1]):
            block = self.rows[self.rows[:, 1] == dval]
            block = block[np.argsort(block[:, 0], kind="stable")]
            out[float(dval)] = block[:, [0, 2, 3]]
        return out

    def table(self) -> str:
        head = f"{'N':>14}{'D':>14}{self.label_a:>14}{self.label_b:>14}{'a - b':>14}"
        lines = [head]
        for n, d, la, lb, diff in self.rows:
            lines.append(f"{n:>14.6g}{d:>14.6g}{la:>14.6g}{lb:>14.6g}{diff:>14.4g}")
        lines.append(f"{self.label_a} lower on {self.dominance_fraction:.1%} of points")
        return "\n".join(lines)


def compare_configs(
    fit_a: ChinchillaFit,
    fit_b: ChinchillaFit,
    n_values: Iterable[float],
    d_values: Iterable[float],
    labels: Sequence[str] = ("a", "b"),
) -> ComparisonReport:
    """Evaluate both fits on the product grid and count where ``fit_a`` is lower."""
    n_values = np.asarray(list(n_values), dtype=float)
    d_values = np.asarray(list(d_values), dtype=float)
    if n_values.size == 0 or d_values.size == 0:
        raise ValueError("empty comparison grid")
    nn, dd = np.meshgrid(n_values, d_values)
    nn, dd = nn.ravel(), dd.ravel()
    la = np.atleast_1d(chinchilla_eval(fit_a, nn, dd))
    lb = np.atleast_1d(chinchilla_eval(fit_b, nn, dd))
    rows = np.column_stack([nn, dd, la, lb, la - lb])
    return ComparisonReport(labels[0], labels[1], rows, float(np.mean(la < lb)))
