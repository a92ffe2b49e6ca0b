"""Command-line interface.

Exit codes: 0 success, 2 input or validation error, 3 infeasible plan,
4 numerical non-convergence, 5 singular regression design.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import io
from .accounting import (
    ModelDims,
    as_rational,
    granularity_variants,
    param_budget,
    solve_experts_for_budget,
    sparsity_stats,
    total_params,
    active_params,
)
from .chinchilla import COARSE_INIT_GRID, DEFAULT_INIT_GRID, compare_configs, fit_chinchilla
from .errors import (
    ConvergenceError,
    FileFormatError,
    IdentifiabilityError,
    MoEPlanError,
    SearchSpaceTooLarge,
    SingularDesignError,
)
from .optimizer import brute_force_optimize, optimize
from .reference import QWEN3_PLANNED
from .regression import FeatureSpec, fit_power_law, model_selection

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_NONCONVERGENCE = 4
EXIT_SINGULAR = 5

INIT_GRIDS = {"full": DEFAULT_INIT_GRID, "coarse": COARSE_INIT_GRID}


class CliError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _fmt(x) -> str:
    return io.format_number(x)


def _add_dims_args(p, topk=True):
    p.add_argument("--l", type=int, required=True, help="number of layers")
    p.add_argument("--d", type=int, required=True, help="hidden dimension")
    p.add_argument("--g", type=str, default="4", help="granularity d/d_exp (default 4)")
    p.add_argument("--n-exp", type=int, required=True)
    if topk:
        p.add_argument("--n-topk", type=int, required=True)


def _dims(args, strict=False) -> ModelDims:
    try:
        return ModelDims(args.l, args.d, as_rational(args.g), args.n_exp, args.n_topk, strict=strict)
    except (ValueError, ZeroDivisionError) as exc:
        raise CliError(f"invalid dims: {exc}") from exc


def _dims_line(dims: ModelDims) -> str:
    return (f"l={dims.l} d={dims.d} g={_fmt(dims.g)} "
            f"n_exp={dims.n_exp} n_topk={dims.n_topk}")


# -- subcommands ----------------------------------------------------------------

def cmd_count(args, out):
    dims = _dims(args, strict=args.strict)
    budget, stats = param_budget(dims), sparsity_stats(dims)
    if args.json:
        out.write(io.dumps({
            "kind": "count", "dims": io.dims_to_dict(dims),
            "n_total": io.count_to_json(Fraction(budget.n_total)),
            "n_active": io.count_to_json(Fraction(budget.n_active)),
            "s": stats.s, "gamma": stats.gamma, "active_ratio": stats.active_ratio,
        }))
        return EXIT_OK
    out.write(f"n_total       {_fmt(budget.n_total)}\n")
    out.write(f"n_active      {_fmt(budget.n_active)}\n")
    out.write(f"s             {stats.s!r}\n")
    out.write(f"gamma         {stats.gamma!r}\n")
    out.write(f"active_ratio  {stats.active_ratio!r}\n")
    return EXIT_OK


def cmd_variants(args, out):
    base = _dims(args)
    try:
        factors = [as_rational(f) for f in args.factors.split(",")]
        variants = granularity_variants(base, factors)
    except (ValueError, ZeroDivisionError) as exc:
        raise CliError(str(exc)) from exc
    out.write(f"{'factor':>8}{'g':>8}{'n_exp':>8}{'n_topk':>8}{'n_total':>16}{'n_active':>16}\n")
    for f, v in zip(factors, variants):
        out.write(f"{_fmt(f):>8}{_fmt(v.g):>8}{v.n_exp:>8}{v.n_topk:>8}"
                  f"{_fmt(total_params(v)):>16}{_fmt(active_params(v)):>16}\n")
    return EXIT_OK


def cmd_solve_experts(args, out):
    if args.reference:
        try:
            parts = args.reference.split(",")
            l, d, g, n_exp, n_topk = parts
            ref = ModelDims(int(l), int(d), as_rational(g), int(n_exp), int(n_topk))
        except (ValueError, ZeroDivisionError) as exc:
            raise CliError(f"--reference expects l,d,g,n_exp,n_topk: {exc}") from exc
        target_total, target_active = total_params(ref), active_params(ref)
    elif args.target_total and args.target_active:
        try:
            target_total, target_active = as_rational(args.target_total), as_rational(args.target_active)
        except (ValueError, ZeroDivisionError) as exc:
            raise CliError(str(exc)) from exc
    else:
        raise CliError("give --reference or both --target-total and --target-active")
    try:
        sol = solve_experts_for_budget(args.l, args.d, as_rational(args.g), target_total,
                                       target_active, rounding=args.rounding)
    except (ValueError, ZeroDivisionError) as exc:
        raise CliError(str(exc)) from exc
    out.write(f"n_exp         {sol.n_exp}\n")
    out.write(f"n_topk        {sol.n_topk}\n")
    out.write(f"n_total       {_fmt(total_params(sol.dims))}  ({sol.total_deviation_pct:+.2f}% vs target)\n")
    out.write(f"n_active      {_fmt(active_params(sol.dims))}  ({sol.active_deviation_pct:+.2f}% vs target)\n")
    return EXIT_OK


def cmd_fit_power(args, out):
    records = io.read_records(args.records)
    try:
        specs = [FeatureSpec.parse(s) for s in args.spec]
    except ValueError as exc:
        raise CliError(f"bad spec: {exc}") from exc

    if len(specs) == 1:
        try:
            report = fit_power_law(records, specs[0], collinearity_threshold=args.cond_threshold)
        except SingularDesignError as exc:
            raise CliError(str(exc), EXIT_SINGULAR) from exc
        except (MoEPlanError, ValueError) as exc:
            raise CliError(str(exc)) from exc
        if args.json:
            out.write(io.dumps(io.fit_report_to_dict(report)))
        else:
            out.write(f"spec: {report.spec}\n")
            out.write(report.summary() + "\n")
        return EXIT_OK

    entries = model_selection(records, specs, collinearity_threshold=args.cond_threshold)
    if args.json:
        out.write(io.dumps(io.selection_to_dict(entries)))
    else:
        out.write(f"{'rank':>4}  {'spec':<36}{'R^2':>10}  verdicts\n")
        for i, e in enumerate(entries, start=1):
            if e.ok:
                out.write(f"{i:>4}  {str(e.spec):<36}{e.report.r_squared:>10.6f}  "
                          f"{', '.join(e.verdicts) or 'ok'}\n")
            else:
                out.write(f"{'-':>4}  {str(e.spec):<36}{'failed':>10}  {e.error}\n")
    return EXIT_OK


def _fit_curve(path, args):
    points = io.read_curve(path)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            fit = fit_chinchilla(points, delta=args.delta, init_grid=INIT_GRIDS[args.init_grid],
                                 gtol=args.gtol, maxiter=args.maxiter)
    except IdentifiabilityError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    except ConvergenceError as exc:
        raise CliError(str(exc), EXIT_NONCONVERGENCE) from exc
    for w in caught:
        sys.stderr.write(f"warning: {w.message}\n")
    return points, fit


def _load_fit(path, args):
    if str(path).endswith(".json"):
        return io.read_chinchilla_fit(path)
    return _fit_curve(path, args)[1]


def _write_fit(fit, label, out):
    out.write(f"[{label}]\n")
    for k in ("A", "B", "E", "alpha", "beta"):
        out.write(f"{k:<10}{getattr(fit, k)!r}\n")
    out.write(f"objective {fit.objective_value!r}\n")
    out.write(f"converged {fit.converged}  (iterations {fit.iterations}, "
              f"{fit.n_converged}/{fit.n_starts} starts converged)\n")


def _grid_from(points_or_values):
    return np.unique(np.asarray(points_or_values, dtype=float))


def cmd_fit_chinchilla(args, out):
    points, fit = _fit_curve(args.curve, args)
    if fit.degenerate([p.n_total for p in points], [p.tokens_D for p in points]):
        sys.stderr.write("warning: degenerate exponents; the data look flat in N or D\n")
    labels = args.labels.split(",") if args.labels else ["a", "b"]
    result = {"fit": io.chinchilla_fit_to_dict(fit)}
    if args.compare:
        other = _load_fit(args.compare, args)
        n_values = _grid_from([p.n_total for p in points])
        d_values = _grid_from([p.tokens_D for p in points])
        report = compare_configs(fit, other, n_values, d_values, labels=labels[:2])
        result["compare"] = io.chinchilla_fit_to_dict(other)
        result["comparison"] = io.comparison_to_dict(report)
        if args.plot_data:
            io.write_plot_data(report, args.plot_data)
    code = EXIT_OK if fit.converged else EXIT_NONCONVERGENCE
    if args.json:
        out.write(io.dumps(result if args.compare else result["fit"]))
        return code
    _write_fit(fit, labels[0], out)
    if args.compare:
        _write_fit(other, labels[1], out)
        out.write(report.table() + "\n")
    return code


def _parse_values(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise CliError(f"bad value list {text!r}") from exc


def cmd_plot_data(args, out):
    fit_a = _load_fit(args.fit_a, args)
    fit_b = _load_fit(args.fit_b, args)
    labels = args.labels.split(",") if args.labels else ["a", "b"]
    if args.n_values:
        n_values = _parse_values(args.n_values)
    else:
        n_values = np.geomspace(args.n_min, args.n_max, args.n_points)
    d_values = _parse_values(args.d_values)
    try:
        report = compare_configs(fit_a, fit_b, n_values, d_values, labels=labels[:2])
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    paths = io.write_plot_data(report, args.out)
    for p in paths:
        out.write(f"{p}\n")
    out.write(f"{report.label_a} lower on {report.dominance_fraction:.1%} of points\n")
    return EXIT_OK


def cmd_plan(args, out):
    constraints = io.read_plan(args.plan)
    result = optimize(constraints)
    oracle = None
    if args.verify_brute_force:
        try:
            oracle = brute_force_optimize(constraints, mode="exhaustive")
        except SearchSpaceTooLarge as exc:
            sys.stderr.write(f"brute-force check skipped: {exc}\n")

    if args.json:
        report = io.plan_to_dict(constraints, result, table=args.table)
        if oracle is not None:
            report["brute_force"] = (io.candidate_to_dict(oracle.candidate)
                                     if oracle.candidate else None)
        out.write(io.dumps(report))
    else:
        _write_plan_text(constraints, result, oracle, args.table, out)
    if result.candidate is None:
        if not args.json:
            out.write("no feasible candidate\n")
        return EXIT_INFEASIBLE
    return EXIT_OK


def _write_plan_text(constraints, result, oracle, table, out):
    c = result.candidate
    out.write(f"constraints   c_total={_fmt(constraints.c_total)} c_active={_fmt(constraints.c_active)} "
              f"k_align={constraints.k_align} g={_fmt(constraints.g)} "
              f"gamma={constraints.gamma_range[0]}..{constraints.gamma_range[1]} "
              f"n_exp={','.join(map(str, constraints.n_exp_grid))}\n")
    if c is not None:
        u_total = float(Fraction(c.n_total) / constraints.c_total)
        u_active = float(Fraction(c.n_active) / constraints.c_active)
        out.write(f"chosen        {_dims_line(c.dims)} (gamma={c.gamma})\n")
        out.write(f"n_total       {_fmt(c.n_total)}  ({u_total:.2%} of c_total)\n")
        out.write(f"n_active      {_fmt(c.n_active)}  ({u_active:.2%} of c_active)\n")
        out.write(f"loss_proxy    {c.loss_proxy!r}\n")
    out.write(f"cells         {result.n_cells} evaluated, {result.n_infeasible} infeasible")
    reasons = result.infeasible_reasons()
    if reasons:
        out.write(" (" + ", ".join(f"{k}: {v}" for k, v in sorted(reasons.items())) + ")")
    out.write("\n")
    if (constraints.g == 4 and constraints.k_align == 128
            and abs(float(constraints.c_total) - 235e9) / 235e9 < 0.05):
        l, d, n_exp, n_topk = QWEN3_PLANNED
        out.write(f"reference     published planner result l={l} d={d} n_exp={n_exp} n_topk={n_topk}\n")
    if oracle is not None:
        oc = oracle.candidate
        if oc is None:
            out.write("brute force   no feasible candidate\n")
        else:
            verdict = "matches" if c is not None and oc.loss_proxy >= c.loss_proxy else "beats greedy"
            out.write(f"brute force   {_dims_line(oc.dims)} proxy={oc.loss_proxy!r} ({verdict})\n")
    if table:
        out.write(f"{'n_exp':>6}{'gamma':>6}{'l':>6}{'d':>8}{'n_topk':>8}{'n_total':>18}"
                  f"{'n_active':>18}{'proxy':>22}\n")
        for cell in result.cells:
            cc = cell.candidate
            if cc is None:
                out.write(f"{cell.n_exp:>6}{cell.gamma:>6}  infeasible ({cell.reason})\n")
            else:
                out.write(f"{cell.n_exp:>6}{cell.gamma:>6}{cc.dims.l:>6}{cc.dims.d:>8}"
                          f"{cc.dims.n_topk:>8}{_fmt(cc.n_total):>18}{_fmt(cc.n_active):>18}"
                          f"{cc.loss_proxy!r:>22}\n")


# -- parser -------------------------------------------------------------------

def _fit_options(p):
    p.add_argument("--delta", type=float, default=1e-3, help="Huber delta (default 1e-3)")
    p.add_argument("--gtol", type=float, default=1e-8)
    p.add_argument("--maxiter", type=int, default=1000)
    p.add_argument("--labels", help="comma-separated labels for the two fits")
    p.add_argument("--init-grid", choices=sorted(INIT_GRIDS), default="full",
                   help="multi-start grid: full (7500 starts) or coarse (36)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moeplan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count", help="total/active parameters and sparsity stats")
    _add_dims_args(p)
    p.add_argument("--strict", action="store_true", help="require integral d/g")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("variants", help="iso-budget granularity variants")
    _add_dims_args(p)
    p.add_argument("--factors", required=True, help="comma-separated factors, e.g. 1/2,2,4")
    p.set_defaults(func=cmd_variants)

    p = sub.add_parser("solve-experts", help="expert counts for a target budget")
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--g", type=str, default="4")
    p.add_argument("--target-total")
    p.add_argument("--target-active")
    p.add_argument("--reference", help="l,d,g,n_exp,n_topk whose budgets are the targets")
    p.add_argument("--rounding", default="half_even",
                   choices=["half_even", "half_up", "floor", "ceil"])
    p.set_defaults(func=cmd_solve_experts)

    p = sub.add_parser("fit-power", help="log-log OLS fit of loss on records")
    p.add_argument("records", type=Path)
    p.add_argument("--spec", action="append", required=True,
                   help="e.g. Ntotal+nexp+ntopk; repeat to rank several specs")
    p.add_argument("--cond-threshold", type=float, default=30.0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_fit_power)

    p = sub.add_parser("fit-chinchilla", help="fit A N^-alpha + B D^-beta + E")
    p.add_argument("curve", type=Path)
    p.add_argument("--compare", type=Path, help="second curve CSV or fit JSON")
    p.add_argument("--plot-data", type=Path, help="directory for per-D TSV series")
    p.add_argument("--json", action="store_true")
    _fit_options(p)
    p.set_defaults(func=cmd_fit_chinchilla)

    p = sub.add_parser("plan", help="optimize an MoE configuration under budgets")
    p.add_argument("plan", type=Path)
    p.add_argument("--verify-brute-force", action="store_true")
    p.add_argument("--table", action="store_true", help="dump every cell")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("plot-data", help="per-D loss-vs-N series for two fits")
    p.add_argument("fit_a", type=Path)
    p.add_argument("fit_b", type=Path)
    p.add_argument("--d-values", required=True, help="comma-separated token counts")
    p.add_argument("--n-values", help="comma-separated parameter counts")
    p.add_argument("--n-min", type=float, default=3e7)
    p.add_argument("--n-max", type=float, default=3e9)
    p.add_argument("--n-points", type=int, default=50)
    p.add_argument("--out", type=Path, required=True)
    _fit_options(p)
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except CliError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.code
    except FileFormatError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except ConvergenceError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NONCONVERGENCE
    except (MoEPlanError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
