"""File formats: record/curve CSVs, JSON plan files and JSON reports.

Record CSV header (derived columns optional, validated when present)::

    l,d,g,n_exp,n_topk,tokens_D,loss_L[,n_total,n_active,s]

Curve CSV header::

    n_total,tokens_D,loss_L

Plan files are JSON objects with the keys in :data:`PLAN_KEYS`. Reports are
JSON; floats are written with ``repr`` so they round-trip exactly, and
non-integral counts as ``"p/q"`` strings.
"""

from __future__ import annotations

import csv
import json
import math
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .accounting import ModelDims, as_rational
from .chinchilla import ChinchillaFit, ComparisonReport, CurvePoint
from .errors import FileFormatError, InvalidConstraintsError, InvalidDimsError
from .optimizer import ConfigCandidate, Constraints, PlanResult
from .regression import ExperimentRecord, FeatureSpec, FitReport, SelectionEntry

RECORD_COLUMNS = ("l", "d", "g", "n_exp", "n_topk", "tokens_D", "loss_L")
DERIVED_COLUMNS = ("n_total", "n_active", "s")
CURVE_COLUMNS = ("n_total", "tokens_D", "loss_L")
PLAN_KEYS = ("c_total", "c_active", "k_align", "gamma_min", "gamma_max",
             "n_exp", "n_exp_max_power", "g", "exponents", "rounding")


def format_number(x) -> str:
    """Exact text for ints and Fractions, shortest round-trip repr for floats."""
    if isinstance(x, Fraction):
        return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def count_to_json(x):
    if isinstance(x, Fraction) and x.denominator != 1:
        return f"{x.numerator}/{x.denominator}"
    return int(x)


def count_from_json(x):
    return Fraction(x) if isinstance(x, str) else int(x)


# -- CSV ----------------------------------------------------------------------

def _read_rows(path, expected_variants: Sequence[tuple]) -> tuple[tuple, list]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = tuple(h.strip() for h in next(reader))
            except StopIteration:
                raise FileFormatError(f"{path}: empty file") from None
            if header not in expected_variants:
                raise FileFormatError(
                    f"{path}: header {','.join(header)!r} does not match "
                    f"{','.join(expected_variants[0])!r}"
                )
            rows = [(i, row) for i, row in enumerate(reader, start=2) if any(c.strip() for c in row)]
    except UnicodeDecodeError as exc:
        raise FileFormatError(f"{path}: not UTF-8 ({exc})") from exc
    except OSError as exc:
        raise FileFormatError(f"{path}: {exc.strerror or exc}") from exc
    return header, rows


def _parse_int(text: str, where: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = as_rational(text)
    except (ValueError, ZeroDivisionError):
        raise FileFormatError(f"{where}: {text!r} is not a number") from None
    if value.denominator != 1:
        raise FileFormatError(f"{where}: {text!r} is not an integer")
    return int(value)


def _parse_float(text: str, where: str) -> float:
    try:
        value = float(text.strip())
    except ValueError:
        raise FileFormatError(f"{where}: {text!r} is not a number") from None
    if not math.isfinite(value):
        raise FileFormatError(f"{where}: {text!r} is not finite")
    return value


def read_records(path) -> list[ExperimentRecord]:
    """Load experiment records, recomputing derived columns and rejecting mismatches."""
    header, rows = _read_rows(path, [RECORD_COLUMNS, RECORD_COLUMNS + DERIVED_COLUMNS])
    records = []
    for lineno, row in rows:
        where = f"{path}:{lineno}"
        if len(row) != len(header):
            raise FileFormatError(f"{where}: expected {len(header)} fields, got {len(row)}")
        cells = dict(zip(header, row))
        try:
            g = as_rational(cells["g"])
        except (ValueError, ZeroDivisionError):
            raise FileFormatError(f"{where}: g = {cells['g']!r} is not a number") from None
        try:
            dims = ModelDims(
                _parse_int(cells["l"], where), _parse_int(cells["d"], where), g,
                _parse_int(cells["n_exp"], where), _parse_int(cells["n_topk"], where),
            )
        except InvalidDimsError as exc:
            raise FileFormatError(f"{where}: {exc}") from exc
        tokens = _parse_int(cells["tokens_D"], where)
        loss = _parse_float(cells["loss_L"], where)
        if tokens <= 0:
            raise FileFormatError(f"{where}: tokens_D must be positive")
        if loss <= 0:
            raise FileFormatError(f"{where}: loss_L must be positive, got {loss}")
        record = ExperimentRecord(dims, tokens, loss)
        if "n_total" in cells:
            for name in DERIVED_COLUMNS:
                try:
                    given = as_rational(cells[name])
                except (ValueError, ZeroDivisionError):
                    raise FileFormatError(f"{where}: {name} = {cells[name]!r} is not a number") from None
                actual = Fraction(getattr(record, name))
                if given != actual:
                    raise FileFormatError(
                        f"{where}: {name} = {cells[name]} disagrees with recomputed {format_number(actual)}"
                    )
        records.append(record)
    if not records:
        raise FileFormatError(f"{path}: no records")
    return records


def write_records(path, records: Iterable[ExperimentRecord], derived: bool = True) -> None:
    header = RECORD_COLUMNS + (DERIVED_COLUMNS if derived else ())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            row = [r.dims.l, r.dims.d, format_number(r.dims.g), r.dims.n_exp, r.dims.n_topk,
                   r.tokens_D, format_number(r.loss_L)]
            if derived:
                row += [format_number(Fraction(r.n_total)), format_number(Fraction(r.n_active)),
                        format_number(r.s)]
            w.writerow(row)


def read_curve(path) -> list[CurvePoint]:
    _, rows = _read_rows(path, [CURVE_COLUMNS])
    points = []
    for lineno, row in rows:
        where = f"{path}:{lineno}"
        if len(row) != 3:
            raise FileFormatError(f"{where}: expected 3 fields, got {len(row)}")
        n, d, loss = (_parse_float(v, where) for v in row)
        if min(n, d, loss) <= 0:
            raise FileFormatError(f"{where}: values must be positive")
        points.append(CurvePoint(n, d, loss))
    if not points:
        raise FileFormatError(f"{path}: no data points")
    return points


def write_curve(path, points: Iterable[CurvePoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for p in points:
            w.writerow([format_number(p.n_total), format_number(p.tokens_D), format_number(p.loss)])


# -- plan files ---------------------------------------------------------------

def constraints_from_mapping(cfg: dict) -> Constraints:
    unknown = sorted(set(cfg) - set(PLAN_KEYS))
    if unknown:
        raise InvalidConstraintsError(f"unknown plan keys: {', '.join(unknown)}")
    for key in ("c_total", "c_active"):
        if key not in cfg:
            raise InvalidConstraintsError(f"plan is missing {key!r}")
    if "n_exp" in cfg and "n_exp_max_power" in cfg:
        raise InvalidConstraintsError("give either n_exp or n_exp_max_power, not both")

    kwargs = dict(c_total=cfg["c_total"], c_active=cfg["c_active"])
    if "k_align" in cfg:
        kwargs["k_align"] = cfg["k_align"]
    if "gamma_min" in cfg or "gamma_max" in cfg:
        kwargs["gamma_range"] = (cfg.get("gamma_min", 32), cfg.get("gamma_max", 64))
    if "n_exp" in cfg:
        grid = cfg["n_exp"]
        kwargs["n_exp_grid"] = tuple(grid) if isinstance(grid, list) else (grid,)
    if "n_exp_max_power" in cfg:
        kwargs["n_exp_grid"] = tuple(2**k for k in range(1, int(cfg["n_exp_max_power"]) + 1))
    if "g" in cfg:
        kwargs["g"] = cfg["g"]
    if "exponents" in cfg:
        kwargs["exponents"] = tuple(cfg["exponents"])
    if "rounding" in cfg:
        kwargs["rounding"] = cfg["rounding"]
    try:
        return Constraints(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidConstraintsError):
            raise
        raise InvalidConstraintsError(str(exc)) from exc


def read_plan(path) -> Constraints:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise FileFormatError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise FileFormatError(f"{path}: plan must be a JSON object")
    return constraints_from_mapping(cfg)


def constraints_to_dict(c: Constraints) -> dict:
    return {
        "c_total": format_number(c.c_total),
        "c_active": format_number(c.c_active),
        "k_align": c.k_align,
        "gamma_min": c.gamma_range[0],
        "gamma_max": c.gamma_range[1],
        "n_exp": list(c.n_exp_grid),
        "g": format_number(c.g),
        "exponents": list(c.exponents),
        "rounding": c.rounding,
    }


# -- reports ------------------------------------------------------------------

def dims_to_dict(dims: ModelDims) -> dict:
    return {"l": dims.l, "d": dims.d, "g": format_number(dims.g),
            "n_exp": dims.n_exp, "n_topk": dims.n_topk}


def dims_from_dict(obj: dict) -> ModelDims:
    return ModelDims(obj["l"], obj["d"], as_rational(obj["g"]), obj["n_exp"], obj["n_topk"])


def fit_report_to_dict(report: FitReport) -> dict:
    return {
        "kind": "power_law_fit",
        "spec": str(report.spec) if report.spec is not None else None,
        "names": list(report.names),
        "coefficients": [float(v) for v in report.coefficients],
        "std_errors": [float(v) for v in report.std_errors],
        "t_stats": [float(v) for v in report.t_stats],
        "p_values": [float(v) for v in report.p_values],
        "significant": [bool(v) for v in report.significant],
        "r_squared": float(report.r_squared),
        "condition_number": float(report.condition_number),
        "multicollinearity_flag": bool(report.multicollinearity_flag),
        "n_obs": int(report.n_obs),
        "alpha": float(report.alpha),
        "residuals": [float(v) for v in report.residuals],
    }


def fit_report_from_dict(obj: dict) -> FitReport:
    return FitReport(
        names=tuple(obj["names"]),
        coefficients=np.array(obj["coefficients"], dtype=float),
        std_errors=np.array(obj["std_errors"], dtype=float),
        t_stats=np.array(obj["t_stats"], dtype=float),
        p_values=np.array(obj["p_values"], dtype=float),
        r_squared=float(obj["r_squared"]),
        condition_number=float(obj["condition_number"]),
        n_obs=int(obj["n_obs"]),
        significant=np.array(obj["significant"], dtype=bool),
        multicollinearity_flag=bool(obj["multicollinearity_flag"]),
        residuals=np.array(obj.get("residuals", []), dtype=float),
        spec=FeatureSpec.parse(obj["spec"]) if obj.get("spec") else None,
        alpha=float(obj.get("alpha", 0.05)),
    )


def selection_to_dict(entries: Sequence[SelectionEntry]) -> dict:
    return {
        "kind": "model_selection",
        "entries": [
            {"spec": str(e.spec), "verdicts": list(e.verdicts), "error": e.error,
             "report": fit_report_to_dict(e.report) if e.report is not None else None}
            for e in entries
        ],
    }


def chinchilla_fit_to_dict(fit: ChinchillaFit) -> dict:
    return {
        "kind": "chinchilla_fit",
        "A": fit.A, "B": fit.B, "E": fit.E, "alpha": fit.alpha, "beta": fit.beta,
        "objective_value": fit.objective_value,
        "converged": fit.converged,
        "start_point": list(fit.start_point),
        "delta": fit.delta,
        "iterations": fit.iterations,
        "n_starts": fit.n_starts,
        "n_converged": fit.n_converged,
    }


def chinchilla_fit_from_dict(obj: dict) -> ChinchillaFit:
    return ChinchillaFit(
        A=float(obj["A"]), B=float(obj["B"]), E=float(obj["E"]),
        alpha=float(obj["alpha"]), beta=float(obj["beta"]),
        objective_value=float(obj.get("objective_value", 0.0)),
        converged=bool(obj.get("converged", True)),
        start_point=tuple(obj.get("start_point", ())),
        delta=float(obj.get("delta", 1e-3)),
        iterations=int(obj.get("iterations", 0)),
        n_starts=int(obj.get("n_starts", 0)),
        n_converged=int(obj.get("n_converged", 0)),
    )


def read_chinchilla_fit(path) -> ChinchillaFit:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return chinchilla_fit_from_dict(obj)
    except OSError as exc:
        raise FileFormatError(f"{path}: {exc.strerror or exc}") from exc
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: not a chinchilla fit report ({exc})") from exc


def candidate_to_dict(c: ConfigCandidate) -> dict:
    return {
        "dims": dims_to_dict(c.dims),
        "gamma": c.gamma,
        "n_total": count_to_json(c.n_total),
        "n_active": count_to_json(c.n_active),
        "loss_proxy": c.loss_proxy,
        "feasible": c.feasible,
    }


def candidate_from_dict(obj: dict) -> ConfigCandidate:
    return ConfigCandidate(
        dims=dims_from_dict(obj["dims"]),
        n_total=count_from_json(obj["n_total"]),
        n_active=count_from_json(obj["n_active"]),
        loss_proxy=float(obj["loss_proxy"]),
        feasible=bool(obj["feasible"]),
        gamma=obj.get("gamma"),
    )


def plan_to_dict(constraints: Constraints, result: PlanResult, table: bool = False) -> dict:
    out = {
        "kind": "plan",
        "constraints": constraints_to_dict(constraints),
        "candidate": candidate_to_dict(result.candidate) if result.candidate else None,
        "diagnostics": {
            "cells": result.n_cells,
            "infeasible": result.n_infeasible,
            "infeasible_reasons": result.infeasible_reasons(),
        },
    }
    if result.candidate is not None:
        c = result.candidate
        out["utilization"] = {
            "total": float(Fraction(c.n_total) / constraints.c_total),
            "active": float(Fraction(c.n_active) / constraints.c_active),
        }
    if table:
        out["cells"] = [
            {"n_exp": cell.n_exp, "gamma": cell.gamma, "reason": cell.reason,
             "candidate": candidate_to_dict(cell.candidate) if cell.candidate else None}
            for cell in result.cells
        ]
    return out


def comparison_to_dict(report: ComparisonReport) -> dict:
    return {
        "kind": "comparison",
        "labels": [report.label_a, report.label_b],
        "dominance_fraction": report.dominance_fraction,
        "rows": [[float(v) for v in row] for row in report.rows],
    }


def dumps(obj: dict) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def write_plot_data(report: ComparisonReport, outdir) -> list[Path]:
    """Write one tab-separated file per D slice: ``N``, loss under each fit."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for dval, block in report.series().items():
        path = outdir / f"loss_vs_N_D{format_number(dval)}.tsv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"N\t{report.label_a}\t{report.label_b}\n")
            for n, la, lb in block:
                fh.write(f"{format_number(n)}\t{format_number(la)}\t{format_number(lb)}\n")
        paths.append(path)
    return paths


def read_plot_data(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        next(fh)
        return np.array([[float(v) for v in line.split("\t")] for line in fh if line.strip()])
