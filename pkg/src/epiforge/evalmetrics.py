"""Forecast scoring: RMSE, MAPE, Pearson correlation and model ratios.

Undefined values (a correlation with a constant series, a ratio with a
zero denominator) are reported as :data:`UNDEFINED` (``None``) and written
as ``NA`` in CSV output. They are never replaced by zero.
"""

from __future__ import annotations

import csv
import json
import math
import os

import numpy as np

from .errors import DataError

UNDEFINED = None


def _pair(y, y_hat, min_len=1):
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.shape != y_hat.shape:
        raise DataError(f"length mismatch: {y.size} vs {y_hat.size}")
    if y.size < min_len:
        raise DataError(f"need at least {min_len} values, got {y.size}")
    return y, y_hat


def rmse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def mape(y, y_hat) -> float:
    """Mean absolute percentage error with the denominator smoothed by +1."""
    y, y_hat = _pair(y, y_hat)
    return float(100.0 * np.mean(np.abs((y - y_hat) / (y + 1.0))))


def pcorr(y, y_hat):
    y, y_hat = _pair(y, y_hat, min_len=2)
    dy = y - y.mean()
    dh = y_hat - y_hat.mean()
    sy = math.sqrt(float(np.dot(dy, dy)))
    sh = math.sqrt(float(np.dot(dh, dh)))
    if sy == 0.0 or sh == 0.0:
        return UNDEFINED
    return float(np.clip(np.dot(dy, dh) / (sy * sh), -1.0, 1.0))


def _mean_defined(values):
    if any(v is UNDEFINED for v in values) or not values:
        return UNDEFINED
    return float(np.mean(values))


def _ratio(num, den):
    if num is UNDEFINED or den is UNDEFINED or den == 0:
        return UNDEFINED
    return num / den


def ratio_report(metrics_a: dict, metrics_b: dict, horizons=None) -> dict:
    """Per-county comparison of model A against model B.

    ``metrics_x[county][horizon]`` is a dict with ``rmse``, ``mape`` and
    ``pcorr``. Ratios above 1 favour model A:
    RMSE_B / RMSE_A, MAPE_B / MAPE_A and (PCORR_A + 1) / (PCORR_B + 1), each
    built from means over the horizons.
    """
    if set(metrics_a) != set(metrics_b):
        raise DataError("metric sets cover different counties")
    out = {}
    for county in metrics_a:
        hs = list(horizons) if horizons is not None else sorted(metrics_a[county])
        if any(h not in metrics_a[county] or h not in metrics_b[county] for h in hs):
            raise DataError(f"county {county}: metric sets cover different horizons")
        A = [metrics_a[county][h] for h in hs]
        B = [metrics_b[county][h] for h in hs]

        def mean_of(rows, key, shift=0.0):
            vals = [r[key] for r in rows]
            m = _mean_defined(vals)
            return UNDEFINED if m is UNDEFINED else m + shift

        out[county] = {
            "rmse_ratio": _ratio(mean_of(B, "rmse"), mean_of(A, "rmse")),
            "mape_ratio": _ratio(mean_of(B, "mape"), mean_of(A, "mape")),
            "pcorr_ratio": _ratio(mean_of(A, "pcorr", 1.0), mean_of(B, "pcorr", 1.0)),
        }
    return out


def column_names(n_columns: int) -> list[str]:
    return ["state"] + [f"county_{c}" for c in range(1, n_columns)]


def evaluate_run(truth, forecasts) -> dict:
    """Score multi-horizon forecasts against a truth curve.

    ``truth`` is an array (weeks, K+1) whose row ``w - 1`` holds seasonal
    week ``w``; NaN marks a missing observation. ``forecasts`` maps
    ``(issue_week, horizon)`` to a length-(K+1) vector; the forecast is
    scored against week ``issue_week + horizon``.
    """
    truth = np.asarray(getattr(truth, "values", truth), dtype=float)
    weeks, ncol = truth.shape
    names = column_names(ncol)
    pairs: dict = {}   # horizon -> list of (target_week, truth_row, forecast_row)
    excluded = 0
    for (issue, h), vec in sorted(forecasts.items()):
        target = issue + h
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (ncol,):
            raise DataError(f"forecast for issue week {issue}, horizon {h} has {vec.size} values, expected {ncol}")
        if not 1 <= target <= weeks or np.any(np.isnan(truth[target - 1])):
            excluded += 1
            continue
        pairs.setdefault(h, []).append((target, truth[target - 1], vec))

    per_horizon = {}
    for h, rows in sorted(pairs.items()):
        Y = np.array([r[1] for r in rows])
        F = np.array([r[2] for r in rows])
        per_horizon[h] = {names[c]: {"rmse": rmse(Y[:, c], F[:, c]),
                                     "mape": mape(Y[:, c], F[:, c]),
                                     "pcorr": pcorr(Y[:, c], F[:, c]) if len(rows) >= 2 else UNDEFINED,
                                     "n": len(rows)}
                          for c in range(ncol)}

    by_week: dict = {}
    for h, rows in pairs.items():
        for target, y, f in rows:
            by_week.setdefault(target, []).append((y, f))
    per_week = {}
    for w, rows in sorted(by_week.items()):
        Y = np.array([r[0] for r in rows])
        F = np.array([r[1] for r in rows])
        per_week[w] = {names[c]: {"rmse": float(np.mean(np.abs(Y[:, c] - F[:, c]))),
                                  "mape": float(np.mean(100.0 * np.abs(Y[:, c] - F[:, c]) / (Y[:, c] + 1.0)))}
                       for c in range(ncol)}

    per_county = {}
    for c in range(ncol):
        rows = [per_horizon[h][names[c]] for h in per_horizon]
        per_county[names[c]] = {k: _mean_defined([r[k] for r in rows]) for k in ("rmse", "mape", "pcorr")}

    return {"per_horizon": per_horizon, "per_week": per_week, "per_county": per_county,
            "excluded": excluded, "columns": names}


def metrics_by_county(report: dict) -> dict:
    """Reshape a report into ``{county: {horizon: metrics}}`` for :func:`ratio_report`."""
    out: dict = {}
    for h, cols in report["per_horizon"].items():
        for name, m in cols.items():
            out.setdefault(name, {})[int(h)] = m
    return out


# --- output ----------------------------------------------------------------

def _fmt(v):
    return "NA" if v is UNDEFINED else repr(float(v)) if isinstance(v, float) else v


def write_report(report: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "per_horizon.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["horizon", "column", "rmse", "mape", "pcorr", "n"])
        for h, cols in report["per_horizon"].items():
            for name, m in cols.items():
                w.writerow([h, name, _fmt(m["rmse"]), _fmt(m["mape"]), _fmt(m["pcorr"]), m["n"]])
    with open(os.path.join(out_dir, "per_week.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["week", "column", "rmse", "mape"])
        for wk, cols in report["per_week"].items():
            for name, m in cols.items():
                w.writerow([wk, name, _fmt(m["rmse"]), _fmt(m["mape"])])
    with open(os.path.join(out_dir, "per_county.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["column", "rmse", "mape", "pcorr"])
        for name, m in report["per_county"].items():
            w.writerow([name, _fmt(m["rmse"]), _fmt(m["mape"]), _fmt(m["pcorr"])])
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(_jsonable(report), fh, indent=1)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def load_report(path: str) -> dict:
    """Read a ``summary.json`` written by :func:`write_report` (or its directory)."""
    if os.path.isdir(path):
        path = os.path.join(path, "summary.json")
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"report not found: {path}") from None


def write_ratio_csv(ratios: dict, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["column", "rmse_ratio", "mape_ratio", "pcorr_ratio"])
        for name, r in ratios.items():
            w.writerow([name, _fmt(r["rmse_ratio"]), _fmt(r["mape_ratio"]), _fmt(r["pcorr_ratio"])])
