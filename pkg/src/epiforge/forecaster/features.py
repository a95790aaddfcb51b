"""Model inputs: within-season and between-season windows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import HistoryError


@dataclass
class FeaturePair:
    x1: np.ndarray      # the ``a`` weeks before the target
    x2: np.ndarray      # same seasonal week in each of the ``b`` previous seasons, oldest first
    target: np.ndarray | None = None


def as_series(state_series) -> np.ndarray:
    """Flatten a list of seasons (or an already flat series) to 1-D."""
    if isinstance(state_series, (list, tuple)) and state_series and np.ndim(state_series[0]) > 0:
        return np.concatenate([np.asarray(s, dtype=float).ravel() for s in state_series])
    return np.asarray(state_series, dtype=float).ravel()


def first_valid_index(a: int, b: int, season_length: int) -> int:
    return max(a, season_length * b)


def check_history(t: int, a: int, b: int, season_length: int) -> None:
    need = first_valid_index(a, b, season_length)
    if t < need:
        raise HistoryError(
            f"target index {t} needs {need} weeks of history (a={a}, b={b}, season={season_length}); "
            f"short by {need - t}", shortfall=need - t)


def build_features(state_series, t: int, a: int, b: int, season_length: int = 52,
                   targets=None) -> FeaturePair:
    """Inputs for predicting week ``t`` of the concatenated state series."""
    y = as_series(state_series)
    check_history(t, a, b, season_length)
    x1 = y[t - a:t].copy()
    x2 = y[[t - season_length * j for j in range(b, 0, -1)]] if b else np.empty(0)
    target = None if targets is None else np.asarray(targets[t], dtype=float)
    return FeaturePair(x1, x2, target)


def feature_matrices(series: np.ndarray, ts: np.ndarray, a: int, b: int, season_length: int):
    """Vectorised :func:`build_features` for many target indices."""
    ts = np.asarray(ts, dtype=np.int64)
    if ts.size and ts.min() < first_valid_index(a, b, season_length):
        check_history(int(ts.min()), a, b, season_length)
    x1 = series[ts[:, None] + np.arange(-a, 0)[None, :]]
    if b:
        x2 = series[ts[:, None] - season_length * np.arange(b, 0, -1)[None, :]]
    else:
        x2 = np.empty((ts.size, 0))
    return x1, x2


def curve_pairs(curves, a: int, b: int, season_length: int):
    """Training pairs from curves concatenated in the given order.

    Returns ``(x1, x2, z, curve_index)``; targets whose window would reach
    before the start of the concatenation are skipped.
    """
    values = np.concatenate([c.values for c in curves], axis=0)
    series = values[:, 0]
    start = first_valid_index(a, b, season_length)
    ts = np.arange(start, values.shape[0])
    x1, x2 = feature_matrices(series, ts, a, b, season_length)
    weeks = curves[0].weeks
    return x1, x2, values[ts], ts // weeks
