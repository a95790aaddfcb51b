"""Iterated multi-step forecasts and MC-dropout uncertainty."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .features import as_series, build_features
from .model import ForecastModel, forward

MC_SAMPLES = 20


def forecast_multistep(model: ForecastModel, state_history, horizon: int,
                       dropout_active: bool = False, rng=None) -> np.ndarray:
    """Forecast ``horizon`` weeks past the end of ``state_history``.

    Each step's state-level prediction is appended to the history before
    the next step. Returns an array of shape ``(horizon, K + 1)``.
    """
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    cfg = model.config
    y = list(as_series(state_history))
    out = np.empty((horizon, cfg.K + 1))
    for h in range(horizon):
        fp = build_features(np.asarray(y), len(y), cfg.a, cfg.b_effective, cfg.season_length)
        z = forward(model, fp.x1, fp.x2, dropout_active=dropout_active, rng=rng)
        out[h] = z
        y.append(z[0])
    return out


def mc_dropout_forecast(model: ForecastModel, state_history, horizon: int, n_samples: int = MC_SAMPLES,
                        rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population standard deviation over ``n_samples`` dropout passes."""
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    runs = np.stack([forecast_multistep(model, state_history, horizon, dropout_active=True, rng=rng)
                     for _ in range(n_samples)])
    mean, sd = runs.mean(axis=0), runs.std(axis=0)
    same = np.all(runs == runs[0], axis=0)   # avoid round-off spread when no mask changes anything
    mean[same], sd[same] = runs[0][same], 0.0
    return mean, sd


def rolling_forecasts(model: ForecastModel, series, start: int, horizon: int, mc: int = 0, rng=None):
    """Forecasts issued after each index ``t - 1`` for ``t`` in ``[start, len(series)]``.

    Returns a list of ``(t, mean, sd)`` where ``t`` is the number of
    observed weeks at issue time; ``sd`` is None without MC sampling.
    """
    y = as_series(series)
    out = []
    for t in range(start, y.size + 1):
        if mc:
            mean, sd = mc_dropout_forecast(model, y[:t], horizon, mc, rng)
        else:
            mean, sd = forecast_multistep(model, y[:t], horizon), None
        out.append((t, mean, sd))
    return out
