"""Two-branch recurrent forecaster."""

from .features import FeaturePair, build_features, curve_pairs
from .forecasting import forecast_multistep, mc_dropout_forecast, rolling_forecasts
from .model import (ForecastModel, ModelConfig, cell_forward, forward, init_model, load_model, loss,
                    loss_and_grad, negativity, save_model, spatial_gap)
from .training import Adam, TrainingHistory, column_scales, train

__all__ = [
    "Adam", "FeaturePair", "ForecastModel", "ModelConfig", "TrainingHistory", "build_features",
    "cell_forward", "column_scales", "curve_pairs", "forecast_multistep", "forward", "init_model",
    "load_model", "loss", "loss_and_grad", "mc_dropout_forecast", "negativity", "rolling_forecasts",
    "save_model", "spatial_gap", "train",
]
