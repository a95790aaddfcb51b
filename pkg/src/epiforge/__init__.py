"""Simulation-trained epidemic forecasting.

Stages: contact networks (:mod:`netgen`), SEIR simulation (:mod:`simcore`),
transmissibility calibration (:mod:`calib`), parameter-space fitting
(:mod:`paramspace`), synthetic training sets (:mod:`datasetgen`), the
two-branch forecaster (:mod:`forecaster`) and scoring (:mod:`evalmetrics`).
"""

from .errors import ConfigError, DataError, EpiforgeError, HistoryError, NumericError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "EpiforgeError", "HistoryError", "NumericError", "__version__"]
