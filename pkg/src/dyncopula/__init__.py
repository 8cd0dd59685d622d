"""Dynamic bivariate copula modelling.

Rank-based information-matrix goodness-of-fit testing, four change-point
detectors built on it, GARCH(2,1) margins and copula VaR/ES.
"""

from ._validation import DomainError, FitError, ParameterError
from .copula import CopulaSpec, Family, cdf, density, kendall_tau, log_density, sample
from .detect import (
    AcceleratedMovingWindow,
    BinarySegmentation,
    BottomUp,
    DetectionEvent,
    DetectorConfig,
    Limit,
    MovingWindow,
    Segment,
    accelerated_moving_window,
    binary_segmentation,
    bottom_up,
    moving_window,
    run_detector,
)
from .fit import CopulaSelector, FitResult, fit_copula, select_family
from .gof import GofConfig, GofResult, chi2_quantile, info_matrix_test
from .margins import Garch21, GarchFit, fit_garch21, log_returns, standardized_residuals
from .pseudo import PseudoSample, RankTransformer, pseudo_observations
from .risk import BacktestReport, RiskPoint, backtest_var, rolling_risk, var_es
from .sim import ComparisonRow, Scenario, generate, run_comparison

__version__ = "0.1.0"

__all__ = [
    "AcceleratedMovingWindow", "BacktestReport", "BinarySegmentation", "BottomUp",
    "ComparisonRow", "CopulaSelector", "CopulaSpec", "DetectionEvent", "DetectorConfig",
    "DomainError", "Family", "FitError", "FitResult", "Garch21", "GarchFit", "GofConfig",
    "GofResult", "Limit", "MovingWindow", "ParameterError", "PseudoSample", "RankTransformer",
    "RiskPoint", "Scenario", "Segment", "accelerated_moving_window", "backtest_var",
    "binary_segmentation", "bottom_up", "cdf", "chi2_quantile", "density", "fit_copula",
    "fit_garch21", "generate", "info_matrix_test", "kendall_tau", "log_density", "log_returns",
    "moving_window", "pseudo_observations", "rolling_risk", "run_comparison", "run_detector",
    "sample", "select_family", "standardized_residuals", "var_es", "__version__",
]
