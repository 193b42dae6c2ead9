"""Regional uncertainty spillovers: ridge-regularized, exponentially weighted
VAR(1) connectedness and transfer entropy between connectedness series."""

__version__ = "0.1.0"

from .connectedness import (
    ConnectednessConfig,
    ConnectednessMatrix,
    ConnectednessSeries,
    ShockBasis,
    connectedness_series,
    fevd_shares,
    shock_basis,
    total_connectedness,
)
from .panel_io import PricePanel, ReturnPanel, align_calendar, compute_log_returns, load_price_panel
from .ridge_var import VarModel, fit_ridge_var, residual_covariance
from .rolling import WeightVector, WindowView, exponential_weights, rolling_windows
from .transfer_entropy import (
    ChangeSeries,
    Estimator,
    TeConfig,
    TeResult,
    difference_series,
    linear_te,
    linear_te_f_pvalue,
    net_information_flow,
    nonlinear_te,
    permutation_pvalue,
    te_table,
)

__all__ = [name for name in dir() if not name.startswith("_")]
