"""Exponentially weighted rolling windows over a return panel."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError
from .panel_io import ReturnPanel

DEFAULT_WINDOW = 300
DEFAULT_THETA = 100.0
DEFAULT_STRIDE = 1


@dataclass(frozen=True)
class WeightVector:
    """Chronologically ordered weights; the last (most recent) one is 1."""

    weights: np.ndarray
    theta: float

    def __len__(self) -> int:
        return self.weights.size


def exponential_weights(window: int, theta: float = DEFAULT_THETA) -> WeightVector:
    """Weights ``exp(-age/theta)`` for ages ``window-1, ..., 1, 0``.

    ``theta=math.inf`` gives equal weights (the classical unweighted VAR).
    Weights are not normalised; weighted least squares does not depend on
    their overall scale. Weights that would underflow are held at the
    smallest positive normal double.
    """
    if int(window) != window or window < 1:
        raise ValueError(f"window must be a positive integer, got {window!r}")
    theta = float(theta)
    if not theta > 0:
        raise ValueError(f"theta must be > 0, got {theta!r}")
    age = np.arange(window - 1, -1, -1, dtype=float)
    if math.isinf(theta):
        w = np.ones(window)
    else:
        # very old ages underflow to 0 when theta is small; keep them positive
        w = np.maximum(np.exp(-age / theta), np.finfo(float).tiny)
    w.flags.writeable = False
    return WeightVector(w, theta)


@dataclass(frozen=True)
class WindowView:
    returns: np.ndarray
    missing_mask: np.ndarray
    end_date: np.datetime64
    end_row: int
    weights: WeightVector

    @property
    def size(self) -> int:
        return self.returns.shape[0]

    @property
    def imputation_fraction(self) -> float:
        return float(self.missing_mask.mean()) if self.missing_mask.size else 0.0


def window_ends(n_rows: int, window: int, stride: int = DEFAULT_STRIDE) -> np.ndarray:
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    if n_rows < window:
        raise InsufficientDataError(f"panel has {n_rows} rows, window needs {window}")
    return np.arange(window - 1, n_rows, stride)


def rolling_windows(
    panel: ReturnPanel,
    window: int = DEFAULT_WINDOW,
    stride: int = DEFAULT_STRIDE,
    theta: float = DEFAULT_THETA,
) -> list[WindowView]:
    """Windows of ``window`` rows ending at rows ``W-1, W-1+S, ...``.

    The count is ``floor((T - W) / S) + 1``. Every window shares one
    :class:`WeightVector`.
    """
    ends = window_ends(panel.returns.shape[0], window, stride)
    weights = exponential_weights(window, theta)
    return [
        WindowView(
            returns=panel.returns[e - window + 1:e + 1],
            missing_mask=panel.missing_mask[e - window + 1:e + 1],
            end_date=panel.dates[e],
            end_row=int(e),
            weights=weights,
        )
        for e in ends
    ]
