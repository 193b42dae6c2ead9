"""Ridge-regularised, exponentially weighted VAR(1) on a single window."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DataError, NumericalWarning, SingularSystemError
from .rolling import WindowView

DEFAULT_LAMBDA = 100.0
# lambda range over which results were reported as stable
LAMBDA_ROBUST_RANGE = (100.0, 1000.0)

_NEG_EIG_WARN = 1e-8


@dataclass(frozen=True)
class VarModel:
    """Fitted VAR(1) for one window.

    Attributes
    ----------
    A : ndarray (N, N)
        Row ``i`` holds the coefficients of equation ``i`` on all lagged
        variables.
    sigma_eps : ndarray (N, N)
        Weighted residual covariance.
    lam : float
        Ridge penalty used.
    n_obs : int
        Number of (lagged, current) pairs, ``W - 1``.
    """

    A: np.ndarray
    sigma_eps: np.ndarray
    lam: float
    n_obs: int
    standardize: bool = False
    psd_clipped: bool = False


def _design(returns: np.ndarray, weights: np.ndarray):
    """Weighted-demeaned lagged/current blocks and their pair weights.

    Pair ``t`` takes the weight of its current row. Weights are rescaled so
    the largest is 1, which leaves the default exp(-s/theta) weights as they
    are while making the fit invariant to an overall weight scale.
    """
    returns = np.asarray(returns, dtype=float)
    if returns.ndim != 2 or returns.shape[0] < 2:
        raise DataError("window needs at least 2 rows")
    if not np.all(np.isfinite(returns)):
        raise DataError("window contains non-finite returns")
    w = np.asarray(weights, dtype=float)[1:]
    if w.size != returns.shape[0] - 1 or np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise DataError("weights must be positive and match the window length")
    w = w / w.max()
    x, y = returns[:-1], returns[1:]
    sw = w.sum()
    x = x - (w @ x) / sw
    y = y - (w @ y) / sw
    return x, y, w


def _solve_ridge(x: np.ndarray, y: np.ndarray, w: np.ndarray, lam: float) -> np.ndarray:
    root = np.sqrt(w)[:, None]
    xw, yw = x * root, y * root
    gram = xw.T @ xw
    rhs = xw.T @ yw
    n = gram.shape[0]
    if lam > 0:
        gram[np.diag_indices(n)] += lam
    try:
        factor = linalg.cho_factor(gram, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise SingularSystemError(
            "X'X + lambda*I is not positive definite; use a positive lambda"
        ) from None
    d = np.abs(np.diag(factor[0]))
    # cond(X'X) above ~1e14 is treated as singular
    if d.min() <= 1e-7 * d.max():
        raise SingularSystemError("X'X is numerically singular; use a positive lambda")
    # (X'X + lam I) A' = X'Y
    return linalg.cho_solve(factor, rhs, check_finite=False).T


def _weighted_cov(resid: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, bool]:
    cov = (resid * w[:, None]).T @ resid / w.sum()
    cov = 0.5 * (cov + cov.T)
    eig = np.linalg.eigvalsh(cov)
    if eig[0] >= 0:
        return cov, False
    if eig[0] < -_NEG_EIG_WARN:
        warnings.warn(f"residual covariance has eigenvalue {eig[0]:.3e}; clipped to PSD",
                      NumericalWarning, stacklevel=3)
    vals, vecs = np.linalg.eigh(cov)
    cov = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    return 0.5 * (cov + cov.T), True


def _fit_arrays(returns, weights, lam: float, standardize: bool):
    if not lam >= 0:
        raise ValueError(f"lambda must be >= 0, got {lam!r}")
    x, y, w = _design(returns, weights)
    if standardize:
        scale = np.sqrt((w @ (x * x)) / w.sum())
        scale[scale == 0] = 1.0
        A = _solve_ridge(x / scale, y, w, lam) / scale[None, :]
    else:
        A = _solve_ridge(x, y, w, lam)
    if not np.all(np.isfinite(A)):
        raise DataError("non-finite VAR coefficients")
    sigma, clipped = _weighted_cov(y - x @ A.T, w)
    return A, sigma, clipped, x.shape[0]


def fit_ridge_var(window: WindowView, lam: float = DEFAULT_LAMBDA, standardize: bool = False) -> VarModel:
    """Fit ``Y_t = A Y_{t-1} + e_t`` on one window by weighted ridge regression.

    Both blocks are demeaned with the window weights, every pair is scaled by
    the square root of its weight, and ``A`` solves
    ``(X'X + lam I) A' = X'Y`` via a Cholesky solve. With
    ``standardize=True`` the penalty acts on regressors scaled to unit
    weighted variance.
    """
    A, sigma, clipped, n = _fit_arrays(window.returns, window.weights.weights, lam, standardize)
    return VarModel(A=A, sigma_eps=sigma, lam=float(lam), n_obs=n,
                    standardize=standardize, psd_clipped=clipped)


def residual_covariance(model: VarModel, window: WindowView) -> np.ndarray:
    """``sum_t w_t e_t e_t' / sum_t w_t`` for the residuals of ``model`` on ``window``."""
    x, y, w = _design(window.returns, window.weights.weights)
    cov, _ = _weighted_cov(y - x @ model.A.T, w)
    return cov
