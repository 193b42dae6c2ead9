"""Synthetic panels and coupled series with known ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SynthSpecError
from .panel_io import PricePanel, ReturnPanel
from .transfer_entropy import ChangeSeries

BURN_IN = 500
START_DATE = np.datetime64("2005-01-03", "D")
KINDS = ("var1", "coupled_pair", "shock_injection")


@dataclass(frozen=True)
class SynthSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SynthSpecError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "var1":
            A = np.atleast_2d(np.asarray(self.params.get("A", 0.0), dtype=float))
            if A.shape[0] != A.shape[1]:
                raise SynthSpecError("A must be square")
            radius = np.max(np.abs(np.linalg.eigvals(A)))
            if radius >= 1:
                raise SynthSpecError(f"A has spectral radius {radius:.4g} >= 1; not stationary")


def business_days(n: int, start=START_DATE) -> np.ndarray:
    """``n`` consecutive weekdays beginning at ``start``."""
    return np.busday_offset(start, np.arange(n), roll="forward")


def _as_matrix(value, n: int) -> np.ndarray:
    m = np.asarray(value, dtype=float)
    if m.ndim == 0:
        return m * np.eye(n)
    return m


def generate_var1(spec: SynthSpec) -> ReturnPanel:
    """Simulate ``Y_t = A Y_{t-1} + e_t`` with ``e_t ~ N(0, Sigma)``.

    ``spec.params``: ``T`` (rows kept), ``N`` (needed when ``A`` and
    ``Sigma`` are scalars), ``A`` (matrix or scalar times I, default 0),
    ``Sigma`` (matrix or scalar times I, default 1), optional ``entities``
    and ``start`` date. The first 500 simulated steps are discarded.
    """
    if spec.kind != "var1":
        raise SynthSpecError("generate_var1 needs a var1 spec")
    p = spec.params
    T = int(p["T"])
    A0, S0 = p.get("A", 0.0), p.get("Sigma", 1.0)
    n = int(p.get("N") or np.atleast_2d(A0 if np.ndim(A0) else S0).shape[0])
    A, sigma = _as_matrix(A0, n), _as_matrix(S0, n)
    if A.shape != (n, n) or sigma.shape != (n, n):
        raise SynthSpecError("A and Sigma must be N x N")
    if np.max(np.abs(np.linalg.eigvals(A))) >= 1:
        raise SynthSpecError("A is not stationary")
    if np.min(np.linalg.eigvalsh(0.5 * (sigma + sigma.T))) < -1e-12:
        raise SynthSpecError("Sigma is not positive semidefinite")
    rng = np.random.default_rng(spec.seed)
    if np.array_equal(sigma, np.eye(n)):
        eps = rng.standard_normal((T + BURN_IN, n))
    else:
        eps = rng.multivariate_normal(np.zeros(n), sigma, size=T + BURN_IN, method="cholesky")
    y = np.empty_like(eps)
    prev = np.zeros(n)
    for t in range(T + BURN_IN):
        prev = A @ prev + eps[t]
        y[t] = prev
    entities = tuple(p.get("entities") or (f"S{i:02d}" for i in range(n)))
    dates = business_days(T, np.datetime64(p.get("start", START_DATE), "D"))
    return ReturnPanel(dates, entities, y[BURN_IN:])


def generate_coupled_pair(beta: float, noise: float, T: int, seed: int, lag: int = 1
                          ) -> tuple[ChangeSeries, ChangeSeries]:
    """Driver ``y`` iid N(0,1) and target ``x_t = beta*y_{t-lag} + noise*eta_t``.

    The first ``lag`` values of ``x`` carry noise only. Returns ``(x, y)``.
    """
    if T < 20:
        raise SynthSpecError("T must be at least 20")
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(T)
    eta = rng.standard_normal(T)
    x = noise * eta
    x[lag:] += beta * y[:-lag]
    return ChangeSeries(x, label="x"), ChangeSeries(y, label="y")


def inject_shock(panel: ReturnPanel, date, magnitude: float) -> ReturnPanel:
    """Add ``magnitude`` to every entity's return on ``date``.

    ``date`` may be a date or an integer row index.
    """
    if isinstance(date, (int, np.integer)):
        row = int(date)
        if not 0 <= row < panel.returns.shape[0]:
            raise SynthSpecError(f"row {row} outside panel")
    else:
        hits = np.flatnonzero(panel.dates == np.datetime64(date, "D"))
        if hits.size == 0:
            raise SynthSpecError(f"date {date} not in panel")
        row = int(hits[0])
    rets = np.array(panel.returns, copy=True)
    rets[row] += magnitude
    return ReturnPanel(panel.dates, panel.entities, rets, panel.missing_mask)


def returns_to_prices(panel: ReturnPanel, start_price: float = 100.0) -> PricePanel:
    """Closes whose log returns reproduce ``panel``; one extra leading date."""
    first = np.busday_offset(panel.dates[0], -1, roll="backward")
    logp = np.vstack([np.zeros(panel.returns.shape[1]), np.cumsum(panel.returns, axis=0)])
    return PricePanel(np.concatenate([[first], panel.dates]), panel.entities, start_price * np.exp(logp))
