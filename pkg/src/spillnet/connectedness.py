"""One-step FEVD connectedness and the rolling total-connectedness series."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, ParseError, WindowError
from .panel_io import ReturnPanel
from .ridge_var import DEFAULT_LAMBDA, _fit_arrays
from .rolling import DEFAULT_STRIDE, DEFAULT_THETA, DEFAULT_WINDOW, exponential_weights, window_ends

PIVOT_RTOL = 1e-12
IMPUTATION_FLAG_THRESHOLD = 0.25

FLAG_IMPUTED = "imputed_gt_25pct"
FLAG_DEGENERATE = "zero_variance_rows"
FLAG_CLIPPED = "psd_clipped"


@dataclass(frozen=True)
class ShockBasis:
    """Lower-triangular one-step MA coefficients with ``theta0 theta0' = Sigma``."""

    theta0: np.ndarray


@dataclass(frozen=True)
class ConnectednessMatrix:
    c: np.ndarray
    ordering: tuple[str, ...] = ()
    degenerate_rows: tuple[int, ...] = ()

    @property
    def total(self) -> float:
        return total_connectedness(self)


def _semidefinite_cholesky(sigma: np.ndarray, tol: float) -> np.ndarray:
    n = sigma.shape[0]
    L = np.zeros_like(sigma)
    for j in range(n):
        lj = L[j, :j]
        d = sigma[j, j] - lj @ lj
        if d <= tol:
            continue
        L[j, j] = math.sqrt(d)
        L[j + 1:, j] = (sigma[j + 1:, j] - L[j + 1:, :j] @ lj) / L[j, j]
    return L


def shock_basis(sigma_eps) -> ShockBasis:
    """Cholesky factor of the residual covariance in the given ordering.

    Positive-semidefinite input is handled without pivoting: a column whose
    pivot falls below ``1e-12 * trace / N`` is set to zero.
    """
    sigma = np.asarray(sigma_eps, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DataError("covariance must be a square matrix")
    if not np.all(np.isfinite(sigma)):
        raise DataError("covariance contains non-finite entries")
    scale = max(1.0, float(np.abs(sigma).max())) if sigma.size else 1.0
    if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-10 * scale):
        raise DataError("covariance is not symmetric")
    n = sigma.shape[0]
    tol = PIVOT_RTOL * max(float(np.trace(sigma)), 0.0) / n
    try:
        L = np.linalg.cholesky(sigma)
        if np.diag(L).min() ** 2 <= tol:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        L = _semidefinite_cholesky(sigma, tol)
    return ShockBasis(L)


def fevd_shares(basis: ShockBasis, ordering: Sequence[str] = ()) -> ConnectednessMatrix:
    """Row-normalised squared one-step coefficients ``c_ij``.

    Rows whose forecast-error variance is zero get self-share 1 and are
    listed in ``degenerate_rows``.
    """
    sq = np.square(basis.theta0)
    rowsum = sq.sum(axis=1)
    degenerate = np.flatnonzero(rowsum <= 0)
    if degenerate.size == sq.shape[0]:
        raise DataError("every row has zero forecast-error variance")
    with np.errstate(invalid="ignore", divide="ignore"):
        c = sq / rowsum[:, None]
    for i in degenerate:
        c[i] = 0.0
        c[i, i] = 1.0
    return ConnectednessMatrix(c, tuple(ordering), tuple(int(i) for i in degenerate))


def total_connectedness(c: ConnectednessMatrix | np.ndarray) -> float:
    """Average off-diagonal mass ``(1/N) sum_{i != j} c_ij``."""
    m = c.c if isinstance(c, ConnectednessMatrix) else np.asarray(c, dtype=float)
    n = m.shape[0]
    return float((m.sum() - np.trace(m)) / n)


# ---------------------------------------------------------------- series

@dataclass(frozen=True)
class ConnectednessConfig:
    window: int = DEFAULT_WINDOW
    theta: float = DEFAULT_THETA
    lam: float = DEFAULT_LAMBDA
    stride: int = DEFAULT_STRIDE
    standardize: bool = False
    ordering: str | tuple[str, ...] = "input"
    workers: int = 1
    keep_matrices: bool = False

    def meta(self) -> dict:
        d = asdict(self)
        d.pop("workers")
        d.pop("keep_matrices")
        d["theta"] = "inf" if math.isinf(self.theta) else self.theta
        d["ordering"] = self.ordering if isinstance(self.ordering, str) else list(self.ordering)
        d["demeaning"] = "weighted"
        d["lag_order"] = 1
        d["orthogonalization"] = "cholesky"
        return d


@dataclass(frozen=True)
class ConnectednessSeries:
    end_dates: np.ndarray
    values: np.ndarray
    imputation_fraction: np.ndarray | None = None
    flags: tuple[tuple[str, ...], ...] = ()
    meta: dict = field(default_factory=dict)
    label: str = ""
    matrices: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        dates = np.asarray(self.end_dates, dtype="datetime64[D]")
        values = np.asarray(self.values, dtype=float)
        if dates.shape != values.shape:
            raise ValueError("end_dates and values must have equal length")
        imp = self.imputation_fraction
        imp = np.zeros(values.size) if imp is None else np.asarray(imp, dtype=float)
        flags = tuple(tuple(f) for f in self.flags) or tuple(() for _ in range(values.size))
        object.__setattr__(self, "end_dates", dates)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "imputation_fraction", imp)
        object.__setattr__(self, "flags", flags)

    def __len__(self) -> int:
        return self.values.size


def resolve_ordering(entities: Sequence[str], ordering) -> tuple[str, ...]:
    entities = tuple(entities)
    if ordering == "input":
        return entities
    if ordering == "reversed":
        return entities[::-1]
    ordering = tuple(ordering)
    if sorted(ordering) != sorted(entities):
        raise DataError("explicit ordering must be a permutation of the panel entities")
    return ordering


def _window_result(returns, mask, weights, cfg: ConnectednessConfig):
    A, sigma, clipped, _ = _fit_arrays(returns, weights, cfg.lam, cfg.standardize)
    cm = fevd_shares(shock_basis(sigma))
    flags = []
    imp = float(mask.mean()) if mask.size else 0.0
    if imp > IMPUTATION_FLAG_THRESHOLD:
        flags.append(FLAG_IMPUTED)
    if cm.degenerate_rows:
        flags.append(FLAG_DEGENERATE)
    if clipped:
        flags.append(FLAG_CLIPPED)
    return total_connectedness(cm), imp, tuple(flags), (cm.c if cfg.keep_matrices else None)


def _run_chunk(returns, mask, dates, ends, cfg):
    weights = exponential_weights(cfg.window, cfg.theta).weights
    out = []
    for e in ends:
        lo = e - cfg.window + 1
        try:
            out.append(_window_result(returns[lo:e + 1], mask[lo:e + 1], weights, cfg))
        except DataError as exc:
            raise WindowError(str(dates[e]), exc) from exc
    return out


def connectedness_series(panel: ReturnPanel, cfg: ConnectednessConfig | None = None,
                         label: str = "") -> ConnectednessSeries:
    """Total connectedness over rolling windows of ``panel``.

    Each window is fitted, decomposed and summarised independently; with
    ``cfg.workers > 1`` windows are spread over processes and reassembled in
    date order, giving results identical to the serial run.
    """
    cfg = cfg or ConnectednessConfig()
    order = resolve_ordering(panel.entities, cfg.ordering)
    panel = panel.select(order)
    returns = np.ascontiguousarray(panel.returns)
    mask = np.ascontiguousarray(panel.missing_mask)
    ends = window_ends(returns.shape[0], cfg.window, cfg.stride)

    if cfg.workers > 1 and ends.size > 1:
        chunks = [c for c in np.array_split(ends, min(cfg.workers * 4, ends.size)) if c.size]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_run_chunk, returns, mask, panel.dates, c, cfg) for c in chunks]
            results = [r for f in futures for r in f.result()]
    else:
        results = _run_chunk(returns, mask, panel.dates, ends, cfg)

    meta = cfg.meta()
    meta["ordering_used"] = list(order)
    meta["n_entities"] = len(order)
    meta["n_rows"] = int(returns.shape[0])
    meta["n_windows"] = int(ends.size)
    meta["panel_imputation_fraction"] = panel.imputation_fraction
    return ConnectednessSeries(
        end_dates=panel.dates[ends],
        values=np.array([r[0] for r in results]),
        imputation_fraction=np.array([r[1] for r in results]),
        flags=tuple(r[2] for r in results),
        meta=meta,
        label=label,
        matrices=tuple(r[3] for r in results) if cfg.keep_matrices else None,
    )


def ordering_sensitivity(panel: ReturnPanel, cfg: ConnectednessConfig | None = None) -> float:
    """Max absolute change in total connectedness when the ordering is reversed."""
    cfg = cfg or ConnectednessConfig()
    base = connectedness_series(panel, cfg)
    order = resolve_ordering(panel.entities, cfg.ordering)
    rev = connectedness_series(panel, ConnectednessConfig(**{**asdict(cfg), "ordering": order[::-1],
                                                             "keep_matrices": False}))
    return float(np.max(np.abs(base.values - rev.values)))


# ---------------------------------------------------------------- files

SERIES_HEADER = ("end_date", "total_connectedness", "imputation_fraction", "flags")


def _fmt(v: float) -> str:
    return repr(float(v))


def series_to_csv(series: ConnectednessSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_HEADER)
    for d, v, imp, fl in zip(series.end_dates, series.values, series.imputation_fraction, series.flags):
        w.writerow([str(d), _fmt(v), _fmt(imp), ";".join(fl)])
    return buf.getvalue()


def matrices_to_csv(series: ConnectednessSeries, entities: Sequence[str]) -> str:
    if series.matrices is None:
        raise ValueError("series was computed without keep_matrices")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["end_date", "entity_i", "entity_j", "c_ij"])
    for d, m in zip(series.end_dates, series.matrices):
        for i, ei in enumerate(entities):
            for j, ej in enumerate(entities):
                w.writerow([str(d), ei, ej, _fmt(m[i, j])])
    return buf.getvalue()


def read_series_csv(source, label: str = "") -> ConnectednessSeries:
    """Read a file written by :func:`series_to_csv`."""
    if isinstance(source, (str, os.PathLike)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(h.strip() for h in rows[0][:2]) != SERIES_HEADER[:2]:
        raise ParseError("series file must start with end_date,total_connectedness", row=1)
    dates, vals, imps, flags = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            dates.append(np.datetime64(row[0].strip(), "D"))
            vals.append(float(row[1]))
        except ValueError:
            raise ParseError(f"cannot parse {row[:2]}", row=lineno) from None
        imps.append(float(row[2]) if len(row) > 2 and row[2] else 0.0)
        flags.append(tuple(f for f in row[3].split(";") if f) if len(row) > 3 else ())
    return ConnectednessSeries(np.array(dates, dtype="datetime64[D]"), vals, imps, tuple(flags), label=label)
