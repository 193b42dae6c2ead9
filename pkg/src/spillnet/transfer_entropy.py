"""Linear and three-band transfer entropy between two change series.

Conventions used throughout: for a pair ``(x, y)`` the functions
``linear_te(x, y)`` and ``nonlinear_te(x, y)`` measure the flow *from y into
x*, i.e. how much ``y[t-lag]`` reduces the uncertainty of ``x[t]`` beyond
``x[t-lag]``. All entropies are in nats.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import special, stats

from .connectedness import ConnectednessSeries
from .errors import AlignmentError, ContractError, DegenerateSeriesError, InsufficientDataError

MIN_EXTRA_OBS = 10
DEFAULT_N_PERM = 10_000
DEFAULT_DELTAS = (1.0, 2.0, 3.0)
STAR_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))
_PERM_BLOCK = 512


# ---------------------------------------------------------------- series

@dataclass(frozen=True)
class ChangeSeries:
    values: np.ndarray
    horizon: int = 1
    label: str = ""
    dates: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self) -> int:
        return self.values.size


def difference_series(series, horizon: int = 1, label: str | None = None) -> ChangeSeries:
    """Changes over ``horizon`` observations, non-overlapping when ``horizon > 1``.

    ``values[k*h] - values[(k-1)*h]`` for ``k = 1 .. floor((L-1)/h)``.
    """
    if int(horizon) != horizon or horizon < 1:
        raise ValueError(f"horizon must be a positive integer, got {horizon!r}")
    dates = None
    if isinstance(series, ConnectednessSeries):
        values, dates, label = series.values, series.end_dates, series.label if label is None else label
    else:
        values = np.asarray(series, dtype=float)
    if values.size < horizon + 1:
        raise InsufficientDataError(f"series of length {values.size} too short for horizon {horizon}")
    sampled = values[::horizon]
    return ChangeSeries(np.diff(sampled), horizon=horizon, label=label or "",
                        dates=None if dates is None else dates[::horizon][1:])


def _values(s) -> np.ndarray:
    v = s.values if isinstance(s, ChangeSeries) else np.asarray(s)
    return v if v.dtype.kind in "iub" else v.astype(float, copy=False)


def _aligned(x, y, lag: int):
    x, y = _values(x), _values(y)
    if x.shape != y.shape or x.ndim != 1:
        raise AlignmentError(f"series must be 1-D of equal length, got {x.shape} and {y.shape}")
    if int(lag) != lag or lag < 1:
        raise ValueError(f"lag must be a positive integer, got {lag!r}")
    if x.size < lag + MIN_EXTRA_OBS:
        raise InsufficientDataError(f"need at least lag + {MIN_EXTRA_OBS} observations, have {x.size}")
    return x[lag:], x[:-lag], y[:-lag]


# ---------------------------------------------------------------- linear

def _rss(design: np.ndarray, target: np.ndarray) -> tuple[float, int]:
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    r = target - design @ coef
    return float(r @ r), int(rank)


def _linear_fit(x, y, lag: int):
    xt, xl, yl = _aligned(x, y, lag)
    if np.var(xt) == 0 or np.var(yl) == 0 or np.var(xl) == 0:
        raise DegenerateSeriesError("series must have positive variance")
    ones = np.ones_like(xt)
    rss_r, _ = _rss(np.column_stack([ones, xl]), xt)
    rss_f, rank = _rss(np.column_stack([ones, xl, yl]), xt)
    if rss_r <= 0:
        raise DegenerateSeriesError("restricted regression has zero residual variance")
    return rss_r, rss_f, xt.size, rank < 3


def linear_te(x, y, lag: int = 1) -> float:
    """Gaussian transfer entropy from ``y`` to ``x``.

    Half the log ratio of the residual variance of ``x[t]`` regressed on
    ``(1, x[t-lag])`` to that of ``x[t]`` regressed on
    ``(1, x[t-lag], y[t-lag])``. Collinear regressors use the minimum-norm
    least-squares solution.
    """
    rss_r, rss_f, _, _ = _linear_fit(x, y, lag)
    return 0.5 * math.log(rss_r / rss_f)


def gaussian_entropy(cov) -> float:
    """``0.5 * log det(2 pi e Sigma)`` for a covariance matrix."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    sign, logdet = np.linalg.slogdet(2 * math.pi * math.e * cov)
    if sign <= 0:
        raise DegenerateSeriesError("covariance is singular")
    return 0.5 * logdet


def linear_te_logdet(x, y, lag: int = 1) -> float:
    """Same quantity as :func:`linear_te`, through four Gaussian entropies."""
    xt, xl, yl = _aligned(x, y, lag)
    cov = np.cov(np.vstack([xt, xl, yl]), bias=True)
    h = lambda idx: gaussian_entropy(cov[np.ix_(idx, idx)])  # noqa: E731
    return h([0, 1]) - h([1]) - h([0, 1, 2]) + h([1, 2])


def linear_te_f_pvalue(x, y, lag: int = 1) -> float:
    """Upper-tail p-value of the nested-regression F test for adding ``y[t-lag]``.

    Degrees of freedom are ``(1, n - 3)`` with ``n = len(x) - lag``.
    """
    rss_r, rss_f, n, _ = _linear_fit(x, y, lag)
    df2 = n - 3
    if rss_f <= 0:
        return 0.0
    f = (rss_r - rss_f) / (rss_f / df2)
    return float(stats.f.sf(max(f, 0.0), 1, df2))


# ---------------------------------------------------------------- symbolic

@dataclass(frozen=True)
class SymbolSeries:
    """Three-band symbols: -1 below, 0 inside, +1 above ``mu +- delta*sigma``."""

    symbols: np.ndarray
    delta: float
    mu: float
    sigma: float
    degenerate: bool = False


def discretize_three_band(series, delta: float, mu: float | None = None,
                          sigma: float | None = None) -> SymbolSeries:
    """Map values to {-1, 0, +1} by their distance from the mean.

    ``mu`` and ``sigma`` default to the series mean and population standard
    deviation. Zero ``sigma`` gives all-zero symbols and ``degenerate=True``.
    """
    v = _values(series)
    if v.size < 2:
        raise InsufficientDataError("need at least 2 values to discretize")
    if not delta > 0:
        raise ValueError(f"delta must be > 0, got {delta!r}")
    mu = float(v.mean()) if mu is None else float(mu)
    sigma = float(v.std()) if sigma is None else float(sigma)
    if sigma == 0:
        return SymbolSeries(np.zeros(v.size, dtype=np.int8), float(delta), mu, sigma, True)
    band = delta * sigma
    sym = np.where(np.abs(v - mu) <= band, 0, np.where(v < mu - band, -1, 1)).astype(np.int8)
    return SymbolSeries(sym, float(delta), mu, sigma)


def plugin_entropy(joint) -> float:
    """Plug-in (maximum-likelihood) entropy of observed tuples, in nats."""
    arr = np.asarray(list(joint) if not isinstance(joint, np.ndarray) else joint)
    if arr.size == 0:
        raise ValueError("plugin_entropy needs at least one observation")
    if arr.ndim == 1:
        arr = arr[:, None]
    _, counts = np.unique(arr, axis=0, return_counts=True)
    return float(special.entr(counts / counts.sum()).sum())


def nonlinear_te(x, y, lag: int = 1, delta: float = 1.0) -> float:
    """Plug-in transfer entropy from ``y`` to ``x`` on three-band symbols.

    ``H(Xt, Xl) - H(Xl) - H(Xt, Xl, Yl) + H(Xl, Yl)``. Each series is
    discretized with its own mean and standard deviation.
    """
    x, y = _values(x), _values(y)
    sx, sy = discretize_three_band(x, delta), discretize_three_band(y, delta)
    if sx.degenerate and sy.degenerate:
        return 0.0
    xt, xl, yl = _aligned(sx.symbols, sy.symbols, lag)
    return (plugin_entropy(np.column_stack([xt, xl])) - plugin_entropy(xl)
            - plugin_entropy(np.column_stack([xt, xl, yl])) + plugin_entropy(np.column_stack([xl, yl])))


# ---------------------------------------------------------------- estimators

@dataclass(frozen=True)
class Estimator:
    kind: str = "linear"
    delta: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "nonlinear"):
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.kind == "nonlinear" and not (self.delta and self.delta > 0):
            raise ValueError("nonlinear estimator needs delta > 0")

    @classmethod
    def linear(cls) -> "Estimator":
        return cls("linear")

    @classmethod
    def nonlinear(cls, delta: float) -> "Estimator":
        return cls("nonlinear", float(delta))

    @classmethod
    def parse(cls, text: str) -> "Estimator":
        text = text.strip()
        if text == "linear":
            return cls.linear()
        if text.startswith("nonlinear_d"):
            return cls.nonlinear(float(text[len("nonlinear_d"):]))
        raise ValueError(f"cannot parse estimator {text!r}")

    @property
    def label(self) -> str:
        return "linear" if self.kind == "linear" else f"nonlinear_d{self.delta:g}"

    @property
    def title(self) -> str:
        if self.kind == "linear":
            return "linear"
        return "non-linear threshold " + ("σ" if self.delta == 1 else f"{self.delta:g}σ")

    def te(self, x, y, lag: int = 1) -> float:
        if self.kind == "linear":
            return linear_te(x, y, lag)
        return nonlinear_te(x, y, lag, self.delta)


def default_estimators(deltas: Iterable[float] = DEFAULT_DELTAS) -> tuple[Estimator, ...]:
    return (Estimator.linear(), *(Estimator.nonlinear(d) for d in deltas))


def net_information_flow(te_xy: float, te_yx: float, *, estimator_xy: Estimator | None = None,
                         estimator_yx: Estimator | None = None) -> float:
    """``te_xy - te_yx``; positive means information flows mainly from x to y."""
    if estimator_xy is not None and estimator_yx is not None and estimator_xy != estimator_yx:
        raise ContractError(f"cannot compare {estimator_xy.label} with {estimator_yx.label}")
    return te_xy - te_yx


# ---------------------------------------------------------------- permutation null

class _LinearKernel:
    """Full-model RSS for many replacements of the lagged driver column.

    With ``e`` the residual of ``x[t]`` on ``Z = (1, x[t-lag])`` and ``v`` a
    driver column, ``RSS_full = RSS_r - (e.v)^2 / |M v|^2``, where ``M``
    projects out ``Z``. A shuffled driver keeps ``sum(v)`` and ``v.v``, so each
    replica needs only ``v.x_lag`` and ``v.e``.
    """

    def __init__(self, x, y, lag):
        xt, xl, yl = _aligned(x, y, lag)
        if np.var(xt) == 0 or np.var(xl) == 0 or np.var(yl) == 0:
            raise DegenerateSeriesError("series must have positive variance")
        z = np.column_stack([np.ones_like(xl), xl])
        self.gram_inv = np.linalg.pinv(z.T @ z)
        self.resid = xt - z @ (self.gram_inv @ (z.T @ xt))
        self.rss_r = float(self.resid @ self.resid)
        if self.rss_r <= 0:
            raise DegenerateSeriesError("restricted regression has zero residual variance")
        self.xl, self.driver = xl, yl
        self.vsum, self.vv = float(yl.sum()), float(yl @ yl)

    def te(self, driver_rows: np.ndarray) -> np.ndarray:
        q = driver_rows @ self.xl
        r = driver_rows @ self.resid
        zv = np.stack([np.full_like(q, self.vsum), q])
        proj = np.einsum("ik,ij,jk->k", zv, self.gram_inv, zv)
        mv = self.vv - proj
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(mv > 1e-12 * self.vv, r * r / mv, 0.0)
            return 0.5 * np.log(self.rss_r / (self.rss_r - gain))


class _SymbolKernel:
    def __init__(self, x, y, lag, delta):
        sx, sy = discretize_three_band(x, delta), discretize_three_band(y, delta)
        self.constant = sx.degenerate and sy.degenerate
        xt, xl, yl = _aligned(sx.symbols.astype(np.int64) + 1, sy.symbols.astype(np.int64) + 1, lag)
        n = xt.size
        self.n = n
        self.pair = (xt * 3 + xl) * 3
        self.xl3 = xl * 3
        self.driver = yl
        self.base = self._h(np.bincount(xt * 3 + xl, minlength=9)[None]) - self._h(
            np.bincount(xl, minlength=3)[None])

    def _h(self, counts: np.ndarray) -> np.ndarray:
        return special.entr(counts / self.n).sum(axis=1)

    def _counts(self, codes: np.ndarray, k: int) -> np.ndarray:
        rows = codes.shape[0]
        flat = (codes + k * np.arange(rows)[:, None]).ravel()
        return np.bincount(flat, minlength=k * rows).reshape(rows, k)

    def te(self, driver_rows: np.ndarray) -> np.ndarray:
        if self.constant:
            return np.zeros(driver_rows.shape[0])
        h3 = self._h(self._counts(self.pair + driver_rows, 27))
        h2 = self._h(self._counts(self.xl3 + driver_rows, 9))
        return self.base[0] - h3 + h2


def _kernel(estimator: Estimator, x, y, lag):
    if estimator.kind == "linear":
        return _LinearKernel(x, y, lag)
    return _SymbolKernel(x, y, lag, estimator.delta)


def replica_permutation(n: int, seed: int, replica: int, key: Sequence[int] = ()) -> np.ndarray:
    """Permutation used by replica ``replica``; its RNG stream depends only on
    ``(seed, *key, replica)``."""
    return np.random.default_rng([int(seed), *map(int, key), int(replica)]).permutation(n)


@dataclass(frozen=True)
class PermutationResult:
    te_obs: float
    p_value: float
    n_perm: int
    seed: int
    n_exceed: int


def permutation_pvalues(x, y, lag: int, estimators: Sequence[Estimator], n_perm: int, seed: int,
                        key: Sequence[int] = (), workers: int = 1) -> dict[Estimator, PermutationResult]:
    """Permutation p-values for transfer entropy from ``y`` to ``x``.

    Each replica shuffles only the lagged driver ``y[t-lag]``; the target and
    its own lag stay in place. All estimators see the same replicas.
    ``p = (1 + #{te_perm >= te_obs}) / (1 + n_perm)``.
    """
    if int(n_perm) != n_perm or n_perm < 1:
        raise ValueError(f"n_perm must be a positive integer, got {n_perm!r}")
    if seed is None:
        raise ValueError("a seed is required for permutation tests")
    kernels = {e: _kernel(e, x, y, lag) for e in estimators}
    first = next(iter(kernels.values()))
    driver = {e: k.driver for e, k in kernels.items()}
    n = first.driver.size
    obs = {e: float(k.te(driver[e][None, :])[0]) for e, k in kernels.items()}

    def block(lo: int, hi: int) -> dict[Estimator, int]:
        perms = np.stack([replica_permutation(n, seed, i, key) for i in range(lo, hi)])
        return {e: int(np.count_nonzero(k.te(driver[e][perms]) >= obs[e])) for e, k in kernels.items()}

    bounds = [(lo, min(lo + _PERM_BLOCK, n_perm)) for lo in range(0, n_perm, _PERM_BLOCK)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: block(*b), bounds))
    else:
        parts = [block(*b) for b in bounds]
    out = {}
    for e in kernels:
        exceed = sum(p[e] for p in parts)
        out[e] = PermutationResult(obs[e], (1 + exceed) / (1 + n_perm), int(n_perm), int(seed), exceed)
    return out


def permutation_pvalue(x, y, lag: int = 1, estimator: Estimator | None = None,
                       n_perm: int = DEFAULT_N_PERM, seed: int = 0, key: Sequence[int] = (),
                       workers: int = 1) -> PermutationResult:
    estimator = estimator or Estimator.linear()
    return permutation_pvalues(x, y, lag, [estimator], n_perm, seed, key, workers)[estimator]


# ---------------------------------------------------------------- tables

@dataclass(frozen=True)
class TeResult:
    """Both directions of one estimator on one pair of series.

    ``te_xy`` is the flow from series ``x_label`` to ``y_label``.
    """

    x_label: str
    y_label: str
    estimator: Estimator
    te_xy: float
    te_yx: float
    lag: int = 1
    horizon: int = 1
    p_xy: float | None = None
    p_yx: float | None = None
    p_xy_f: float | None = None
    p_yx_f: float | None = None
    n_perm: int = 0
    seed: int | None = None
    n_obs: int = 0

    @property
    def net_flow(self) -> float:
        return self.te_xy - self.te_yx


@dataclass(frozen=True)
class TeConfig:
    lag: int = 1
    horizon: int = 1
    deltas: tuple[float, ...] = DEFAULT_DELTAS
    n_perm: int = DEFAULT_N_PERM
    seed: int | None = None
    workers: int = 1


def intersect_series(series: Sequence[ConnectednessSeries]) -> list[ConnectednessSeries]:
    """Restrict every series to the end dates they all share."""
    common = series[0].end_dates
    for s in series[1:]:
        common = np.intersect1d(common, s.end_dates)
    out = []
    for s in series:
        keep = np.isin(s.end_dates, common)
        out.append(ConnectednessSeries(s.end_dates[keep], s.values[keep], s.imputation_fraction[keep],
                                       tuple(f for f, k in zip(s.flags, keep) if k), s.meta, s.label))
    return out


def _check_calendar(series: Sequence) -> None:
    dated = [s for s in series if isinstance(s, ConnectednessSeries)]
    lengths = {len(_values(s)) if not isinstance(s, ConnectednessSeries) else len(s) for s in series}
    if len(lengths) > 1:
        raise AlignmentError("series lengths differ; intersect calendars first")
    for s in dated[1:]:
        if not np.array_equal(s.end_dates, dated[0].end_dates):
            raise AlignmentError("series are on different calendars; intersect them first")


def te_table(series: Sequence, cfg: TeConfig | None = None, labels: Sequence[str] | None = None) -> list[TeResult]:
    """Transfer entropy in both directions for every pair and estimator.

    ``series`` are level series (typically :class:`ConnectednessSeries`) on a
    common calendar; they are differenced at ``cfg.horizon``. Rows come
    grouped by unordered pair, pairs in input order.
    """
    cfg = cfg or TeConfig()
    if len(series) < 2:
        raise ValueError("te_table needs at least two series")
    if cfg.n_perm > 0 and cfg.seed is None:
        raise ValueError("a seed is required when n_perm > 0")
    _check_calendar(series)
    if labels is None:
        labels = [getattr(s, "label", "") or f"S{i}" for i, s in enumerate(series)]
    changes = [difference_series(s, cfg.horizon) for s in series]
    estimators = default_estimators(cfg.deltas)

    rows: list[TeResult] = []
    for i, j in itertools.combinations(range(len(series)), 2):
        a, b = changes[i], changes[j]
        # flow a -> b has target b, driver a
        te_ab = {e: e.te(b, a, cfg.lag) for e in estimators}
        te_ba = {e: e.te(a, b, cfg.lag) for e in estimators}
        p_ab = p_ba = {}
        if cfg.n_perm > 0:
            p_ab = permutation_pvalues(b, a, cfg.lag, estimators, cfg.n_perm, cfg.seed, (i, j, 0), cfg.workers)
            p_ba = permutation_pvalues(a, b, cfg.lag, estimators, cfg.n_perm, cfg.seed, (i, j, 1), cfg.workers)
        for e in estimators:
            linear = e.kind == "linear"
            rows.append(TeResult(
                x_label=labels[i], y_label=labels[j], estimator=e,
                te_xy=te_ab[e], te_yx=te_ba[e], lag=cfg.lag, horizon=cfg.horizon,
                p_xy=p_ab[e].p_value if p_ab else None,
                p_yx=p_ba[e].p_value if p_ba else None,
                p_xy_f=linear_te_f_pvalue(b, a, cfg.lag) if linear else None,
                p_yx_f=linear_te_f_pvalue(a, b, cfg.lag) if linear else None,
                n_perm=cfg.n_perm, seed=cfg.seed, n_obs=len(a) - cfg.lag,
            ))
    return rows


def stars(p: float | None) -> str:
    if p is None or math.isnan(p):
        return ""
    for level, mark in STAR_LEVELS:
        if p < level:
            return mark
    return ""


def _p(v: float | None) -> str:
    return "" if v is None else f"{v:.6g}"


TABLE_HEADER = ("pair", "direction", "estimator", "te", "p_perm", "p_f", "net_flow", "stars")


def te_table_to_csv(rows: Sequence[TeResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for r in rows:
        pair = f"{r.x_label}-{r.y_label}"
        w.writerow([pair, f"{r.x_label}->{r.y_label}", r.estimator.label, f"{r.te_xy:.6f}",
                    _p(r.p_xy), _p(r.p_xy_f), f"{r.net_flow:.6f}", stars(r.p_xy)])
        w.writerow([pair, f"{r.y_label}->{r.x_label}", r.estimator.label, f"{r.te_yx:.6f}",
                    _p(r.p_yx), _p(r.p_yx_f), f"{-r.net_flow:.6f}", stars(r.p_yx)])
    return buf.getvalue()


def render_te_table(rows: Sequence[TeResult], footnote: bool = True) -> str:
    """Human-readable table, one block per unordered pair."""
    lines: list[str] = []
    groups = itertools.groupby(rows, key=lambda r: (r.x_label, r.y_label))
    for (xl, yl), group in groups:
        if lines:
            lines.append("")
        head = ("method", f"TE({xl}->{yl})", f"TE({yl}->{xl})", "Net Information Flow")
        lines.append(f"{head[0]:<28}{head[1]:<16}{head[2]:<16}{head[3]}")
        for r in group:
            a = f"{r.te_xy:.6f}{stars(r.p_xy)}"
            b = f"{r.te_yx:.6f}{stars(r.p_yx)}"
            lines.append(f"{r.estimator.title:<28}{a:<16}{b:<16}{r.net_flow:.6f}")
    if footnote:
        lines += ["", "* p-value < 0.05, ** p-value < 0.01, *** p-value < 0.001"]
    return "\n".join(lines) + "\n"
