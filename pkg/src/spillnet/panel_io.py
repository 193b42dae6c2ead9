"""Loading closing prices, log returns and calendar alignment.

Prices are stored as a dense ``(dates, entities)`` float matrix with NaN
marking a missing close. Entity identifiers may carry a region tag using
the ``TICKER@REGION`` convention.
"""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .errors import (
    AlignmentError,
    DuplicateKeyError,
    EmptyInputError,
    InsufficientDataError,
    MissingPriceWarning,
    ParseError,
)

SCHEMAS = ("long", "wide")
MISSING_POLICIES = ("zero", "drop")
CALENDAR_POLICIES = ("intersect", "union_zero_fill")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


def _as_dates(dates) -> np.ndarray:
    return np.asarray(dates, dtype="datetime64[D]")


def _check_dates(dates: np.ndarray) -> None:
    if dates.size > 1 and not np.all(dates[1:] > dates[:-1]):
        raise ParseError("dates must be strictly increasing without duplicates")


@dataclass(frozen=True)
class PricePanel:
    """Daily closes, rows = dates, columns = entities; NaN = missing."""

    dates: np.ndarray
    entities: tuple[str, ...]
    closes: np.ndarray

    def __post_init__(self):
        dates = _as_dates(self.dates)
        closes = np.asarray(self.closes, dtype=float)
        if closes.ndim != 2:
            raise ValueError("closes must be a 2-D matrix")
        if closes.shape != (dates.size, len(self.entities)):
            raise ValueError(
                f"closes shape {closes.shape} does not match "
                f"{dates.size} dates x {len(self.entities)} entities"
            )
        _check_dates(dates)
        present = ~np.isnan(closes)
        if np.any(closes[present] <= 0) or np.any(np.isinf(closes)):
            raise ValueError("stored prices must be finite and > 0 (use NaN for missing)")
        object.__setattr__(self, "dates", _frozen(dates))
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "closes", _frozen(closes))

    @property
    def shape(self) -> tuple[int, int]:
        return self.closes.shape

    def select(self, entities: Iterable[str]) -> "PricePanel":
        entities = list(entities)
        idx = [self.entities.index(e) for e in entities]
        return PricePanel(self.dates, tuple(entities), self.closes[:, idx])


@dataclass(frozen=True)
class ReturnPanel:
    """Log returns with a mask of imputed (zero-filled) cells."""

    dates: np.ndarray
    entities: tuple[str, ...]
    returns: np.ndarray
    missing_mask: np.ndarray | None = None

    def __post_init__(self):
        dates = _as_dates(self.dates)
        returns = np.asarray(self.returns, dtype=float)
        if returns.ndim != 2 or returns.shape != (dates.size, len(self.entities)):
            raise ValueError(
                f"returns shape {returns.shape} does not match "
                f"{dates.size} dates x {len(self.entities)} entities"
            )
        _check_dates(dates)
        mask = self.missing_mask
        mask = np.zeros(returns.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if mask.shape != returns.shape:
            raise ValueError("missing_mask shape must match returns")
        object.__setattr__(self, "dates", _frozen(dates))
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "returns", _frozen(returns))
        object.__setattr__(self, "missing_mask", _frozen(mask))

    @property
    def shape(self) -> tuple[int, int]:
        return self.returns.shape

    @property
    def imputation_fraction(self) -> float:
        return float(self.missing_mask.mean()) if self.missing_mask.size else 0.0

    def select(self, entities: Iterable[str]) -> "ReturnPanel":
        """Return a copy with columns in the given entity order."""
        entities = list(entities)
        missing = [e for e in entities if e not in self.entities]
        if missing:
            raise KeyError(f"unknown entities: {missing}")
        idx = [self.entities.index(e) for e in entities]
        return ReturnPanel(self.dates, tuple(entities), self.returns[:, idx], self.missing_mask[:, idx])


# ---------------------------------------------------------------- regions

def split_entity(entity: str) -> tuple[str, str | None]:
    """``"JPM@NA"`` -> ``("JPM", "NA")``; untagged names give ``None``."""
    if "@" in entity:
        ticker, region = entity.rsplit("@", 1)
        return ticker, region or None
    return entity, None


def read_region_map(source) -> dict[str, str]:
    """Read an ``entity,region`` side file (header row required)."""
    with _open_text(source) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError("region file is empty")
        out: dict[str, str] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise ParseError("expected entity,region", row=lineno)
            out[row[0].strip()] = row[1].strip()
    return out


def split_by_region(panel: PricePanel, region_map: dict[str, str] | None = None) -> dict[str, PricePanel]:
    """Group the columns of ``panel`` into one panel per region.

    The side-file map takes precedence over ``@REGION`` suffixes. Regions are
    never pooled.
    """
    groups: dict[str, list[str]] = {}
    untagged = []
    for ent in panel.entities:
        region = (region_map or {}).get(ent) or split_entity(ent)[1]
        if region is None:
            untagged.append(ent)
            continue
        groups.setdefault(region, []).append(ent)
    if untagged:
        raise ParseError(f"entities without region tag: {', '.join(untagged)}")
    return {r: panel.select(ents) for r, ents in sorted(groups.items())}


# ---------------------------------------------------------------- loading

class _open_text:
    """Context manager accepting a path or an already open text stream."""

    def __init__(self, source):
        self.source = source
        self._fh = None

    def __enter__(self) -> TextIO:
        if isinstance(self.source, (str, os.PathLike)):
            self._fh = open(self.source, newline="", encoding="utf-8")
            return self._fh
        return self.source

    def __exit__(self, *exc):
        if self._fh is not None:
            self._fh.close()
        return False


def _parse_date(text: str, row: int) -> date:
    try:
        return date.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(f"malformed date {text!r} (expected YYYY-MM-DD)", row=row) from None


def _parse_close(text: str, row: int, entity: str) -> float:
    text = text.strip()
    if not text:
        return math.nan
    try:
        value = float(text)
    except ValueError:
        warnings.warn(f"row {row}: unparseable close {text!r} for {entity}; marked missing",
                      MissingPriceWarning, stacklevel=3)
        return math.nan
    if not math.isfinite(value) or value <= 0:
        warnings.warn(f"row {row}: non-positive close {text} for {entity}; marked missing",
                      MissingPriceWarning, stacklevel=3)
        return math.nan
    return value


def load_price_panel(source, schema: str = "long", delimiter: str = ",") -> PricePanel:
    """Read daily closes from delimited text.

    Parameters
    ----------
    source : path or text stream
        UTF-8 text with a header row.
    schema : {"long", "wide"}
        ``long`` expects columns ``date,entity,close``; ``wide`` expects a
        ``date`` column followed by one column per entity.
    delimiter : str
        Field separator.

    Returns
    -------
    PricePanel
        Sorted by date, entities sorted by identifier. Unparseable or
        non-positive prices become NaN with a :class:`MissingPriceWarning`.
    """
    if schema not in SCHEMAS:
        raise ValueError(f"schema must be one of {SCHEMAS}, got {schema!r}")
    cells: dict[tuple[date, str], float] = {}
    with _open_text(source) as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError("input has no header row")
        header = [h.strip() for h in header]
        if schema == "long":
            cols = {name.lower(): i for i, name in enumerate(header)}
            try:
                i_date, i_ent, i_close = cols["date"], cols["entity"], cols["close"]
            except KeyError:
                raise ParseError(f"long schema needs columns date,entity,close; got {header}", row=1) from None
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) < len(header):
                    raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=lineno)
                d = _parse_date(row[i_date], lineno)
                ent = row[i_ent].strip()
                if (d, ent) in cells:
                    raise DuplicateKeyError(f"row {lineno}: duplicate (date, entity) pair ({d}, {ent})")
                cells[(d, ent)] = _parse_close(row[i_close], lineno, ent)
        else:
            if not header or header[0].lower() != "date":
                raise ParseError("wide schema needs 'date' as first column", row=1)
            entities = header[1:]
            if len(set(entities)) != len(entities):
                raise DuplicateKeyError("duplicate entity column in header")
            seen_dates = set()
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(header):
                    raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=lineno)
                d = _parse_date(row[0], lineno)
                if d in seen_dates:
                    raise DuplicateKeyError(f"row {lineno}: duplicate date {d}")
                seen_dates.add(d)
                for ent, text in zip(entities, row[1:]):
                    cells[(d, ent)] = _parse_close(text, lineno, ent)

    usable = {k: v for k, v in cells.items() if not math.isnan(v)}
    if not usable:
        raise EmptyInputError("no usable price rows")
    dates = sorted({d for d, _ in cells})
    entities = sorted({e for _, e in cells})
    d_index = {d: i for i, d in enumerate(dates)}
    e_index = {e: j for j, e in enumerate(entities)}
    closes = np.full((len(dates), len(entities)), np.nan)
    for (d, e), v in cells.items():
        closes[d_index[d], e_index[e]] = v
    return PricePanel(np.array(dates, dtype="datetime64[D]"), tuple(entities), closes)


def write_wide_csv(panel: PricePanel, dest, delimiter: str = ",", fmt: str = "{:.6f}") -> None:
    """Write ``panel`` in the wide schema accepted by :func:`load_price_panel`."""
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    writer.writerow(["date", *panel.entities])
    for d, row in zip(panel.dates, panel.closes):
        writer.writerow([str(d), *("" if np.isnan(v) else fmt.format(v) for v in row)])
    if isinstance(dest, (str, os.PathLike)):
        Path(dest).write_text(buf.getvalue(), encoding="utf-8")
    else:
        dest.write(buf.getvalue())


# ---------------------------------------------------------------- returns

def compute_log_returns(panel: PricePanel, missing: str = "zero") -> ReturnPanel:
    """Log returns ``ln(close_t) - ln(close_{t-1})`` per entity.

    With ``missing="zero"`` a return touching a missing close is set to 0 and
    flagged in ``missing_mask``. With ``missing="drop"`` every date on which
    any entity lacks a close is removed before differencing.
    """
    if missing not in MISSING_POLICIES:
        raise ValueError(f"missing must be one of {MISSING_POLICIES}")
    dates, closes = panel.dates, panel.closes
    if missing == "drop":
        keep = ~np.isnan(closes).any(axis=1)
        dates, closes = dates[keep], closes[keep]
    if dates.size < 2:
        raise InsufficientDataError(f"need at least 2 dates to form returns, have {dates.size}")
    with np.errstate(invalid="ignore"):
        logp = np.log(closes)
    rets = np.diff(logp, axis=0)
    mask = np.isnan(rets)
    rets[mask] = 0.0
    return ReturnPanel(dates[1:], panel.entities, rets, mask)


def align_calendar(panel: ReturnPanel, policy: str = "union_zero_fill") -> ReturnPanel:
    """Put every entity of a panel on a common set of dates.

    ``intersect`` keeps dates where no entity's return is imputed;
    ``union_zero_fill`` keeps every date, imputed cells staying 0 and flagged.
    """
    if policy not in CALENDAR_POLICIES:
        raise ValueError(f"policy must be one of {CALENDAR_POLICIES}")
    if panel.returns.shape[0] == 0:
        raise InsufficientDataError("empty panel")
    if policy == "union_zero_fill":
        rets = np.where(panel.missing_mask, 0.0, panel.returns)
        return ReturnPanel(panel.dates, panel.entities, rets, panel.missing_mask)
    keep = ~panel.missing_mask.any(axis=1)
    if keep.sum() < 2:
        raise AlignmentError(f"intersect leaves {int(keep.sum())} common dates (< 2)")
    return ReturnPanel(panel.dates[keep], panel.entities, panel.returns[keep], panel.missing_mask[keep])


def merge_return_panels(panels: Iterable[ReturnPanel]) -> ReturnPanel:
    """Outer-join panels on date; cells absent from a source panel are imputed."""
    panels = list(panels)
    if not panels:
        raise EmptyInputError("no panels to merge")
    dates = np.unique(np.concatenate([p.dates for p in panels]))
    entities: list[str] = []
    for p in panels:
        dup = set(entities) & set(p.entities)
        if dup:
            raise DuplicateKeyError(f"entities appear in more than one panel: {sorted(dup)}")
        entities.extend(p.entities)
    rets = np.zeros((dates.size, len(entities)))
    mask = np.ones((dates.size, len(entities)), dtype=bool)
    col = 0
    for p in panels:
        rows = np.searchsorted(dates, p.dates)
        k = len(p.entities)
        rets[rows, col:col + k] = p.returns
        mask[rows, col:col + k] = p.missing_mask
        col += k
    rets[mask] = 0.0
    return ReturnPanel(dates, tuple(entities), rets, mask)
