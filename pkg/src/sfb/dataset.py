"""Monthly regional series: ingestion, descriptive statistics, splits and lag embedding."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    EmptySeriesError,
    GapError,
    InsufficientDataError,
    ParseError,
    PartitionError,
)

_MONTH_RE = re.compile(r"^(\d{4})-(\d{2})$")
_NUMBER_RE = re.compile(r"^(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")

CSV_HEADER = ["date", "region", "arrivals"]


def parse_month(text: str) -> int:
    """Convert ``YYYY-MM`` to a month ordinal (``12 * year + month - 1``)."""
    m = _MONTH_RE.match(text.strip())
    if not m:
        raise ValueError(f"bad month {text!r}, expected YYYY-MM")
    year, month = int(m.group(1)), int(m.group(2))
    if not 1 <= month <= 12:
        raise ValueError(f"bad month {text!r}")
    return 12 * year + month - 1


def format_month(ordinal: int) -> str:
    year, month0 = divmod(int(ordinal), 12)
    return f"{year:04d}-{month0 + 1:02d}"


@dataclass(frozen=True)
class TimeSeries:
    """Monthly observations for one region, starting at ``start`` (``YYYY-MM``)."""

    region: str
    start: str
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"{self.region}: non-finite value")
        if np.any(values < 0):
            raise ValueError(f"{self.region}: negative value")
        parse_month(self.start)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.region == other.region
            and self.start == other.start
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    @property
    def start_ordinal(self) -> int:
        return parse_month(self.start)

    def month_of(self, index: int) -> str:
        return format_month(self.start_ordinal + index)

    def index_of(self, month: str) -> int:
        return parse_month(month) - self.start_ordinal

    def year_slice(self, year: int) -> np.ndarray:
        first = self.index_of(f"{year:04d}-01")
        lo, hi = max(first, 0), min(first + 12, len(self))
        return self.values[lo:hi] if hi > lo else self.values[:0]


def load_csv(path) -> list[TimeSeries]:
    """Read a ``date,region,arrivals`` file into one series per region.

    Rows may come in any order.  Missing months raise :class:`GapError`;
    malformed or negative values raise :class:`ParseError` with the
    1-based line number.  The result is sorted by region name.
    """
    rows: dict[str, dict[int, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.reader(lines)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(f"header must be {','.join(CSV_HEADER)}", row=1)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 3:
                raise ParseError(f"expected 3 fields, got {len(rec)}", row=lineno)
            date, region, raw = (r.strip() for r in rec)
            try:
                month = parse_month(date)
            except ValueError as exc:
                raise ParseError(str(exc), row=lineno) from None
            if raw.startswith("-"):
                raise ParseError(f"negative arrivals {raw!r}", row=lineno)
            if not _NUMBER_RE.match(raw):
                raise ParseError(f"non-numeric arrivals {raw!r}", row=lineno)
            if not region:
                raise ParseError("empty region", row=lineno)
            by_month = rows.setdefault(region, {})
            if month in by_month:
                raise ParseError(f"duplicate {date} for {region!r}", row=lineno)
            by_month[month] = float(raw)

    out = []
    for region in sorted(rows):
        by_month = rows[region]
        months = sorted(by_month)
        for prev, cur in zip(months, months[1:]):
            if cur != prev + 1:
                raise GapError(region, format_month(prev + 1))
        out.append(
            TimeSeries(region, format_month(months[0]), [by_month[m] for m in months])
        )
    return out


def _format_value(x: float) -> str:
    return repr(float(x))


def write_csv(series: Iterable[TimeSeries], path) -> None:
    """Write series in the ingestion format; reloading is bit-exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for ts in series:
            for i, v in enumerate(ts.values):
                w.writerow([ts.month_of(i), ts.region, _format_value(v)])


# -- descriptive statistics ---------------------------------------------------


@dataclass(frozen=True)
class DescriptiveStats:
    region: str
    min: float
    max: float
    mean: float
    std_dev: float
    cv: float
    total: float
    share: float
    cumulative_share: float = float("nan")


def describe(series: TimeSeries, national_total: float, year: int | None = None) -> DescriptiveStats:
    """Min/max/mean/population std and CV (percent) of a series.

    ``share`` is the region's total as a percentage of ``national_total``;
    when ``year`` is given the total covers that calendar year only.
    """
    values = series.values
    if values.size == 0:
        raise EmptySeriesError(f"{series.region}: empty series")
    if not national_total > 0:
        raise ValueError("national_total must be positive")
    mean = float(np.mean(values))
    std = float(np.std(values))
    cv = 100.0 * std / mean if mean > 0 else 0.0
    total = float(np.sum(series.year_slice(year) if year is not None else values))
    return DescriptiveStats(
        region=series.region,
        min=float(np.min(values)),
        max=float(np.max(values)),
        mean=mean,
        std_dev=std,
        cv=cv,
        total=total,
        share=100.0 * total / national_total,
    )


def describe_panel(series: Sequence[TimeSeries], year: int | None = None) -> list[DescriptiveStats]:
    """Describe every region, sorted by descending share, with cumulative shares."""
    if not series:
        raise EmptySeriesError("no series")
    totals = [
        float(np.sum(ts.year_slice(year) if year is not None else ts.values))
        for ts in series
    ]
    national = math.fsum(totals)
    stats = [describe(ts, national, year) for ts in series]
    stats.sort(key=lambda s: (-s.share, s.region))
    out, running = [], 0.0
    for s in stats:
        running += s.share
        out.append(DescriptiveStats(**{**s.__dict__, "cumulative_share": running}))
    return out


# -- partitioning -------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.52
    valid_frac: float = 0.33
    test_frac: float = 0.15

    def __post_init__(self):
        fracs = (self.train_frac, self.valid_frac, self.test_frac)
        if not all(0 < f < 1 for f in fracs):
            raise ValueError("split fractions must lie in (0, 1)")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


@dataclass(frozen=True)
class DatedSplit:
    """Explicit block ends (inclusive, ``YYYY-MM``); test runs to ``test_end`` or the series end."""

    train_end: str
    valid_end: str
    test_end: str | None = None


@dataclass(frozen=True)
class Partition:
    train: range
    valid: range
    test: range

    def __post_init__(self):
        blocks = (self.train, self.valid, self.test)
        for b in blocks:
            if len(b) == 0:
                raise PartitionError("empty block")
        if not (self.train.stop == self.valid.start and self.valid.stop == self.test.start):
            raise PartitionError("blocks must be contiguous and chronological")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def partition(series, spec: SplitSpec | DatedSplit = SplitSpec()) -> Partition:
    """Split a series (or a length) into train/validation/test blocks.

    Fractional splits use ``round(frac * n)`` for train and validation and
    give the remainder to test.  A :class:`DatedSplit` overrides fractions.
    """
    if isinstance(spec, DatedSplit):
        if not isinstance(series, TimeSeries):
            raise TypeError("dated splits need a TimeSeries")
        n = len(series)
        t_end = series.index_of(spec.train_end) + 1
        v_end = series.index_of(spec.valid_end) + 1
        s_end = n if spec.test_end is None else series.index_of(spec.test_end) + 1
        if not 0 < t_end < v_end < s_end <= n:
            raise PartitionError(f"dated boundaries out of order or outside series: {spec}")
        return Partition(range(0, t_end), range(t_end, v_end), range(v_end, s_end))

    n = series if isinstance(series, int) else len(series)
    n_train = _round_half_up(spec.train_frac * n)
    n_valid = _round_half_up(spec.valid_frac * n)
    n_test = n - n_train - n_valid
    if min(n_train, n_valid, n_test) <= 0:
        raise PartitionError(
            f"n={n} gives block sizes ({n_train}, {n_valid}, {n_test})"
        )
    return Partition(
        range(0, n_train),
        range(n_train, n_train + n_valid),
        range(n_train + n_valid, n),
    )


# -- lag embedding ------------------------------------------------------------


@dataclass(frozen=True)
class SupervisedSet:
    """Rows ``inputs[k] = (y[t-1], ..., y[t-p])`` paired with ``targets[k] = y[t]``."""

    inputs: np.ndarray
    targets: np.ndarray
    p: int

    def __len__(self):
        return self.targets.shape[0]


def lag_inputs(values, target_index, p: int) -> np.ndarray:
    """Input rows for the given target indices, most recent lag first."""
    values = np.asarray(values, dtype=float)
    idx = np.asarray(target_index, dtype=int)
    if idx.size and idx.min() < p:
        raise InsufficientDataError(f"target index {idx.min()} has fewer than {p} lags")
    lags = idx[:, None] - np.arange(1, p + 1)[None, :]
    return values[lags]


def embed(values, p: int = 1) -> SupervisedSet:
    """Lag-embed a slice of observations into ``len(values) - p`` pairs."""
    values = np.asarray(values, dtype=float)
    if p < 1:
        raise ValueError("p must be >= 1")
    if values.shape[0] <= p:
        raise InsufficientDataError(f"need more than {p} observations, got {values.shape[0]}")
    idx = np.arange(p, values.shape[0])
    return SupervisedSet(lag_inputs(values, idx, p), values[idx].copy(), p)
