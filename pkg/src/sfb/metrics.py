"""Accuracy statistics (MAPE, rMAPE, PLAE, Diebold-Mariano) and report assembly."""

from __future__ import annotations

import csv
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    AlignmentError,
    DegenerateBaselineError,
    VarianceError,
    ZeroActualError,
)

BASELINE = "ARMA"
FAMILIES = {
    "ARMA": "ARMA",
    "L-SVR": "SVR",
    "P-SVR": "SVR",
    "G-SVR": "SVR",
    "RBF-NN": "NN",
    "MLP-NN": "NN",
}
FAMILY_ORDER = ("ARMA", "SVR", "NN")

REPORT_SCHEMA = "#schema=sfb.report/1"
DM_SCHEMA = "#schema=sfb.dm/1"
SUMMARY_SCHEMA = "#schema=sfb.summary/1"


def mape(actuals, forecasts) -> float:
    """Mean absolute percentage error, in percent."""
    a = np.asarray(actuals, dtype=float)
    f = np.asarray(forecasts, dtype=float)
    if a.shape != f.shape or a.ndim != 1 or a.size == 0:
        raise ValueError("mape needs two equal-length non-empty sequences")
    if np.any(a == 0):
        raise ZeroActualError("actual value of zero")
    return 100.0 * math.fsum(np.abs((a - f) / a)) / a.size


def _align(a_records, b_records):
    a = {r.key: r for r in a_records}
    b = {r.key: r for r in b_records}
    if len(a) != len(a_records) or len(b) != len(b_records):
        raise AlignmentError("duplicate (origin, horizon) in records")
    if a.keys() != b.keys():
        raise AlignmentError("record sets cover different (origin, horizon) indices")
    keys = sorted(a)
    if not keys:
        raise AlignmentError("no records")
    return [a[k] for k in keys], [b[k] for k in keys]


def _record_mape(records) -> float:
    return mape([r.y_actual for r in records], [r.y_hat for r in records])


def rmape(model_records, baseline_records) -> float:
    """MAPE of the model divided by MAPE of the baseline; below 1 beats the baseline."""
    a, b = _align(model_records, baseline_records)
    denom = _record_mape(b)
    if denom == 0:
        raise DegenerateBaselineError("baseline MAPE is zero")
    return _record_mape(a) / denom


def plae(model_records, baseline_records) -> float:
    """Share of periods where the model's absolute error is strictly below the baseline's."""
    a, b = _align(model_records, baseline_records)
    wins = sum(1 for ra, rb in zip(a, b) if abs(ra.error) < abs(rb.error))
    return wins / len(a)


def newey_west(d, lag: int) -> float:
    """Bartlett-weighted long-run variance of ``d`` with truncation ``lag``."""
    d = np.asarray(d, dtype=float)
    n = d.size
    u = d - d.mean()
    s = float(u @ u) / n
    for k in range(1, lag + 1):
        if k >= n:
            break
        w = 1.0 - k / (lag + 1.0)
        s += 2.0 * w * float(u[k:] @ u[:-k]) / n
    return s


@dataclass(frozen=True)
class DmResult:
    statistic: float
    bandwidth: int
    loss: str
    n: int
    significant_5pct: bool


def critical_value(n: int) -> float:
    """Two-sided 5% threshold: 2.028 for the 11-point window, 1.96 otherwise."""
    return 2.028 if n == 11 else 1.96


def loss_differential(a_records, b_records, loss: str = "ape") -> np.ndarray:
    a, b = _align(a_records, b_records)
    ea = np.array([r.error for r in a])
    eb = np.array([r.error for r in b])
    if loss == "ape":
        y = np.array([r.y_actual for r in a])
        if np.any(y == 0):
            raise ZeroActualError("actual value of zero")
        return np.abs(ea / y) - np.abs(eb / y)
    if loss == "squared":
        return ea**2 - eb**2
    raise ValueError(f"unknown loss {loss!r}")


def dm_test(a_records, b_records, h: int, loss: str = "ape",
            critical: float | None = None) -> DmResult:
    """Diebold-Mariano statistic ``mean(d) / sqrt(S / n)`` with ``d = L(A) - L(B)``.

    Negative values mean B has the larger losses.  ``S`` is the Newey-West
    long-run variance with truncation lag ``h - 1``.
    """
    d = loss_differential(a_records, b_records, loss)
    n = d.size
    if n < 5:
        raise ValueError("DM test needs at least 5 aligned records")
    lag = max(int(h) - 1, 0)
    if np.ptp(d) == 0:
        raise VarianceError("constant loss differential")
    s = newey_west(d, lag)
    if not s > 0:
        raise VarianceError(f"non-positive long-run variance {s}")
    stat = float(d.mean() / math.sqrt(s / n))
    crit = critical_value(n) if critical is None else critical
    return DmResult(stat, lag, loss, n, abs(stat) >= crit)


# -- report assembly ----------------------------------------------------------


@dataclass(frozen=True)
class CellScores:
    mape: float
    rmape: float
    plae: float
    n: int


@dataclass(frozen=True)
class ReportRow:
    region: str
    model: str
    horizon: int
    scores: CellScores | None
    failed: bool
    best: bool = False


@dataclass(frozen=True)
class DmRow:
    region: str
    model_a: str
    model_b: str
    horizon: int
    result: DmResult | None
    loss: str

    @property
    def pair(self) -> str:
        return f"{self.model_a} vs {self.model_b}"


@dataclass(frozen=True)
class SummaryRow:
    family: str
    horizon: int
    n_cells: int
    mean_mape: float
    median_mape: float
    mean_rmape: float
    median_rmape: float


@dataclass
class EvaluationReport:
    rows: list
    dm: list
    summary: list

    def cell(self, region, model, horizon) -> ReportRow:
        for r in self.rows:
            if (r.region, r.model, r.horizon) == (region, model, horizon):
                return r
        raise KeyError((region, model, horizon))


def evaluation_subset(records: Sequence, eval_window: int | None) -> list:
    """Keep records whose target falls in the last ``eval_window`` test months of their region."""
    if not eval_window:
        return list(records)
    last = {}
    for r in records:
        last[r.region] = max(last.get(r.region, r.target_index), r.target_index)
    return [r for r in records if r.target_index > last[r.region] - eval_window]


def assemble_report(records: Iterable, eval_window: int | None = 11, dm_loss: str = "ape",
                    dm_critical: float | None = None, baseline: str = BASELINE,
                    failures: Iterable = (), cells: Iterable = ()) -> EvaluationReport:
    """Score every (region, model, horizon) cell against the baseline.

    ``failures`` lists (region, model, horizon) cells that did not run;
    ``cells`` optionally lists every expected cell so that cells with no
    records at all are also reported as failed.
    """
    records = evaluation_subset(list(records), eval_window)
    by_cell = defaultdict(list)
    for r in records:
        by_cell[(r.region, r.model_id, r.horizon)].append(r)
    failed = set(tuple(f) for f in failures)
    expected = set(by_cell) | failed | set(tuple(c) for c in cells)

    rows = []
    for key in sorted(expected):
        region, model, h = key
        recs = by_cell.get(key)
        base = by_cell.get((region, baseline, h))
        if key in failed or not recs:
            rows.append(ReportRow(region, model, h, None, True))
            continue
        m = _record_mape(recs)
        try:
            rm = rmape(recs, base) if base else math.nan
            pl = plae(recs, base) if base else math.nan
        except (DegenerateBaselineError, AlignmentError):
            rm, pl = math.nan, math.nan
        rows.append(ReportRow(region, model, h, CellScores(m, rm, pl, len(recs)), False))

    # flag the lowest rMAPE per (region, horizon)
    best = {}
    for r in rows:
        if r.scores is None or not math.isfinite(r.scores.rmape):
            continue
        k = (r.region, r.horizon)
        if k not in best or (r.scores.rmape, r.model) < best[k]:
            best[k] = (r.scores.rmape, r.model)
    rows = [
        ReportRow(r.region, r.model, r.horizon, r.scores, r.failed,
                  best.get((r.region, r.horizon), (None, None))[1] == r.model)
        for r in rows
    ]

    dm_rows = []
    for region, h in sorted({(r.region, r.horizon) for r in rows}):
        ranked = sorted(
            (r for r in rows if r.region == region and r.horizon == h and r.scores),
            key=lambda r: (r.scores.mape, r.model),
        )[:3]
        if len(ranked) < 2:
            continue
        lead = ranked[0].model
        for other in ranked[1:]:
            try:
                res = dm_test(by_cell[(region, lead, h)], by_cell[(region, other.model, h)],
                              h, dm_loss, dm_critical)
            except (VarianceError, ValueError):
                res = None
            dm_rows.append(DmRow(region, lead, other.model, h, res, dm_loss))

    summary = []
    horizons = sorted({r.horizon for r in rows})
    for fam in FAMILY_ORDER:
        for h in horizons:
            cells_ = [r for r in rows if r.horizon == h and r.scores
                      and FAMILIES.get(r.model, r.model) == fam]
            if not cells_:
                continue
            mapes = [r.scores.mape for r in cells_]
            rmapes = [r.scores.rmape for r in cells_ if math.isfinite(r.scores.rmape)]
            summary.append(SummaryRow(
                fam, h, len(cells_),
                statistics.fmean(mapes), statistics.median(mapes),
                statistics.fmean(rmapes) if rmapes else math.nan,
                statistics.median(rmapes) if rmapes else math.nan,
            ))
    return EvaluationReport(rows, dm_rows, summary)


def _fmt(x, digits=6) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    return f"{x:.{digits}f}"


def write_report(report: EvaluationReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(REPORT_SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "model", "horizon", "n", "mape", "rmape", "plae", "failed", "best"])
        for r in report.rows:
            s = r.scores
            w.writerow([r.region, r.model, r.horizon,
                        s.n if s else 0,
                        _fmt(s.mape if s else None),
                        _fmt(s.rmape if s else None),
                        _fmt(s.plae if s else None, 3),
                        int(r.failed), int(r.best)])


def write_dm(report: EvaluationReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(DM_SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "pair", "h", "statistic", "bandwidth", "loss", "significant"])
        for r in report.dm:
            res = r.result
            w.writerow([r.region, r.pair, r.horizon,
                        _fmt(res.statistic, 3) if res else "",
                        res.bandwidth if res else max(r.horizon - 1, 0),
                        r.loss, int(res.significant_5pct) if res else 0])


def write_summary(report: EvaluationReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(SUMMARY_SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["family", "horizon", "n_cells", "mean_mape", "median_mape",
                    "mean_rmape", "median_rmape"])
        for r in report.summary:
            w.writerow([r.family, r.horizon, r.n_cells, _fmt(r.mean_mape), _fmt(r.median_mape),
                        _fmt(r.mean_rmape), _fmt(r.median_rmape)])
