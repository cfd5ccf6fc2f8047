"""Expanding-window, iterated multi-step forecasting comparison.

At every forecast origin the training block grows by one observation, the
validation block stays fixed, hyperparameters are re-selected on the
validation block and an h-step forecast is produced by feeding one-step
predictions back as lag inputs.

One-step models do not depend on the horizon, so each (region, model)
unit trains its candidates once per origin and shares them across
horizons.  Selection is still made per horizon, using the iterated
h-step validation MAPE.
"""

from __future__ import annotations

import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import __version__, arma, neural, svr
from .dataset import DatedSplit, Partition, SplitSpec, SupervisedSet, TimeSeries, partition
from .exceptions import (
    CellError,
    ConfigError,
    ConvergenceError,
    DegenerateClusterError,
    FitError,
    InsufficientDataError,
    SearchError,
    SelectError,
)
from .metrics import BASELINE, EvaluationReport, assemble_report, mape
from .records import ForecastRecord

MODEL_IDS = ("ARMA", "L-SVR", "P-SVR", "G-SVR", "RBF-NN", "MLP-NN")
SVR_KERNELS = {"L-SVR": "linear", "P-SVR": "polynomial", "G-SVR": "gaussian"}
DEFAULT_Q_SCHEDULE = ((3, (5, 10)), (6, (10, 20)), (12, (20, 30)))
MANIFEST_SCHEMA = "sfb.manifest/1"


class LookaheadError(AssertionError):
    """A model touched an observation dated after its forecast origin."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment's output.

    ``q_schedule`` maps an upper horizon bound to the hidden-layer sizes
    tried for horizons up to that bound; horizons past the last bound use
    the last entry.  ``eval_window`` keeps the last N test months of each
    region for scoring (``None`` or 0 keeps all).
    """

    horizons: tuple = (1, 2, 3, 6, 12)
    models: tuple = MODEL_IDS
    split: SplitSpec | DatedSplit = SplitSpec()
    p: int = 1
    seed: int = 0
    svr_grid: svr.SvrGrid = svr.SvrGrid()
    nn_policy: neural.TrainPolicy = neural.TrainPolicy()
    q_schedule: tuple = DEFAULT_Q_SCHEDULE
    arma_p_max: int = 12
    arma_q_max: int = 12
    eval_window: int | None = 11
    dm_loss: str = "ape"
    dm_critical: float | None = None
    fast: bool = False

    def __post_init__(self):
        hs = tuple(sorted(set(int(h) for h in self.horizons))) if self.horizons else ()
        if not hs or hs[0] < 1:
            raise ConfigError("horizons", "horizons must be a non-empty set of integers >= 1")
        object.__setattr__(self, "horizons", hs)
        models = tuple(dict.fromkeys(self.models))
        unknown = [m for m in models if m not in MODEL_IDS]
        if unknown:
            raise ConfigError("models", f"unknown model ids {unknown}")
        if BASELINE not in models:
            raise ConfigError("models", "the ARMA baseline must be included")
        if len(models) < 2:
            raise ConfigError("models", "at least one model besides ARMA is required")
        object.__setattr__(self, "models", models)
        if int(self.p) < 1:
            raise ConfigError("p", "lag order must be >= 1")
        if self.arma_p_max < 0 or self.arma_q_max < 0:
            raise ConfigError("arma", "p_max and q_max must be >= 0")
        if self.eval_window is not None and self.eval_window < 0:
            raise ConfigError("eval_window", "must be >= 0")
        if self.dm_loss not in ("ape", "squared"):
            raise ConfigError("dm_loss", "must be 'ape' or 'squared'")
        sched = tuple((int(b), tuple(sorted(set(int(q) for q in qs)))) for b, qs in self.q_schedule)
        if not sched or any(not qs for _, qs in sched) or any(
                not 5 <= q <= 30 for _, qs in sched for q in qs):
            raise ConfigError("q_schedule", "hidden sizes must lie in [5, 30]")
        object.__setattr__(self, "q_schedule", tuple(sorted(sched)))

    def q_candidates(self, h: int) -> tuple:
        for bound, qs in self.q_schedule:
            if h <= bound:
                return qs
        return self.q_schedule[-1][1]

    def to_dict(self) -> dict:
        split = asdict(self.split)
        split["kind"] = "dated" if isinstance(self.split, DatedSplit) else "fraction"
        return {
            "horizons": list(self.horizons), "models": list(self.models), "split": split,
            "p": self.p, "seed": self.seed, "svr_grid": asdict(self.svr_grid),
            "nn_policy": asdict(self.nn_policy),
            "q_schedule": [[b, list(qs)] for b, qs in self.q_schedule],
            "arma_p_max": self.arma_p_max, "arma_q_max": self.arma_q_max,
            "eval_window": self.eval_window, "dm_loss": self.dm_loss,
            "dm_critical": self.dm_critical, "fast": self.fast,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        split = dict(d.pop("split"))
        kind = split.pop("kind", "fraction")
        d["split"] = DatedSplit(**split) if kind == "dated" else SplitSpec(**split)
        d["svr_grid"] = svr.SvrGrid(**{k: tuple(v) if isinstance(v, list) else v
                                       for k, v in d["svr_grid"].items()})
        d["nn_policy"] = neural.TrainPolicy(**d["nn_policy"])
        d["q_schedule"] = tuple((b, tuple(qs)) for b, qs in d["q_schedule"])
        d["horizons"] = tuple(d["horizons"])
        d["models"] = tuple(d["models"])
        return cls(**d)


def derive_seed(seed: int, *parts) -> int:
    """Stable 32-bit seed from the run seed and identifying parts."""
    words = [int(seed) & 0xFFFFFFFF]
    for part in parts:
        words.append(zlib.crc32(str(part).encode("utf-8")))
    return int(np.random.SeedSequence(words).generate_state(1)[0])


# -- data access ----------------------------------------------------------------


class Recorder:
    """Collects every observation index a model reads, per (region, model, origin)."""

    def __init__(self):
        self.touched = {}
        self.train_sizes = {}
        self.valid_blocks = {}

    def touch(self, region, model_id, origin, indices):
        key = (region, model_id, origin)
        self.touched.setdefault(key, set()).update(int(i) for i in np.ravel(indices))

    def training(self, region, model_id, origin, n_train, valid: range | None):
        self.train_sizes[(region, model_id, origin)] = n_train
        if valid is not None:
            self.valid_blocks[(region, model_id, origin)] = (valid.start, valid.stop)

    def max_index(self, key) -> int:
        return max(self.touched.get(key, {-1}))


class SeriesView:
    """Read-only access to observations up to and including ``origin``.

    Any attempt to read a later index raises :class:`LookaheadError`; reads
    are reported to the optional recorder.
    """

    def __init__(self, values, origin: int, recorder: Recorder | None = None, key=None):
        self._values = values
        self.origin = int(origin)
        self._recorder = recorder
        self._key = key

    def __len__(self):
        return self.origin + 1

    def take(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=int)
        if idx.size and (idx.max() > self.origin or idx.min() < 0):
            raise LookaheadError(f"index {int(idx.max())} read at origin {self.origin}")
        if self._recorder is not None:
            self._recorder.touch(*self._key, idx)
        return self._values[idx]

    def history(self) -> np.ndarray:
        return self.take(np.arange(self.origin + 1))


# -- lag-model machinery -----------------------------------------------------------


def training_targets(part: Partition, origin: int, p: int) -> np.ndarray:
    """Training target indices at ``origin``: the train block plus test months already observed."""
    first = max(p, part.train.start)
    extra = range(part.test.start, origin + 1)
    return np.r_[np.arange(first, part.train.stop), np.arange(extra.start, extra.stop)].astype(int)


def supervised(view: SeriesView, targets: np.ndarray, p: int) -> SupervisedSet:
    lags = targets[:, None] - np.arange(1, p + 1)[None, :]
    return SupervisedSet(view.take(lags).reshape(len(targets), p), view.take(targets), p)


def iterate(predict: Callable, windows: np.ndarray, steps: int) -> np.ndarray:
    """Iterated forecasts for many start windows at once.

    ``windows[k]`` holds the last ``p`` observations before start ``k``,
    most recent first.  Returns ``(len(windows), steps)`` predictions where
    column ``j`` is the ``j+1``-step forecast.  A path that turns
    non-finite is not fed back again and stays NaN.
    """
    x = np.array(windows, dtype=float, copy=True)
    out = np.full((x.shape[0], steps), np.nan)
    alive = np.arange(x.shape[0])
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(steps):
            if alive.size == 0:
                break
            y = np.asarray(predict(x[alive]), dtype=float)
            out[alive, j] = y
            ok = np.isfinite(y)
            alive, y = alive[ok], y[ok]
            if x.shape[1] > 1:
                x[alive, 1:] = x[alive, :-1]
            x[alive, 0] = y
    return out


def _windows(view: SeriesView, starts: np.ndarray, p: int) -> np.ndarray:
    """Lag windows ending at each start index (inclusive), most recent first."""
    lags = starts[:, None] - np.arange(0, p)[None, :]
    return view.take(lags).reshape(len(starts), p)


def validation_scores(model, view: SeriesView, valid: range, horizons, p: int) -> dict:
    """Iterated h-step validation MAPE of a one-step model, per horizon."""
    H = max(horizons)
    first = max(valid.start - H, p - 1)
    starts = np.arange(first, valid.stop - 1)
    paths = iterate(model.predict, _windows(view, starts, p), H)
    actual_idx = np.arange(valid.start, valid.stop)
    actual = view.take(actual_idx)
    out = {}
    for h in horizons:
        s = actual_idx - h
        keep = s >= first
        preds = paths[s[keep] - first, h - 1]
        out[h] = mape(actual[keep], preds) if np.all(np.isfinite(preds)) else math.inf
    return out


@dataclass
class UnitResult:
    region: str
    model_id: str
    forecasts: dict = field(default_factory=dict)  # h -> list[(origin_index, y_hat)]
    failed: dict = field(default_factory=dict)     # h -> CellError
    info: dict = field(default_factory=dict)
    seconds: float = 0.0


class LagModelRunner:
    """Shared loop for SVR and neural models: train candidates, select per horizon, iterate."""

    model_id = ""

    def candidates(self, train_set: SupervisedSet, view, part, origin, config, region, live, frozen):
        """Return ``[(key, description, model or exception, horizons)]`` for every candidate.

        ``frozen`` (fast mode) maps each horizon to the only key to retrain.
        """
        raise NotImplementedError

    def pick(self, fitted, scores):
        """Return the index of the chosen candidate."""
        raise NotImplementedError

    def needed(self, config) -> list:
        return list(config.horizons)

    def run(self, series: TimeSeries, part: Partition, config: ExperimentConfig,
            origins: Sequence[int], recorder: Recorder | None = None) -> UnitResult:
        res = UnitResult(series.region, self.model_id)
        res.forecasts = {h: [] for h in config.horizons}
        p = config.p
        H = max(config.horizons)
        frozen = None
        res.info["origins"] = []
        for origin in origins:
            live = [h for h in config.horizons if origin + h < part.test.stop and h not in res.failed]
            if not live:
                continue
            view = SeriesView(series.values, origin, recorder, (series.region, self.model_id, origin))
            targets = training_targets(part, origin, p)
            if recorder is not None:
                recorder.training(series.region, self.model_id, origin, len(targets), part.valid)
            window = _windows(view, np.array([origin]), p)
            entry = {"origin": origin, "n_train": len(targets), "selected": {}}
            try:
                train_set = supervised(view, targets, p)
                fitted = self.candidates(train_set, view, part, origin, config, series.region,
                                         live, frozen)
                chosen, paths = {}, {}
                for h in live:
                    pool = [(i, f) for i, f in enumerate(fitted) if h in f[3]]
                    scores = [math.inf if isinstance(model, Exception) else model.val_scores_[h]
                              for _, (_key, _desc, model, _hs) in pool]
                    # a candidate whose test path diverges is passed over for the
                    # next best by validation score; all diverging raises SearchError
                    while True:
                        if not any(math.isfinite(v) for v in scores):
                            raise SearchError("every candidate diverges on the test path")
                        k = self.pick([f for _, f in pool], scores)
                        i = pool[k][0]
                        if i not in paths:
                            paths[i] = iterate(fitted[i][2].predict, window, H)[0]
                        if math.isfinite(paths[i][h - 1]):
                            break
                        scores[k] = math.inf
                    chosen[h] = i
            except (SearchError, ConvergenceError, DegenerateClusterError,
                    InsufficientDataError, FloatingPointError, np.linalg.LinAlgError) as exc:
                for h in live:
                    res.failed[h] = CellError(series.region, self.model_id, origin, exc)
                continue
            for h in live:
                res.forecasts[h].append((origin, float(paths[chosen[h]][h - 1])))
                entry["selected"][str(h)] = fitted[chosen[h]][1]
            res.info["origins"].append(entry)
            if config.fast and frozen is None:
                frozen = {h: fitted[chosen[h]][0] for h in live}
        return res


def _score(model, view, part, horizons, p):
    model.val_scores_ = validation_scores(model, view, part.valid, horizons, p)
    return model


class SvrRunner(LagModelRunner):
    def __init__(self, model_id):
        self.model_id = model_id
        self.kind = SVR_KERNELS[model_id]

    def candidates(self, train_set, view, part, origin, config, region, live, frozen):
        grid = config.svr_grid.expand(self.kind, train_set)
        wanted = []
        for order, hyper in enumerate(grid):
            hs = [h for h in live if frozen is None or frozen.get(h) == order]
            if hs:
                wanted.append((order, hyper, hs))
        fitted = svr.fit_grid(train_set, [hyper for _, hyper, _ in wanted], config.svr_grid.tol)
        out = []
        for (order, hyper, hs), (_, model) in zip(wanted, fitted):
            if not isinstance(model, Exception):
                _score(model, view, part, hs, config.p)
            out.append((order, {"C": hyper.C, "epsilon": hyper.epsilon,
                                "kernel": hyper.kernel.to_dict()}, model, hs))
        return out

    def pick(self, fitted, scores):
        best = None
        for i, ((order, desc, model, _), score) in enumerate(zip(fitted, scores)):
            if isinstance(model, Exception) or not math.isfinite(score):
                continue
            key = (score, desc["C"], desc["epsilon"], order)
            if best is None or key < best[0]:
                best = (key, i)
        if best is None:
            raise SearchError("no SVR candidate converged")
        return best[1]


class NnRunner(LagModelRunner):
    def __init__(self, model_id):
        self.model_id = model_id
        self.kind = "rbf" if model_id == "RBF-NN" else "mlp"

    def candidates(self, train_set, view, part, origin, config, region, live, frozen):
        sizes = sorted({q for h in live for q in config.q_candidates(h)})
        valid = supervised(view, np.arange(part.valid.start, part.valid.stop), config.p)
        out = []
        for q in sizes:
            hs = [h for h in live if q in config.q_candidates(h)
                  and (frozen is None or frozen.get(h) == q)]
            if not hs:
                continue
            seed = derive_seed(config.seed, region, self.model_id, origin, q)
            policy = replace(config.nn_policy, seed=seed)
            try:
                if self.kind == "rbf":
                    model = neural.train_rbf(train_set, valid, q, policy)
                else:
                    model = neural.train_mlp(train_set, valid, q, policy)
                _score(model, view, part, hs, config.p)
            except (ConvergenceError, DegenerateClusterError, InsufficientDataError) as exc:
                model = exc
            out.append((q, {"q": q, "seed": seed}, model, hs))
        return out

    def pick(self, fitted, scores):
        best = None
        for i, ((q, desc, model, _), score) in enumerate(zip(fitted, scores)):
            if isinstance(model, Exception) or not math.isfinite(score):
                continue
            if best is None or (score, q) < best[0]:
                best = ((score, q), i)
        if best is None:
            raise SearchError("no network candidate could be trained")
        return best[1]


class ArmaRunner:
    """Order chosen by AIC on the in-sample block at the first origin; coefficients re-fit at every origin."""

    model_id = BASELINE

    def run(self, series, part, config, origins, recorder=None) -> UnitResult:
        res = UnitResult(series.region, self.model_id)
        res.forecasts = {h: [] for h in config.horizons}
        H = max(config.horizons)
        order = model = None
        res.info["origins"] = []
        for origin in origins:
            live = [h for h in config.horizons if origin + h < part.test.stop and h not in res.failed]
            if not live:
                continue
            view = SeriesView(series.values, origin, recorder, (series.region, self.model_id, origin))
            history = view.history()
            if recorder is not None:
                recorder.training(series.region, self.model_id, origin, len(history), None)
            try:
                if order is None:
                    model = arma.select_order(history, config.arma_p_max, config.arma_q_max)
                    order = (len(model.ar_), len(model.ma_))
                    res.info["order"] = list(order)
                    res.info["aic"] = model.aic_
                    res.info["failed_fits"] = model.search_["failed"]
                else:
                    # warm start from the previous origin's coefficients
                    model = arma.fit(history, *order, start=model)
                path = model.forecast(history, H)
            except (FitError, SelectError, InsufficientDataError, np.linalg.LinAlgError) as exc:
                for h in live:
                    res.failed[h] = CellError(series.region, self.model_id, origin, exc)
                continue
            for h in live:
                res.forecasts[h].append((origin, float(path[h - 1])))
            res.info["origins"].append({"origin": origin, "projected": model.projected_,
                                        "ar": model.ar_.tolist(), "ma": model.ma_.tolist(),
                                        "intercept": model.intercept_})
        return res


def make_runner(model_id: str):
    if model_id == BASELINE:
        return ArmaRunner()
    if model_id in SVR_KERNELS:
        return SvrRunner(model_id)
    if model_id in ("RBF-NN", "MLP-NN"):
        return NnRunner(model_id)
    raise ConfigError("models", f"unknown model id {model_id!r}")


# -- cells and experiments ---------------------------------------------------------


def forecast_origins(part: Partition, h_min: int = 1) -> range:
    """Origins from the last in-sample month to the last month that still has an ``h_min`` target."""
    return range(part.test.start - 1, part.test.stop - h_min)


def _records(series: TimeSeries, model_id: str, h: int, pairs) -> list:
    out = []
    for origin, y_hat in pairs:
        target = origin + h
        out.append(ForecastRecord(series.region, model_id, h, series.month_of(origin), origin,
                                  float(series.values[target]), y_hat))
    return out


def run_unit(series: TimeSeries, model_id, config: ExperimentConfig,
             recorder: Recorder | None = None, runner=None) -> UnitResult:
    part = partition(series, config.split)
    if len(part.test) < min(config.horizons):
        raise InsufficientDataError(f"{series.region}: test block shorter than the smallest horizon")
    if runner is None:
        runner = make_runner(model_id)
    t0 = time.perf_counter()
    res = runner.run(series, part, config, forecast_origins(part, min(config.horizons)), recorder)
    res.seconds = time.perf_counter() - t0
    res.info["partition"] = {"train": [part.train.start, part.train.stop],
                             "valid": [part.valid.start, part.valid.stop],
                             "test": [part.test.start, part.test.stop]}
    return res


def run_cell(series: TimeSeries, model_id, h: int, config: ExperimentConfig,
             recorder: Recorder | None = None, runner=None) -> list:
    """Records of one (region, model, horizon) cell; raises CellError if any origin failed."""
    part = partition(series, config.split)
    if len(part.test) < h:
        raise InsufficientDataError(f"test block of {len(part.test)} is shorter than h={h}")
    cfg = replace(config, horizons=(h,))
    res = run_unit(series, model_id, cfg, recorder, runner)
    if h in res.failed:
        raise res.failed[h]
    return _records(series, res.model_id, h, res.forecasts[h])


@dataclass
class ExperimentResult:
    records: list
    report: EvaluationReport
    manifest: dict
    failures: list


def _unit_job(args):
    series, model_id, config = args
    return run_unit(series, model_id, config)


def thread_cap() -> int:
    env = os.environ.get("SFB_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError("SFB_THREADS", f"not an integer: {env!r}") from None
        if n < 1:
            raise ConfigError("SFB_THREADS", "must be >= 1")
        return n
    return os.cpu_count() or 1


def run_experiment(dataset: Sequence[TimeSeries], config: ExperimentConfig,
                   recorder: Recorder | None = None, workers: int | None = None,
                   progress: Callable | None = None) -> ExperimentResult:
    """Run every (region, model) unit, then score all cells.

    Units are independent; with more than one worker they run in separate
    processes and are reduced in sorted order, so the output does not
    depend on scheduling.  A recorder forces in-process execution.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    regions = [s.region for s in dataset]
    if len(set(regions)) != len(regions):
        raise ValueError("duplicate region names")
    jobs = [(s, m, config) for s in sorted(dataset, key=lambda s: s.region) for m in config.models]
    workers = thread_cap() if workers is None else workers
    t0 = time.perf_counter()
    if workers > 1 and recorder is None and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_unit_job, jobs))
    else:
        results = []
        for s, m, c in jobs:
            results.append(run_unit(s, m, c, recorder))
            if progress is not None:
                progress(results[-1])
    results.sort(key=lambda r: (r.region, r.model_id))

    by_region = {s.region: s for s in dataset}
    records, failures, fail_cells, cells = [], [], [], []
    manifest_cells = {}
    for res in results:
        series = by_region[res.region]
        for h in config.horizons:
            cells.append((res.region, res.model_id, h))
            if h in res.failed:
                err = res.failed[h]
                failures.append(err)
                fail_cells.append((res.region, res.model_id, h))
                continue
            records.extend(_records(series, res.model_id, h, res.forecasts[h]))
        manifest_cells.setdefault(res.region, {})[res.model_id] = {
            **res.info, "seconds": round(res.seconds, 3),
            "failed": {str(h): str(e) for h, e in sorted(res.failed.items())},
        }
    records.sort(key=lambda r: (r.region, r.model_id, r.horizon, r.origin_index))
    report = assemble_report(records, config.eval_window, config.dm_loss, config.dm_critical,
                             failures=fail_cells, cells=cells)
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "version": __version__,
        "config": config.to_dict(),
        "regions": sorted(by_region),
        "cells": manifest_cells,
        "failures": [{"region": e.region, "model": e.model_id, "origin": e.origin,
                      "cause": repr(e.cause)} for e in failures],
        "timings": {"total_seconds": round(time.perf_counter() - t0, 3), "workers": workers},
    }
    return ExperimentResult(records, report, manifest, failures)
