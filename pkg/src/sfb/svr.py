"""Epsilon-insensitive support vector regression.

The dual is solved over the stacked multipliers ``a = (alpha, alpha*)`` by
SMO-style pairwise coordinate descent with maximal-violating-pair
selection, in the usual libsvm formulation::

    min  0.5 a'Qa + p'a   s.t.  y'a = 0,  0 <= a <= C
    Q_st = y_s y_t K(x_s, x_t),  p = (eps - d, eps + d),  y = (+1, -1)

The regression function is ``f(x) = sum_i beta_i K(x_i, x) + b`` with
``beta = alpha - alpha*``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import kernels
from .dataset import SupervisedSet
from .exceptions import ConvergenceError, DimError, InsufficientDataError, SearchError
from .kernels import KernelSpec
from .metrics import mape

FORMAT = "sfb.svr"
FORMAT_VERSION = 1

_TAU = 1e-12


@njit(cache=True)
def best_bias(r, eps):
    """Minimiser of ``sum(max(0, |r_i - b| - eps))``; midpoint of the flat set."""
    n = r.shape[0]
    m = 2 * n
    bps = np.empty(m)
    vals = np.empty(m)
    scale = eps
    for i in range(n):
        bps[i] = r[i] - eps
        bps[i + n] = r[i] + eps
        if abs(r[i]) > scale:
            scale = abs(r[i])
    best = np.inf
    for k in range(m):
        s = 0.0
        for i in range(n):
            u = abs(r[i] - bps[k]) - eps
            if u > 0.0:
                s += u
        vals[k] = s
        if s < best:
            best = s
    thr = best + 1e-12 * n * (scale + 1e-300)
    lo = np.inf
    hi = -np.inf
    for k in range(m):
        if vals[k] <= thr:
            if bps[k] < lo:
                lo = bps[k]
            if bps[k] > hi:
                hi = bps[k]
    return 0.5 * (lo + hi)


@njit(cache=True)
def _gap(a, G, d, C, eps):
    n = d.shape[0]
    quad = 0.0
    asum = 0.0
    dbeta = 0.0
    r = np.empty(n)
    for k in range(n):
        kb = G[k] - eps + d[k]
        beta = a[k] - a[k + n]
        quad += beta * kb
        asum += a[k] + a[k + n]
        dbeta += d[k] * beta
        r[k] = d[k] - kb
    b = best_bias(r, eps)
    slack = 0.0
    for k in range(n):
        u = abs(r[k] - b) - eps
        if u > 0.0:
            slack += u
    primal = 0.5 * quad + C * slack
    dual = -0.5 * quad - eps * asum + dbeta
    return primal - dual, dual, b


@njit(cache=True)
def _trace_row(trace, row, a, G, d, eps):
    n = d.shape[0]
    f = 0.0
    ya = 0.0
    lo = np.inf
    hi = -np.inf
    for s in range(2 * n):
        ps = eps - d[s] if s < n else eps + d[s - n]
        f += 0.5 * a[s] * (G[s] + ps)
        ya += a[s] if s < n else -a[s]
        if a[s] < lo:
            lo = a[s]
        if a[s] > hi:
            hi = a[s]
    trace[row, 0] = -f
    trace[row, 1] = lo
    trace[row, 2] = hi
    trace[row, 3] = abs(ya)


@njit(cache=True)
def smo_solve(K, d, C, eps, tol, tol_floor, gap_rtol, gap_atol, max_iter, trace, second_order=True,
              a0=None):
    """Run SMO on a precomputed Gram matrix.

    Returns ``(a, G, n_iter, status, gap, dual, bias)``; status 0 means
    converged, 1 the iteration budget ran out, 2 the KKT tolerance reached
    ``tol_floor`` without closing the duality gap (indefinite kernels).
    ``trace`` rows receive (dual objective, min a, max a, |y'a|) per
    iteration when it has rows.  The first index of each pair is the
    maximal violator; with ``second_order`` the partner maximises the
    second-order gain among violators instead of being the opposite
    extreme.
    """
    n = d.shape[0]
    m = 2 * n
    G = np.empty(m)
    for k in range(n):
        G[k] = eps - d[k]
        G[k + n] = eps + d[k]
    if a0 is None:
        a = np.zeros(m)
    else:
        a = a0.copy()
        beta0 = a[:n] - a[n:]
        for k in range(n):
            kb = 0.0
            for t in range(n):
                kb += K[k, t] * beta0[t]
            G[k] += kb
            G[k + n] -= kb
    ntrace = trace.shape[0]
    if ntrace > 0:
        _trace_row(trace, 0, a, G, d, eps)
    it = 0
    status = 0
    cur_tol = tol
    gap = np.inf
    dual = 0.0
    b = 0.0
    dkb = np.empty(n)
    while True:
        gmax = -np.inf
        gmin = np.inf
        i = -1
        j = -1
        for s in range(m):
            if s < n:
                v = -G[s]
                up = a[s] < C
                low = a[s] > 0.0
            else:
                v = G[s]
                up = a[s] > 0.0
                low = a[s] < C
            if up and v > gmax:
                gmax = v
                i = s
            if low and v < gmin:
                gmin = v
                j = s
        if gmax - gmin <= cur_tol:
            gap, dual, b = _gap(a, G, d, C, eps)
            if gap <= max(gap_atol, gap_rtol * abs(dual)):
                break
            if cur_tol <= tol_floor:
                status = 2
                break
            cur_tol = max(cur_tol * 0.1, tol_floor)
            continue
        if it >= max_iter:
            status = 1
            gap, dual, b = _gap(a, G, d, C, eps)
            break
        if second_order:
            ii = i if i < n else i - n
            best = np.inf
            for s in range(m):
                if s < n:
                    v = -G[s]
                    low = a[s] > 0.0
                    ss = s
                else:
                    v = G[s]
                    low = a[s] < C
                    ss = s - n
                if not low or v >= gmax:
                    continue
                bb = gmax - v
                aa = K[ii, ii] + K[ss, ss] - 2.0 * K[ii, ss]
                if aa <= 0.0:
                    aa = _TAU
                score = -(bb * bb) / aa
                if score < best:
                    best = score
                    j = s

        yi = 1.0 if i < n else -1.0
        yj = 1.0 if j < n else -1.0
        ii = i if i < n else i - n
        jj = j if j < n else j - n
        quad = K[ii, ii] + K[jj, jj] - 2.0 * K[ii, jj]
        if quad <= 0.0:
            quad = _TAU
        old_ai = a[i]
        old_aj = a[j]
        if yi != yj:
            delta = (-G[i] - G[j]) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0.0:
                if a[j] < 0.0:
                    a[j] = 0.0
                    a[i] = diff
            else:
                if a[i] < 0.0:
                    a[i] = 0.0
                    a[j] = -diff
            if diff > 0.0:
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            else:
                if a[j] > C:
                    a[j] = C
                    a[i] = C + diff
        else:
            delta = (G[i] - G[j]) / quad
            tot = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if tot > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = tot - C
            else:
                if a[j] < 0.0:
                    a[j] = 0.0
                    a[i] = tot
            if tot > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = tot - C
            else:
                if a[i] < 0.0:
                    a[i] = 0.0
                    a[j] = tot
        dbi = yi * (a[i] - old_ai)
        dbj = yj * (a[j] - old_aj)
        for k in range(n):
            dkb[k] = K[k, ii] * dbi + K[k, jj] * dbj
            G[k] += dkb[k]
            G[k + n] -= dkb[k]
        it += 1
        if it < ntrace:
            _trace_row(trace, it, a, G, d, eps)
    return a, G, it, status, gap, dual, b


@dataclass(frozen=True)
class SvrHyper:
    C: float
    epsilon: float
    kernel: KernelSpec = field(default_factory=KernelSpec)

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative")

    def to_dict(self) -> dict:
        return {"C": self.C, "epsilon": self.epsilon, "kernel": self.kernel.to_dict()}


class EpsilonSVR(RegressorMixin, BaseEstimator):
    """Epsilon-SVR trained by SMO on internally standardised inputs.

    Parameters
    ----------
    kernel : {'gaussian', 'linear', 'polynomial'}
    C : float
        Box bound on the dual multipliers.
    epsilon : float
        Tube half-width, in target units.
    a1, a2, degree, delta2 : kernel parameters, see :class:`~sfb.kernels.KernelSpec`.
    tol : float
        KKT violation tolerance, relative to the standard deviation of the
        training targets.
    max_iter : int
        Budget of pair updates; exceeding it raises ``ConvergenceError``.
    gap_rtol : float
        Required relative duality gap.
    selection : {'second-order', 'max-violating'}
        How the partner of the maximal violator is chosen.  The
        second-order rule needs far fewer updates on low-rank Gram
        matrices (linear kernel, large C).
    record_trace : bool
        Keep per-iteration (dual objective, min a, max a, |y'a|) in ``trace_``.

    Attributes
    ----------
    dual_coef_ : ndarray of shape (n_support,)
    support_vectors_ : ndarray of shape (n_support, n_features), standardised
    support_ : ndarray of int, training indices of the support vectors
    intercept_ : float
    x_mean_, x_scale_ : ndarray, the input standardiser
    duality_gap_ : float
    n_iter_ : int
    """

    def __init__(self, kernel="gaussian", C=1.0, epsilon=0.1, a1=1.0, a2=0.0,
                 degree=2, delta2=1.0, tol=1e-3, max_iter=100_000, gap_rtol=1e-6,
                 selection="second-order", record_trace=False):
        self.kernel = kernel
        self.C = C
        self.epsilon = epsilon
        self.a1 = a1
        self.a2 = a2
        self.degree = degree
        self.delta2 = delta2
        self.tol = tol
        self.max_iter = max_iter
        self.gap_rtol = gap_rtol
        self.selection = selection
        self.record_trace = record_trace

    @property
    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(self.kernel, self.a1, self.a2, self.degree, self.delta2)

    def fit(self, X, y, alpha_init=None):
        """Solve the dual.

        ``alpha_init`` optionally supplies a feasible starting point as the
        stacked ``(alpha, alpha_star)`` vector; :func:`fit_grid` uses it to
        warm-start larger C values from smaller ones.
        """
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[0] < 2:
            raise InsufficientDataError("SVR needs at least two training points")
        if not self.C > 0 or not self.epsilon >= 0 or not self.tol > 0:
            raise ValueError("need C > 0, epsilon >= 0, tol > 0")
        if self.selection not in ("second-order", "max-violating"):
            raise ValueError(f"unknown selection {self.selection!r}")
        spec = self.kernel_spec

        self.x_mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.x_scale_ = np.where(scale > 0, scale, 1.0)
        Xs = (X - self.x_mean_) / self.x_scale_
        K = kernels.gram(spec, Xs)

        y_scale = float(np.std(y))
        if not y_scale > 0:
            y_scale = max(abs(float(np.mean(y))), 1.0)
        tol = self.tol * y_scale
        trace = np.zeros((self.max_iter + 1 if self.record_trace else 0, 4))
        if alpha_init is not None:
            alpha_init = np.asarray(alpha_init, dtype=float)
            n = y.shape[0]
            if alpha_init.shape != (2 * n,):
                raise DimError(f"alpha_init must have length {2 * n}")
            beta0 = alpha_init[:n] - alpha_init[n:]
            if (alpha_init.min() < 0 or alpha_init.max() > self.C
                    or abs(beta0.sum()) > 1e-9 * self.C * n):
                raise ValueError("alpha_init is not feasible for this C")
        a, G, n_iter, status, gap, dual, _ = smo_solve(
            K, y, float(self.C), float(self.epsilon), tol, tol * 1e-6,
            float(self.gap_rtol), 1e-6, int(self.max_iter), trace,
            self.selection == "second-order", alpha_init,
        )
        if status == 1:
            raise ConvergenceError(
                f"SMO did not converge in {self.max_iter} pair updates", gap=gap
            )
        n = y.shape[0]
        beta = a[:n] - a[n:]
        beta[np.abs(beta) <= 1e-8 * self.C] = 0.0
        kb = K @ beta
        b = best_bias(y - kb, float(self.epsilon))

        support = np.flatnonzero(beta)
        self.support_ = support
        self.dual_coef_ = beta[support]
        self.support_vectors_ = Xs[support]
        self.intercept_ = float(b)
        self.alpha_ = a[:n].copy()
        self.alpha_star_ = a[n:].copy()
        self.n_iter_ = int(n_iter)
        self.converged_ = status == 0
        dual = -0.5 * float(beta @ kb) - self.epsilon * float(np.sum(np.abs(beta))) + float(y @ beta)
        self.dual_objective_ = dual
        self.duality_gap_ = self.primal_objective(K, y, beta, b) - dual
        self.n_features_in_ = X.shape[1]
        if self.record_trace:
            self.trace_ = trace[: n_iter + 1].copy()
        return self

    def primal_objective(self, K, y, beta, b) -> float:
        resid = np.abs(y - K @ beta - b) - self.epsilon
        return 0.5 * float(beta @ K @ beta) + self.C * float(np.sum(np.maximum(resid, 0.0)))

    @property
    def n_support_(self) -> int:
        return int(self.dual_coef_.shape[0])

    def _scaled(self, X):
        check_is_fitted(self, "dual_coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise DimError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return (X - self.x_mean_) / self.x_scale_

    def predict(self, X):
        Xs = self._scaled(X)
        if self.dual_coef_.size == 0:
            return np.full(Xs.shape[0], self.intercept_)
        Kx = kernels.cross(self.kernel_spec, Xs, self.support_vectors_)
        # cumsum accumulates left to right, so zero coefficients cannot change the sum
        return np.cumsum(Kx * self.dual_coef_, axis=1)[:, -1] + self.intercept_

    # -- text serialisation --------------------------------------------------

    def to_text(self) -> str:
        check_is_fitted(self, "dual_coef_")
        doc = {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "params": self.get_params(),
            "x_mean": self.x_mean_.tolist(),
            "x_scale": self.x_scale_.tolist(),
            "intercept": self.intercept_,
            "support": self.support_.tolist(),
            "dual_coef": self.dual_coef_.tolist(),
            "support_vectors": self.support_vectors_.tolist(),
            "n_iter": self.n_iter_,
            "duality_gap": self.duality_gap_,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_text(cls, text: str) -> "EpsilonSVR":
        doc = json.loads(text)
        if doc.get("format") != FORMAT or doc.get("version") != FORMAT_VERSION:
            raise ValueError("not an sfb.svr v1 document")
        model = cls(**doc["params"])
        model.x_mean_ = np.array(doc["x_mean"], dtype=float)
        model.x_scale_ = np.array(doc["x_scale"], dtype=float)
        model.intercept_ = float(doc["intercept"])
        model.support_ = np.array(doc["support"], dtype=int)
        model.dual_coef_ = np.array(doc["dual_coef"], dtype=float)
        p = model.x_mean_.shape[0]
        model.support_vectors_ = np.array(doc["support_vectors"], dtype=float).reshape(-1, p)
        model.n_iter_ = doc["n_iter"]
        model.duality_gap_ = doc["duality_gap"]
        model.n_features_in_ = p
        return model


def _estimator(hyper: SvrHyper, tol: float, **kw) -> EpsilonSVR:
    k = hyper.kernel
    return EpsilonSVR(kernel=k.kind, C=hyper.C, epsilon=hyper.epsilon, a1=k.a1,
                      a2=k.a2, degree=k.degree, delta2=k.delta2, tol=tol, **kw)


def train(data: SupervisedSet, hyper: SvrHyper, tol: float = 1e-3, **kw) -> EpsilonSVR:
    """Fit an SVR with the given hyperparameters on a lag-embedded set."""
    if len(data) < 2:
        raise InsufficientDataError("SVR needs at least two training points")
    return _estimator(hyper, tol, **kw).fit(data.inputs, data.targets)


def predict(model: EpsilonSVR, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimError("predict takes a single input vector")
    return float(model.predict(x[None, :])[0])


@dataclass(frozen=True)
class SvrGrid:
    """Grid recipe; C and epsilon factors multiply the training-target std,
    delta2 factors multiply the median pairwise squared input distance."""

    C: tuple = (0.1, 1.0, 10.0, 100.0, 1000.0)
    epsilon: tuple = (0.001, 0.01, 0.1)
    delta2: tuple = (0.1, 1.0, 10.0)
    a1: tuple = (1.0,)
    a2: tuple = (0.0, 1.0)
    degree: tuple = (2, 3)
    tol: float = 1e-3

    def expand(self, kind: str, data: SupervisedSet) -> list[SvrHyper]:
        sd = float(np.std(data.targets))
        if not sd > 0:
            sd = 1.0
        if kind == kernels.GAUSSIAN:
            x = data.inputs
            xs = (x - x.mean(axis=0)) / np.where(x.std(axis=0) > 0, x.std(axis=0), 1.0)
            med = kernels.median_sq_distance(xs)
            specs = [KernelSpec(kind, delta2=f * med) for f in self.delta2]
        elif kind == kernels.LINEAR:
            specs = [KernelSpec(kind, a1=a1, a2=a2) for a1 in self.a1 for a2 in self.a2]
        else:
            specs = [KernelSpec(kind, a1=a1, a2=a2, degree=h)
                     for h in self.degree for a1 in self.a1 for a2 in self.a2]
        return [SvrHyper(c * sd, e * sd, spec)
                for spec in specs for c in self.C for e in self.epsilon]


def fit_grid(train_set: SupervisedSet, grid, tol: float = 1e-3, warm_start: bool = True) -> list:
    """Train every candidate; failed fits yield the exception instead of a model.

    With ``warm_start`` candidates sharing a kernel and epsilon are solved
    in increasing C, each starting from the previous solution scaled by
    the ratio of the C values.  Results come back in grid order.
    """
    grid = list(grid)
    if len(train_set) < 2:
        raise InsufficientDataError("SVR needs at least two training points")
    out = [None] * len(grid)
    groups = {}
    for k, hyper in enumerate(grid):
        key = (hyper.kernel, hyper.epsilon) if warm_start else k
        groups.setdefault(key, []).append(k)
    for members in groups.values():
        prev = None
        for k in sorted(members, key=lambda i: (grid[i].C, i)):
            hyper = grid[k]
            init = None
            if prev is not None and prev.C <= hyper.C:
                init = np.concatenate([prev.alpha_, prev.alpha_star_]) * (hyper.C / prev.C)
                np.clip(init, 0.0, hyper.C, out=init)
            try:
                model = _estimator(hyper, tol).fit(train_set.inputs, train_set.targets, init)
                prev = model
            except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
                model = exc
                prev = None
            out[k] = (hyper, model)
    return out


def pick(fitted: list, scores) -> tuple:
    """Choose the lowest score; ties go to smaller C, then smaller epsilon, then grid order."""
    best = None
    for order, ((hyper, model), score) in enumerate(zip(fitted, scores)):
        if isinstance(model, Exception) or not math.isfinite(score):
            continue
        key = (score, hyper.C, hyper.epsilon, order)
        if best is None or key < best[0]:
            best = (key, hyper, model, score)
    if best is None:
        raise SearchError("no SVR candidate converged")
    return best[1], best[2], best[3]


def grid_search(train_set: SupervisedSet, valid_set: SupervisedSet, grid, tol: float = 1e-3):
    """Exhaustive search; returns ``(hyper, model, validation MAPE)``."""
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    if len(train_set) == 0 or len(valid_set) == 0:
        raise InsufficientDataError("empty training or validation set")
    fitted = fit_grid(train_set, grid, tol)
    scores = [
        mape(valid_set.targets, m.predict(valid_set.inputs))
        if not isinstance(m, Exception) else math.inf
        for _, m in fitted
    ]
    return pick(fitted, scores)
