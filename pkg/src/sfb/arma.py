"""ARMA(p, q) baseline estimated by conditional sum of squares, with AIC order selection.

The model is ``y_t = c + sum phi_i y_{t-i} + e_t + sum theta_j e_{t-j}``.
Pre-sample residuals are zero and pre-sample observations sit at the
series mean.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy.optimize import minimize
from sklearn.base import BaseEstimator

from .exceptions import FitError, InsufficientDataError, SelectError

ROOT_MARGIN = 1e-6


@njit(cache=True)
def _css(u, phi, theta, k, out):
    n = u.shape[0]
    p = phi.shape[0]
    q = theta.shape[0]
    sse = 0.0
    for t in range(n):
        e = u[t] - k
        for i in range(1, min(p, t) + 1):
            e -= phi[i - 1] * u[t - i]
        for j in range(1, min(q, t) + 1):
            e -= theta[j - 1] * out[t - j]
        out[t] = e
        sse += e * e
    return sse


@njit(cache=True)
def _inside(a):
    """Step-down (Schur-Cohn) test: all roots of ``1 + sum a_i z^i`` lie outside the unit circle."""
    a = a.copy()
    for m in range(a.shape[0], 0, -1):
        k = a[m - 1]
        if not abs(k) < 1.0:
            return False
        prev = a[:m - 1].copy()
        for i in range(m - 1):
            a[i] = (prev[i] - k * prev[m - 2 - i]) / (1.0 - k * k)
    return True


@njit(cache=True)
def _css_objective(x, p, u, buf):
    """CSS at packed ``x = (k, phi, theta)``; 1e300 outside the stationary/invertible region."""
    phi = x[1:1 + p]
    theta = x[1 + p:]
    if not (_inside(-phi) and _inside(theta)):
        return 1e300
    val = _css(u, phi, theta, x[0], buf)
    if not math.isfinite(val):
        return 1e300
    return val


def css_residuals(u, phi, theta, k):
    """CSS residuals of the demeaned series ``u`` (pre-sample values zero)."""
    u = np.ascontiguousarray(u, dtype=float)
    out = np.empty_like(u)
    _css(u, np.ascontiguousarray(phi, dtype=float), np.ascontiguousarray(theta, dtype=float),
         float(k), out)
    return out


def _lagmat(x, lags):
    n = x.shape[0]
    out = np.zeros((n, lags))
    for i in range(1, lags + 1):
        out[i:, i - 1] = x[:-i]
    return out


def hannan_rissanen(u, p, q):
    """Two-stage regression start values ``(k, phi, theta)`` for the demeaned series."""
    n = u.shape[0]
    if q == 0:
        Z = np.column_stack([np.ones(n), _lagmat(u, p)])
        coef = np.linalg.lstsq(Z, u, rcond=None)[0]
        return coef[0], coef[1:], np.zeros(0)
    m = min(max(8, 2 * (p + q)), n // 4)
    Z = np.column_stack([np.ones(n), _lagmat(u, m)])
    ehat = u - Z @ np.linalg.lstsq(Z, u, rcond=None)[0]
    Z = np.column_stack([np.ones(n), _lagmat(u, p), _lagmat(ehat, q)])
    coef = np.linalg.lstsq(Z, u, rcond=None)[0]
    return coef[0], coef[1:1 + p], coef[1 + p:]


def _reflect(poly_tail, sign):
    """Move roots of ``1 + sign * sum c_i z^i`` outside the unit circle (plus margin)."""
    c = np.asarray(poly_tail, dtype=float)
    if c.size == 0:
        return c, False
    coeffs = np.r_[1.0, sign * c]
    roots = np.roots(coeffs[::-1])
    mod = np.abs(roots)
    if np.all(mod >= 1.0 + ROOT_MARGIN):
        return c, False
    roots = np.where(mod < 1.0, 1.0 / np.conj(roots), roots)
    mod = np.abs(roots)
    roots = np.where(mod < 1.0 + ROOT_MARGIN, roots * (1.0 + 2 * ROOT_MARGIN) / mod, roots)
    poly = np.array([1.0 + 0j])
    for r in roots:
        poly = np.convolve(poly, np.array([1.0, -1.0 / r]))
    return sign * poly.real[1:], True


def roots_ok(poly_tail, sign) -> bool:
    c = np.asarray(poly_tail, dtype=float)
    if c.size == 0:
        return True
    roots = np.roots(np.r_[1.0, sign * c][::-1])
    return bool(np.all(np.abs(roots) >= 1.0 + ROOT_MARGIN * 0.5))


class ARMA(BaseEstimator):
    """Univariate ARMA(p, q) fitted by CSS with a Nelder-Mead simplex.

    Attributes
    ----------
    ar_, ma_ : ndarray
    intercept_ : float
    sigma2_ : float
    loglik_, aic_ : float
    mean_ : float
        Level used for pre-sample observations.
    projected_ : bool
        True when the optimum had to be reflected back into the
        stationary/invertible region.
    """

    def __init__(self, order=(1, 0), xatol=1e-4, fatol=1e-7, maxfev=None, restarts=2):
        self.order = order
        self.xatol = xatol
        self.fatol = fatol
        self.maxfev = maxfev
        self.restarts = restarts

    def fit(self, y, X=None, start=None):
        """Fit by CSS.

        ``start`` may be a previously fitted :class:`ARMA` of the same order
        (typically from the previous forecast origin).  Its coefficients seed
        a narrow simplex; the Hannan-Rissanen start is the fallback.
        """
        y = np.asarray(y, dtype=float)
        p, q = (int(v) for v in self.order)
        n = y.shape[0]
        if p < 0 or q < 0:
            raise ValueError("orders must be non-negative")
        if n < 10 * (p + q + 1):
            raise InsufficientDataError(f"ARMA({p},{q}) needs {10 * (p + q + 1)} observations, got {n}")
        m = float(y.mean())
        s = float(y.std())
        if not s > 0:
            s = 1.0
        u = (y - m) / s

        k0, phi0, theta0 = hannan_rissanen(u, p, q)
        phi0, _ = _reflect(phi0, -1.0)
        theta0, _ = _reflect(theta0, 1.0)
        x0 = np.r_[k0, phi0, theta0]

        buf = np.empty_like(u)

        def sse(x):
            # the search stays inside the stationary and invertible region
            return _css_objective(x, p, u, buf)

        if q == 0:
            # CSS with zero pre-sample lags is linear least squares: the start is the optimum.
            x = x0
        else:
            tries = [(x0, 0.05)]
            if start is not None:
                phi_w, theta_w = np.asarray(start.ar_, float), np.asarray(start.ma_, float)
                if (phi_w.size, theta_w.size) != (p, q):
                    raise ValueError("start model has a different order")
                k_w = (start.intercept_ - m * (1.0 - phi_w.sum())) / s
                xw = np.r_[k_w, phi_w, theta_w]
                if sse(xw) < 1e300:
                    tries.insert(0, (xw, 0.01))
            for x_init, scale in tries:
                res = self._simplex(sse, x_init, scale, n)
                if res.success and math.isfinite(res.fun):
                    break
            else:
                raise FitError(f"ARMA({p},{q}) simplex did not converge: {res.message}")
            x = res.x
        k, phi, theta = x[0], x[1:1 + p], x[1 + p:]
        phi, proj_ar = _reflect(phi, -1.0)
        theta, proj_ma = _reflect(theta, 1.0)
        e = css_residuals(u, phi, theta, k) * s

        self.ar_ = np.asarray(phi, dtype=float)
        self.ma_ = np.asarray(theta, dtype=float)
        self.intercept_ = float(m * (1.0 - self.ar_.sum()) + s * k)
        self.mean_ = m
        self.sigma2_ = float(e @ e) / n
        if not self.sigma2_ > 0:
            self.sigma2_ = np.finfo(float).tiny
        self.loglik_ = -0.5 * n * (math.log(2 * math.pi * self.sigma2_) + 1.0)
        self.n_params_ = p + q + 2
        self.aic_ = 2 * self.n_params_ - 2 * self.loglik_
        self.projected_ = bool(proj_ar or proj_ma)
        self.nobs_ = n
        return self

    def _simplex(self, sse, x, scale, n):
        dim = x.size
        # Overparameterised orders have near-flat ridges (almost cancelling
        # roots); a fresh simplex from the best point usually finishes the job.
        for _ in range(1 + self.restarts):
            # scipy's default simplex is 0.025% wide along zero coordinates,
            # which stalls when the intercept start is near zero
            steps = scale * np.maximum(np.abs(x), 0.5)
            res = minimize(sse, x, method="Nelder-Mead", options={
                "xatol": self.xatol, "fatol": self.fatol * n,
                "initial_simplex": np.vstack([x, x + np.diag(steps)]),
                "maxfev": self.maxfev or 1000 * dim, "adaptive": dim > 4,
            })
            x = res.x
            if res.success:
                break
        return res

    def residuals(self, history):
        """Recursive residuals of ``history`` under the fitted parameters."""
        ys = [float(v) for v in history]
        es = []
        for t in range(len(ys)):
            es.append(ys[t] - self._step(ys, es, t))
        return es

    def _step(self, ys, es, t):
        pred = self.intercept_
        for i, phi in enumerate(self.ar_, start=1):
            pred += phi * (ys[t - i] if t - i >= 0 else self.mean_)
        for j, theta in enumerate(self.ma_, start=1):
            if t - j >= 0:
                pred += theta * es[t - j]
        return pred

    def forecast(self, history, h: int) -> np.ndarray:
        """Point forecasts for steps 1..h after ``history`` with zero future innovations."""
        if h < 1:
            raise ValueError("h must be >= 1")
        p, q = len(self.ar_), len(self.ma_)
        if len(history) < max(p, q):
            raise InsufficientDataError("history shorter than max(p, q)")
        ys = [float(v) for v in history]
        es = self.residuals(ys)
        out = []
        for _ in range(h):
            t = len(ys)
            pred = self._step(ys, es, t)
            ys.append(pred)
            es.append(0.0)
            out.append(pred)
        return np.array(out)

    def to_dict(self) -> dict:
        return {"order": [len(self.ar_), len(self.ma_)], "ar": self.ar_.tolist(),
                "ma": self.ma_.tolist(), "intercept": self.intercept_, "sigma2": self.sigma2_,
                "aic": self.aic_, "projected": self.projected_}


def fit(series, p: int, q: int, start: ARMA | None = None, **kw) -> ARMA:
    return ARMA(order=(p, q), **kw).fit(series, start=start)


def select_order(series, p_max: int = 12, q_max: int = 12, **kw) -> ARMA:
    """Fit every order on the grid and return the minimum-AIC model.

    Orders the series is too short for, or whose fit fails, are skipped.
    Ties within 1e-12 go to the smaller ``p + q``, then the smaller ``p``.
    The returned model carries ``search_`` with the AIC table and the
    number of skipped orders.
    """
    if p_max < 0 or q_max < 0:
        raise ValueError("p_max and q_max must be non-negative")
    table = {}
    failed = 0
    best = None
    for p in range(p_max + 1):
        for q in range(q_max + 1):
            try:
                model = fit(series, p, q, **kw)
            except (FitError, InsufficientDataError, np.linalg.LinAlgError):
                failed += 1
                continue
            table[(p, q)] = model.aic_
            if best is None:
                best = model
                continue
            bp, bq = len(best.ar_), len(best.ma_)
            if model.aic_ < best.aic_ - 1e-12 or (
                abs(model.aic_ - best.aic_) <= 1e-12 and (p + q, p) < (bp + bq, bp)
            ):
                best = model
    if best is None:
        raise SelectError("every ARMA order failed to fit")
    best.search_ = {"aic": table, "failed": failed}
    return best


def forecast(model: ARMA, history, h: int) -> np.ndarray:
    return model.forecast(history, h)
