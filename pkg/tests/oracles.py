"""Reference implementations used as test oracles.

Each routine solves the same mathematical problem as a package component
by a different algorithm, written without importing the component under
test, so agreement is meaningful evidence rather than self-consistency.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy.optimize import linprog
from scipy.signal import lfilter


# -- kernels ------------------------------------------------------------------


def kernel_loop(kind, x, z, a1=1.0, a2=0.0, degree=2, delta2=1.0):
    """Scalar kernel value by explicit summation."""
    dot = sum(float(u) * float(v) for u, v in zip(x, z))
    if kind == "linear":
        return a1 * dot + a2
    if kind == "polynomial":
        return (a1 * dot + a2) ** degree
    d2 = sum((float(u) - float(v)) ** 2 for u, v in zip(x, z))
    return math.exp(-d2 / delta2)


def gram_loop(kind, X, **params):
    n = len(X)
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            K[i, j] = kernel_loop(kind, X[i], X[j], **params)
    return K


def jacobi_eigenvalues(A, tol=1e-14, max_sweeps=100):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations."""
    A = np.array(A, dtype=float, copy=True)
    n = A.shape[0]
    for _ in range(max_sweeps):
        off = math.sqrt(sum(A[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off <= tol * max(1.0, float(np.abs(A).max())):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if A[p, q] == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                Ap = A[:, p].copy()
                Aq = A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap = A[p, :].copy()
                Aq = A[q, :].copy()
                A[p, :] = c * Ap - s * Aq
                A[q, :] = s * Ap + c * Aq
    return np.sort(np.diag(A))


# -- SVR dual -----------------------------------------------------------------


def _project_box_hyperplane(v, s, C):
    """Euclidean projection of v onto {0 <= a <= C, s'a = 0} for s in {+1, -1}^m.

    ``g(mu) = s' clip(v - mu s, 0, C)`` is non-increasing and piecewise
    linear with kinks at ``s_i v_i`` and ``s_i (v_i - C)``; the root is found
    exactly by evaluating every kink and interpolating.
    """
    bps = np.unique(np.concatenate([s * v, s * (v - C)]))
    A = np.clip(v[None, :] - bps[:, None] * s[None, :], 0.0, C)
    g = A @ s
    k = int(np.searchsorted(-g, 0.0, side="left"))
    if k < g.size and g[k] == 0.0:
        return A[k]
    k = min(max(k, 1), g.size - 1)
    g0, g1 = g[k - 1], g[k]
    mu = bps[k - 1] + g0 / (g0 - g1) * (bps[k] - bps[k - 1])
    return np.clip(v - mu * s, 0.0, C)


def svr_dual_pg(K, y, C, eps, max_iter=1_000_000, tol=1e-13):
    """Accelerated projected-gradient solution of the epsilon-SVR dual.

    Minimises ``0.5 a'Qa + p'a`` over ``a = (alpha, alpha*)`` with the box
    and equality constraints; returns ``beta = alpha - alpha*``.
    """
    n = y.size
    s = np.concatenate([np.ones(n), -np.ones(n)])
    Q = np.block([[K, -K], [-K, K]])
    p = np.concatenate([eps - y, eps + y])
    L = max(float(np.linalg.eigvalsh(Q).max()), 1e-12)
    a = np.zeros(2 * n)
    z = a.copy()
    t = 1.0
    for _ in range(max_iter):
        a_new = _project_box_hyperplane(z - (Q @ z + p) / L, s, C)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        step = a_new - a
        # gradient-based restart keeps the accelerated iteration monotone
        if (Q @ z + p) @ step > 0:
            t_new = 1.0
            z = a_new
        else:
            z = a_new + (t - 1.0) / t_new * step
        a, t = a_new, t_new
        if np.max(np.abs(step)) <= tol * C:
            break
    return a[:n] - a[n:]


def svr_bias_lp(r, eps):
    """Midpoint of the minimiser set of ``sum max(0, |r_i - b| - eps)`` via three LPs."""
    n = r.size
    # variables (b, xi_1..xi_n): xi_i >= r_i - b - eps, xi_i >= b - r_i - eps, xi >= 0
    A = np.zeros((2 * n, n + 1))
    ub = np.zeros(2 * n)
    for i in range(n):
        A[i, 0], A[i, 1 + i], ub[i] = -1.0, -1.0, -(r[i] - eps)
        A[n + i, 0], A[n + i, 1 + i], ub[n + i] = 1.0, -1.0, r[i] + eps
    bounds = [(None, None)] + [(0, None)] * n
    c = np.concatenate([[0.0], np.ones(n)])
    best = linprog(c, A_ub=A, b_ub=ub, bounds=bounds, method="highs").fun
    A2 = np.vstack([A, c])
    ub2 = np.concatenate([ub, [best + 1e-12 * max(1.0, best)]])
    e0 = np.zeros(n + 1)
    e0[0] = 1.0
    lo = linprog(e0, A_ub=A2, b_ub=ub2, bounds=bounds, method="highs").x[0]
    hi = linprog(-e0, A_ub=A2, b_ub=ub2, bounds=bounds, method="highs").x[0]
    return 0.5 * (lo + hi)


# -- linear algebra in exact arithmetic ----------------------------------------


def ridge_normal_equations(H, y, ridge):
    """Bias and weights from ``[1 H]'[1 H] + diag(0, ridge I)`` solved exactly."""
    n, q = H.shape
    X = [[1.0] + [float(v) for v in H[i]] for i in range(n)]
    Xf = [[Fraction(v) for v in row] for row in X]
    yf = [Fraction(float(v)) for v in y]
    A = [[sum(Xf[k][i] * Xf[k][j] for k in range(n)) for j in range(q + 1)] for i in range(q + 1)]
    for i in range(1, q + 1):
        A[i][i] += Fraction(ridge)
    rhs = [sum(Xf[k][i] * yf[k] for k in range(n)) for i in range(q + 1)]
    sol = _solve_fraction(A, rhs)
    return np.array([float(v) for v in sol[1:]]), float(sol[0])


def _solve_fraction(A, b):
    n = len(b)
    M = [list(A[i]) + [b[i]] for i in range(n)]
    for col in range(n):
        piv = next(r for r in range(col, n) if M[r][col] != 0)
        M[col], M[piv] = M[piv], M[col]
        pv = M[col][col]
        M[col] = [v / pv for v in M[col]]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [vr - f * vc for vr, vc in zip(M[r], M[col])]
    return [M[i][n] for i in range(n)]


# -- ARMA ---------------------------------------------------------------------


def css_residuals_lfilter(y, c, phi, theta):
    """CSS residuals of ``y_t = c + sum phi_i y_{t-i} + e_t + sum theta_j e_{t-j}``.

    Pre-sample residuals are zero and pre-sample observations equal the
    sample mean ``m``.  Writing ``u = y - m`` and ``k = c - m (1 - sum phi)``,
    the residuals solve ``theta(L) e = phi(L) u - k``, which is evaluated as
    two rational filters.
    """
    y = np.asarray(y, dtype=float)
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    m = y.mean()
    u = y - m
    k = c - m * (1.0 - phi.sum())
    a = np.r_[1.0, theta]
    return lfilter(np.r_[1.0, -phi], a, u) - lfilter([1.0], a, np.full(u.size, k))


def ar1_css_closed_form(y):
    """Exact CSS estimate ``(phi, c)`` of a constant-plus-AR(1) model.

    With the pre-sample observation at the sample mean the problem is the
    OLS regression of ``u_t`` on ``(1, u_{t-1})`` with ``u_{-1} = 0``.
    """
    y = np.asarray(y, dtype=float)
    m = y.mean()
    u = y - m
    x = np.r_[0.0, u[:-1]]
    xm, um = x.mean(), u.mean()
    phi = float(((x - xm) * (u - um)).sum() / ((x - xm) ** 2).sum())
    k = um - phi * xm
    return phi, float(k + m * (1.0 - phi))


# -- Diebold-Mariano ------------------------------------------------------------


def nw_dm_exact(d, lag):
    """DM statistic from exact rational autocovariances (the spreadsheet recipe).

    ``S = g0 + 2 sum_k (1 - k/(lag+1)) g_k`` with ``g_k = sum (d_t - m)(d_{t-k} - m) / n``;
    the statistic is ``m / sqrt(S / n)``.  Only the final square root is
    taken in floating point.
    """
    df = [Fraction(float(v)) for v in d]
    n = len(df)
    m = sum(df) / n
    u = [v - m for v in df]
    g = [sum(u[t] * u[t - k] for t in range(k, n)) / n for k in range(lag + 1)]
    S = g[0] + 2 * sum((1 - Fraction(k, lag + 1)) * g[k] for k in range(1, lag + 1))
    return float(m) / math.sqrt(float(S / n))


# -- seeded problem instances -------------------------------------------------

SVR_KERNELS = (
    ("linear", {}),
    ("polynomial", {"a2": 1.0, "degree": 2}),
    ("gaussian", {"delta2": 1.0}),
)


def svr_instance(seed, kind_index):
    """Random small regression problem: ``(X, y, X_test, C, eps, kind, kernel_params)``."""
    r = np.random.default_rng(seed)
    n = int(r.integers(8, 21))
    p = int(r.integers(1, 4))
    X = r.normal(size=(n, p))
    y = np.sin(X.sum(axis=1)) + 0.1 * r.normal(size=n)
    C = float(r.choice([0.1, 1.0, 10.0]))
    eps = float(r.choice([0.01, 0.05, 0.1]))
    kind, params = SVR_KERNELS[kind_index % 3]
    return X, y, r.normal(size=(10, p)), C, eps, kind, dict(params)


def svr_oracle_predict(X, y, X_test, C, eps, kind, params):
    """Predictions of the exact epsilon-SVR on inputs standardised by the training moments."""
    mu, sd = X.mean(axis=0), X.std(axis=0)
    Xs, Ts = (X - mu) / sd, (X_test - mu) / sd
    K = gram_loop(kind, Xs, **params)
    beta = svr_dual_pg(K, y, C, eps)
    b = svr_bias_lp(y - K @ beta, eps)
    Kt = np.array([[kernel_loop(kind, t, x, **params) for x in Xs] for t in Ts])
    return Kt @ beta + b


def simulate(phi=(), theta=(), n=500, c=10.0, seed=0, burn=200):
    """ARMA sample path by direct recursion from zero, burn-in discarded."""
    r = np.random.default_rng(seed)
    e = r.normal(size=n + burn)
    y = np.zeros(n + burn)
    p, q = len(phi), len(theta)
    for t in range(n + burn):
        ar = sum(phi[i] * y[t - 1 - i] for i in range(p) if t - 1 - i >= 0)
        ma = sum(theta[j] * e[t - 1 - j] for j in range(q) if t - 1 - j >= 0)
        y[t] = ar + e[t] + ma
    return y[burn:] + c
