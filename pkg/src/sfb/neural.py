"""RBF and single-hidden-layer MLP regressors for lag-embedded series."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataset import SupervisedSet
from .exceptions import (
    ConvergenceError,
    DegenerateClusterError,
    DimError,
    InsufficientDataError,
    SearchError,
)
from .metrics import mape

FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainPolicy:
    """Multi-start and early-stopping settings.

    Validation is checked every ``check_every`` epochs.  A restart stops
    after ``patience`` checks without a relative improvement of at least
    ``min_delta``, although the best checkpoint is always tracked exactly.
    The step size is halved (and the step rejected) whenever the training
    loss would increase and multiplied by ``lr_growth`` after every
    accepted step.
    """

    restarts: int = 5
    max_epochs: int = 5000
    patience: int = 20
    check_every: int = 10
    learning_rate: float = 0.01
    lr_growth: float = 1.05
    min_delta: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1 or self.patience < 1 or self.check_every < 1:
            raise ValueError("restarts, patience and check_every must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def _standardiser(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    return mean, np.where(scale > 0, scale, 1.0)


class _ScaledInputMixin:
    def _scaled(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.x_mean_.shape[0]:
            raise DimError(f"expected {self.x_mean_.shape[0]} features, got {X.shape[1]}")
        return (X - self.x_mean_) / self.x_scale_


# -- k-means ------------------------------------------------------------------


def _kmeans_once(X, k, rng, max_iter=100):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if not total > 0:
            return None, math.inf
        centers[c] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((X - centers[c]) ** 2, axis=1))
    labels = None
    for _ in range(max_iter):
        dist = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new = np.argmin(dist, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        if np.any(counts == 0):
            return None, math.inf
        for c in range(k):
            centers[c] = X[labels == c].mean(axis=0)
    dist = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return centers, float(np.min(dist, axis=1).sum())


def kmeans(X, k: int, seed: int = 0, restarts: int = 5) -> tuple[np.ndarray, float]:
    """Seeded k-means++ / Lloyd; returns the restart with the lowest within-cluster SSE."""
    X = np.asarray(X, dtype=float)
    if k > X.shape[0]:
        raise InsufficientDataError(f"{k} clusters for {X.shape[0]} points")
    best = (None, math.inf)
    for r in range(restarts):
        centers, sse = _kmeans_once(X, k, np.random.default_rng(seed + r))
        if centers is not None and sse < best[1]:
            best = (centers, sse)
    if best[0] is None:
        raise DegenerateClusterError(f"empty cluster in every one of {restarts} k-means restarts")
    return best


# -- RBF network --------------------------------------------------------------


def rbf_activations(Xs, centers, sigmas) -> np.ndarray:
    d2 = np.sum((Xs[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.exp(-d2 / (2.0 * sigmas**2))


def ridge_output_layer(H, y, ridge: float = 1e-8) -> tuple[np.ndarray, float]:
    """Output weights and bias minimising ``|b0 + H beta - y|^2 + ridge |beta|^2``.

    The bias is not penalised; the problem is solved on centred data with
    an augmented least-squares system.
    """
    h_mean = H.mean(axis=0)
    y_mean = y.mean()
    Hc = H - h_mean
    q = H.shape[1]
    A = np.vstack([Hc, math.sqrt(ridge) * np.eye(q)])
    rhs = np.concatenate([y - y_mean, np.zeros(q)])
    beta = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return beta, float(y_mean - h_mean @ beta)


class RBFNetwork(_ScaledInputMixin, RegressorMixin, BaseEstimator):
    """Gaussian RBF network: k-means centroids, nearest-centroid spreads and an
    exact ridge least-squares output layer.

    Attributes
    ----------
    centers_ : ndarray (n_hidden, n_features), in standardised input units
    sigmas_ : ndarray (n_hidden,)
    coef_ : ndarray (n_hidden,)
    intercept_ : float
    """

    def __init__(self, n_hidden=10, n_init=5, sigma_floor=1e-3, ridge=1e-8, random_state=0):
        self.n_hidden = n_hidden
        self.n_init = n_init
        self.sigma_floor = sigma_floor
        self.ridge = ridge
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        q = int(self.n_hidden)
        if q > X.shape[0]:
            raise InsufficientDataError(f"{q} hidden units for {X.shape[0]} points")
        self.x_mean_, self.x_scale_ = _standardiser(X)
        Xs = (X - self.x_mean_) / self.x_scale_
        centers, self.sse_ = kmeans(Xs, q, self.random_state, self.n_init)
        self.centers_ = centers
        self.sigmas_ = nearest_centre_spread(centers, self.sigma_floor)
        H = rbf_activations(Xs, centers, self.sigmas_)
        self.coef_, self.intercept_ = ridge_output_layer(H, y, self.ridge)
        return self

    def predict(self, X):
        H = rbf_activations(self._scaled(X), self.centers_, self.sigmas_)
        return self.intercept_ + H @ self.coef_

    def to_text(self) -> str:
        check_is_fitted(self, "coef_")
        return json.dumps({
            "format": "sfb.rbf", "version": FORMAT_VERSION, "params": self.get_params(),
            "x_mean": self.x_mean_.tolist(), "x_scale": self.x_scale_.tolist(),
            "centers": self.centers_.tolist(), "sigmas": self.sigmas_.tolist(),
            "coef": self.coef_.tolist(), "intercept": self.intercept_,
        }, indent=1)

    @classmethod
    def from_text(cls, text: str) -> "RBFNetwork":
        doc = json.loads(text)
        if doc.get("format") != "sfb.rbf" or doc.get("version") != FORMAT_VERSION:
            raise ValueError("not an sfb.rbf v1 document")
        m = cls(**doc["params"])
        m.x_mean_ = np.array(doc["x_mean"])
        m.x_scale_ = np.array(doc["x_scale"])
        m.centers_ = np.array(doc["centers"]).reshape(-1, m.x_mean_.shape[0])
        m.sigmas_ = np.array(doc["sigmas"])
        m.coef_ = np.array(doc["coef"])
        m.intercept_ = float(doc["intercept"])
        return m


def nearest_centre_spread(centers, floor: float = 1e-3) -> np.ndarray:
    """Distance from each centroid to its nearest neighbour, floored; 1.0 for a lone centroid."""
    q = centers.shape[0]
    if q == 1:
        return np.ones(1)
    d = np.sqrt(np.sum((centers[:, None, :] - centers[None, :, :]) ** 2, axis=2))
    np.fill_diagonal(d, np.inf)
    return np.maximum(d.min(axis=1), floor)


# -- MLP ----------------------------------------------------------------------


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def mlp_output(params, Xs):
    W, b, beta, beta0 = params
    return beta0 + _sigmoid(Xs @ W + b) @ beta


@njit(cache=True)
def _loss_grad(W, b, beta, beta0, X, t, dW, db, dbeta):
    """Fill ``dW, db, dbeta`` in place; return ``(mse, d_beta0)``."""
    n, p = X.shape
    q = W.shape[1]
    H = np.empty(q)
    dW[:, :] = 0.0
    db[:] = 0.0
    dbeta[:] = 0.0
    loss = 0.0
    dbeta0 = 0.0
    for i in range(n):
        out = beta0
        for j in range(q):
            z = b[j]
            for k in range(p):
                z += X[i, k] * W[k, j]
            H[j] = 0.5 * (1.0 + math.tanh(0.5 * z))
            out += beta[j] * H[j]
        r = out - t[i]
        loss += r * r
        g = 2.0 * r / n
        dbeta0 += g
        for j in range(q):
            dbeta[j] += g * H[j]
            gh = g * beta[j] * H[j] * (1.0 - H[j])
            db[j] += gh
            for k in range(p):
                dW[k, j] += gh * X[i, k]
    return loss / n, dbeta0


@njit(cache=True)
def _val_mape(W, b, beta, beta0, X, y, y_mean, y_scale):
    n, p = X.shape
    q = W.shape[1]
    acc = 0.0
    for i in range(n):
        out = beta0
        for j in range(q):
            z = b[j]
            for k in range(p):
                z += X[i, k] * W[k, j]
            out += beta[j] * 0.5 * (1.0 + math.tanh(0.5 * z))
        acc += abs((y[i] - (y_mean + y_scale * out)) / y[i])
    return 100.0 * acc / n


@njit(cache=True)
def _train_restart(W, b, beta, beta0, X, t, Xv, yv, y_mean, y_scale, lr, growth,
                   max_epochs, check_every, patience, min_delta, hist):
    """Gradient descent for one restart; parameters are updated in place to the best checkpoint.

    Returns ``(best score, number of history rows)``.
    """
    p, q = W.shape
    dW = np.empty((p, q))
    db = np.empty(q)
    dbeta = np.empty(q)
    cW = np.empty((p, q))
    cb = np.empty(q)
    cbeta = np.empty(q)
    cdW = np.empty((p, q))
    cdb = np.empty(q)
    cdbeta = np.empty(q)
    loss, dbeta0 = _loss_grad(W, b, beta, beta0, X, t, dW, db, dbeta)
    bW = W.copy()
    bb = b.copy()
    bbeta = beta.copy()
    bbeta0 = beta0
    if not np.isfinite(loss):
        return np.inf, 0, beta0
    best = _val_mape(W, b, beta, beta0, Xv, yv, y_mean, y_scale)
    ref = best
    hist[0, 0] = 0.0
    hist[0, 1] = best
    rows = 1
    bad = 0
    for epoch in range(1, max_epochs + 1):
        for k in range(p):
            for j in range(q):
                cW[k, j] = W[k, j] - lr * dW[k, j]
        for j in range(q):
            cb[j] = b[j] - lr * db[j]
            cbeta[j] = beta[j] - lr * dbeta[j]
        cbeta0 = beta0 - lr * dbeta0
        c_loss, c_dbeta0 = _loss_grad(cW, cb, cbeta, cbeta0, X, t, cdW, cdb, cdbeta)
        if np.isfinite(c_loss) and c_loss <= loss:
            W[:, :] = cW
            b[:] = cb
            beta[:] = cbeta
            beta0 = cbeta0
            dW[:, :] = cdW
            db[:] = cdb
            dbeta[:] = cdbeta
            dbeta0 = c_dbeta0
            loss = c_loss
            lr *= growth
        else:
            lr *= 0.5
        if epoch % check_every == 0:
            score = _val_mape(W, b, beta, beta0, Xv, yv, y_mean, y_scale)
            hist[rows, 0] = epoch
            hist[rows, 1] = score
            rows += 1
            if score < best:
                bW[:, :] = W
                bb[:] = b
                bbeta[:] = beta
                bbeta0 = beta0
                best = score
            if score < ref * (1.0 - min_delta):
                ref = score
                bad = 0
            else:
                bad += 1
                if bad >= patience:
                    break
        if lr < 1e-14:
            break
    W[:, :] = bW
    b[:] = bb
    beta[:] = bbeta
    return best, rows, bbeta0


def mlp_loss_grad(params, Xs, t):
    """Mean squared error and its gradient with respect to ``(W, b, beta, beta0)``."""
    W, b, beta, beta0 = params
    W = np.ascontiguousarray(W, dtype=float)
    dW, db, dbeta = np.empty_like(W), np.empty(W.shape[1]), np.empty(W.shape[1])
    loss, dbeta0 = _loss_grad(W, np.asarray(b, dtype=float), np.asarray(beta, dtype=float),
                              float(beta0), np.ascontiguousarray(Xs, dtype=float),
                              np.asarray(t, dtype=float), dW, db, dbeta)
    return loss, (dW, db, dbeta, dbeta0)


class MLPNetwork(_ScaledInputMixin, RegressorMixin, BaseEstimator):
    """One-hidden-layer logistic MLP trained by full-batch gradient descent.

    Inputs are standardised and targets z-scored for training; the fitted
    output weights are mapped back so that ``predict`` returns raw levels.
    Each of ``restarts`` initialisations uses seed ``random_state + k`` and
    is early-stopped on validation MAPE; the best restart is kept.
    """

    def __init__(self, n_hidden=5, restarts=5, max_epochs=5000, patience=20, check_every=10,
                 learning_rate=0.01, lr_growth=1.05, min_delta=1e-3, random_state=0):
        self.n_hidden = n_hidden
        self.restarts = restarts
        self.max_epochs = max_epochs
        self.patience = patience
        self.check_every = check_every
        self.learning_rate = learning_rate
        self.lr_growth = lr_growth
        self.min_delta = min_delta
        self.random_state = random_state

    def _init_params(self, p, rng):
        q = int(self.n_hidden)
        return (rng.uniform(-1.0, 1.0, (p, q)), rng.uniform(-1.0, 1.0, q),
                rng.uniform(-1.0, 1.0, q) / math.sqrt(q), 0.0)

    def _run(self, Xs, t, Xv, yv, rng):
        """One restart; returns (best params, best validation MAPE, checkpoint history)."""
        W, b, beta, beta0 = self._init_params(Xs.shape[1], rng)
        hist = np.empty((int(self.max_epochs) // int(self.check_every) + 1, 2))
        score, rows, beta0 = _train_restart(
            W, b, beta, beta0, Xs, t, Xv, yv, self.y_mean_, self.y_scale_,
            float(self.learning_rate), float(self.lr_growth), int(self.max_epochs),
            int(self.check_every), int(self.patience), float(self.min_delta), hist)
        if not math.isfinite(score):
            return None, math.inf, []
        history = [(int(e), float(v)) for e, v in hist[:rows]]
        return (W, b, beta, float(beta0)), float(score), history

    def fit(self, X, y, X_val=None, y_val=None):
        """Train ``restarts`` networks and keep the one with the lowest validation MAPE.

        Without a validation set the training data doubles as the
        early-stopping set.
        """
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[0] < 2:
            raise InsufficientDataError("MLP needs at least two training points")
        if np.any(y == 0) and X_val is None:
            raise ValueError("targets must be non-zero for MAPE-based early stopping")
        self.x_mean_, self.x_scale_ = _standardiser(X)
        self.y_mean_ = float(y.mean())
        sd = float(y.std())
        self.y_scale_ = sd if sd > 0 else 1.0
        Xs = np.ascontiguousarray((X - self.x_mean_) / self.x_scale_)
        t = (y - self.y_mean_) / self.y_scale_
        if X_val is None:
            Xv, yv = Xs, y
        else:
            Xv = np.ascontiguousarray((check_array(X_val, dtype=float) - self.x_mean_) / self.x_scale_)
            yv = np.asarray(y_val, dtype=float)
            if np.any(yv == 0):
                raise ValueError("validation targets must be non-zero")

        best = None
        self.restart_scores_ = []
        self.histories_ = []
        for k in range(int(self.restarts)):
            rng = np.random.default_rng(int(self.random_state) + k)
            params, score, hist = self._run(Xs, t, Xv, yv, rng)
            self.restart_scores_.append(score)
            self.histories_.append(hist)
            if params is not None and (best is None or score < best[1]):
                best = (params, score, k)
        if best is None:
            raise ConvergenceError("MLP training diverged in every restart")
        (W, b, beta, beta0), self.validation_mape_, self.best_restart_ = best
        self.coefs_ = W.copy()
        self.hidden_bias_ = b.copy()
        self.coef_ = self.y_scale_ * beta
        self.intercept_ = float(self.y_mean_ + self.y_scale_ * beta0)
        return self

    def predict(self, X):
        H = _sigmoid(self._scaled(X) @ self.coefs_ + self.hidden_bias_)
        return self.intercept_ + H @ self.coef_

    def to_text(self) -> str:
        check_is_fitted(self, "coef_")
        return json.dumps({
            "format": "sfb.mlp", "version": FORMAT_VERSION, "params": self.get_params(),
            "x_mean": self.x_mean_.tolist(), "x_scale": self.x_scale_.tolist(),
            "input_weights": self.coefs_.tolist(), "hidden_bias": self.hidden_bias_.tolist(),
            "coef": self.coef_.tolist(), "intercept": self.intercept_,
        }, indent=1)

    @classmethod
    def from_text(cls, text: str) -> "MLPNetwork":
        doc = json.loads(text)
        if doc.get("format") != "sfb.mlp" or doc.get("version") != FORMAT_VERSION:
            raise ValueError("not an sfb.mlp v1 document")
        m = cls(**doc["params"])
        m.x_mean_ = np.array(doc["x_mean"])
        m.x_scale_ = np.array(doc["x_scale"])
        m.coefs_ = np.array(doc["input_weights"]).reshape(m.x_mean_.shape[0], -1)
        m.hidden_bias_ = np.array(doc["hidden_bias"])
        m.coef_ = np.array(doc["coef"])
        m.intercept_ = float(doc["intercept"])
        return m


# -- experiment entry points ---------------------------------------------------


def train_rbf(train: SupervisedSet, valid: SupervisedSet | None, q: int,
              policy: TrainPolicy = TrainPolicy()) -> RBFNetwork:
    if not 5 <= q <= 30:
        raise ValueError("RBF hidden units must lie in [5, 30]")
    if q > len(train):
        raise InsufficientDataError(f"{q} hidden units for {len(train)} training points")
    return RBFNetwork(n_hidden=q, n_init=policy.restarts, random_state=policy.seed).fit(
        train.inputs, train.targets)


def train_mlp(train: SupervisedSet, valid: SupervisedSet | None, q: int,
              policy: TrainPolicy = TrainPolicy()) -> MLPNetwork:
    if q < 1:
        raise ValueError("q must be >= 1")
    net = MLPNetwork(n_hidden=q, restarts=policy.restarts, max_epochs=policy.max_epochs,
                     patience=policy.patience, check_every=policy.check_every,
                     learning_rate=policy.learning_rate, lr_growth=policy.lr_growth,
                     min_delta=policy.min_delta, random_state=policy.seed)
    if valid is None:
        return net.fit(train.inputs, train.targets)
    return net.fit(train.inputs, train.targets, valid.inputs, valid.targets)


def predict_nn(model, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimError("predict_nn takes a single input vector")
    return float(model.predict(x[None, :])[0])


def pick_q(fitted: list, scores) -> tuple:
    """Lowest validation score wins; ties go to the smaller q."""
    best = None
    for (q, model), score in zip(fitted, scores):
        if isinstance(model, Exception) or not math.isfinite(score):
            continue
        if best is None or (score, q) < (best[2], best[0]):
            best = (q, model, score)
    if best is None:
        raise SearchError("no network candidate could be trained")
    return best


def select_q(train: SupervisedSet, valid: SupervisedSet, candidates, policy: TrainPolicy = TrainPolicy(),
             kind: str = "mlp") -> tuple:
    """Choose the hidden-layer size by validation MAPE; returns ``(q, model)``."""
    candidates = sorted(set(candidates))
    if not candidates:
        raise ValueError("no candidate sizes")
    trainer = train_mlp if kind == "mlp" else train_rbf
    fitted = []
    for q in candidates:
        try:
            fitted.append((q, trainer(train, valid, q, policy)))
        except (ConvergenceError, DegenerateClusterError, InsufficientDataError) as exc:
            fitted.append((q, exc))
    scores = [mape(valid.targets, m.predict(valid.inputs)) if not isinstance(m, Exception)
              else math.inf for _, m in fitted]
    q, model, _ = pick_q(fitted, scores)
    return q, model


def policy_dict(policy: TrainPolicy) -> dict:
    return asdict(policy)
