"""Linear, polynomial and Gaussian kernels plus Gram-matrix construction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimError, NumericError

LINEAR = "linear"
POLYNOMIAL = "polynomial"
GAUSSIAN = "gaussian"
KINDS = (LINEAR, POLYNOMIAL, GAUSSIAN)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus its parameters.

    ``a1``/``a2`` scale and shift the inner product (linear, polynomial),
    ``degree`` is the polynomial degree and ``delta2`` the Gaussian
    bandwidth.  Parameters a family does not use are simply ignored.
    """

    kind: str = GAUSSIAN
    a1: float = 1.0
    a2: float = 0.0
    degree: int = 2
    delta2: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == POLYNOMIAL and (int(self.degree) != self.degree or self.degree < 1):
            raise ValueError("polynomial degree must be a positive integer")
        if self.kind == GAUSSIAN and not self.delta2 > 0:
            raise ValueError("delta2 must be positive")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in (LINEAR, POLYNOMIAL):
            out.update(a1=self.a1, a2=self.a2)
        if self.kind == POLYNOMIAL:
            out["degree"] = int(self.degree)
        if self.kind == GAUSSIAN:
            out["delta2"] = self.delta2
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(**d)


def _as_matrix(X, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] < 1:
        raise DimError(f"{name} must be a non-empty 2-D array")
    if not np.all(np.isfinite(X)):
        raise NumericError(f"{name} has non-finite entries")
    return X


def cross(spec: KernelSpec, X, Y) -> np.ndarray:
    """Kernel matrix ``K[i, j] = k(X[i], Y[j])``."""
    X = _as_matrix(X, "X")
    Y = _as_matrix(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise DimError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if spec.kind == GAUSSIAN:
        diff = X[:, None, :] - Y[None, :, :]
        return np.exp(-np.einsum("ijk,ijk->ij", diff, diff) / spec.delta2)
    lin = spec.a1 * (X @ Y.T) + spec.a2
    if spec.kind == LINEAR:
        return lin
    return lin ** int(spec.degree)


def kernel_eval(spec: KernelSpec, x, y) -> float:
    """Evaluate the kernel on a single pair of vectors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape or x.size < 1:
        raise DimError(f"incompatible shapes {x.shape} and {y.shape}")
    return float(cross(spec, x, y)[0, 0])


def gram(spec: KernelSpec, X) -> np.ndarray:
    """Symmetric Gram matrix of the rows of ``X``."""
    X = _as_matrix(X)
    G = cross(spec, X, X)
    # BLAS products are not guaranteed bitwise symmetric.
    return 0.5 * (G + G.T)


def median_sq_distance(X) -> float:
    """Median pairwise squared Euclidean distance (off-diagonal), 1.0 if degenerate."""
    X = _as_matrix(X)
    diff = X[:, None, :] - X[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    iu = np.triu_indices(X.shape[0], k=1)
    if iu[0].size == 0:
        return 1.0
    med = float(np.median(d2[iu]))
    return med if med > 0 else 1.0
