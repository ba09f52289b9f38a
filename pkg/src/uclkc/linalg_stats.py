"""Incremental weighted ridge regression.

The accumulator keeps the Gram matrix, its inverse and its log-determinant in
sync under rank-one updates, so that each update costs O(d^2).  The update
kernels are compiled with numba because the agent calls them once per
environment step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

REINVERT_EVERY = 10_000


@numba.njit(cache=True)
def sherman_morrison_update(gram, gram_inv, target, x, weight, y):
    """In-place weighted rank-one update.  Returns the log-det increment."""
    d = x.shape[0]
    u = gram_inv @ x
    quad = 0.0
    for i in range(d):
        quad += x[i] * u[i]
    if quad < 0.0:
        quad = 0.0
    denom = 1.0 + weight * quad
    coef = weight / denom
    for i in range(d):
        target[i] += weight * y * x[i]
        for j in range(d):
            gram[i, j] += weight * x[i] * x[j]
    for i in range(d):
        for j in range(i, d):
            v = gram_inv[i, j] - coef * u[i] * u[j]
            gram_inv[i, j] = v
            gram_inv[j, i] = v
    return math.log1p(weight * quad)


@numba.njit(cache=True)
def refresh_inverse(gram, gram_inv):
    """Replace the running inverse by a dense re-inversion of the Gram matrix."""
    fresh = np.linalg.inv(gram)
    d = gram.shape[0]
    for i in range(d):
        for j in range(i, d):
            v = 0.5 * (fresh[i, j] + fresh[j, i])
            gram_inv[i, j] = v
            gram_inv[j, i] = v


@numba.njit(cache=True)
def inv_norm(gram_inv, x):
    """sqrt(x^T A x) for the stored inverse A."""
    q = x @ (gram_inv @ x)
    if q < 0.0:
        q = 0.0
    return math.sqrt(q)


@dataclass
class GramAccumulator:
    """Weighted ridge-regression state: Gram matrix, inverse, log det and target.

    ``gram = lam*I + sum_i w_i x_i x_i^T`` and ``target = sum_i w_i y_i x_i``.
    """

    dim: int
    lam: float
    gram: np.ndarray = field(repr=False)
    gram_inv: np.ndarray = field(repr=False)
    log_det: float
    target: np.ndarray = field(repr=False)
    n_updates: int = 0

    @classmethod
    def init(cls, dim: int, lam: float) -> "GramAccumulator":
        if int(dim) != dim or dim < 1:
            raise ValueError(f"dim must be a positive integer, got {dim!r}")
        if not (lam > 0.0 and math.isfinite(lam)):
            raise ValueError(f"lambda must be positive and finite, got {lam!r}")
        dim = int(dim)
        return cls(
            dim=dim,
            lam=float(lam),
            gram=lam * np.eye(dim),
            gram_inv=np.eye(dim) / lam,
            log_det=dim * math.log(lam),
            target=np.zeros(dim),
        )

    def copy(self) -> "GramAccumulator":
        return GramAccumulator(
            self.dim, self.lam, self.gram.copy(), self.gram_inv.copy(),
            self.log_det, self.target.copy(), self.n_updates,
        )

    def rank_one_update(self, x, weight: float = 1.0, y: float = 0.0) -> "GramAccumulator":
        """Add ``weight * x x^T`` to the Gram matrix and ``weight * y * x`` to the target."""
        x = np.ascontiguousarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"x must have shape ({self.dim},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("x must be finite")
        if not (math.isfinite(weight) and weight > 0.0):
            raise ValueError(f"weight must be positive and finite, got {weight!r}")
        if not math.isfinite(y):
            raise ValueError(f"y must be finite, got {y!r}")
        self.log_det += sherman_morrison_update(
            self.gram, self.gram_inv, self.target, x, float(weight), float(y)
        )
        self.n_updates += 1
        if self.n_updates % REINVERT_EVERY == 0:
            refresh_inverse(self.gram, self.gram_inv)
        return self

    def solve(self) -> np.ndarray:
        """Weighted ridge solution ``gram^{-1} target``."""
        return self.gram_inv @ self.target

    def mahalanobis_inv(self, x) -> float:
        """``||x||`` in the inverse-Gram metric."""
        return float(inv_norm(self.gram_inv, np.ascontiguousarray(x, dtype=float)))

    @property
    def det(self) -> float:
        return math.exp(self.log_det)


def init(dim: int, lam: float) -> GramAccumulator:
    return GramAccumulator.init(dim, lam)


def rank_one_update(acc: GramAccumulator, x, weight: float = 1.0, y: float = 0.0) -> GramAccumulator:
    return acc.rank_one_update(x, weight, y)


def solve(acc: GramAccumulator) -> np.ndarray:
    return acc.solve()


def mahalanobis_inv(acc: GramAccumulator, x) -> float:
    return acc.mahalanobis_inv(x)
