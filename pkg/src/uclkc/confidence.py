"""Confidence radii, variance estimate, error bound and exploration weight.

The scalar formulas are compiled with numba so the agent's step kernel and the
Python API share one implementation.  All logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np


@dataclass(frozen=True)
class RadiusParams:
    d: int
    lam: float
    delta: float
    b_theta: float
    h: float

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be positive")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.b_theta < 0 or self.h < 0:
            raise ValueError("b_theta and h must be non-negative")


@numba.njit(cache=True)
def _beta_hat(t, d, lam, delta, b_theta):
    lg = math.log(4.0 * t * t / delta)
    return (8.0 * math.sqrt(d * math.log(1.0 + t / lam) * lg)
            + 4.0 * math.sqrt(d) * lg + math.sqrt(lam) * b_theta)


@numba.njit(cache=True)
def _beta_check(t, d, lam, delta, b_theta):
    lg = math.log(4.0 * t * t / delta)
    return (8.0 * d * math.sqrt(math.log(1.0 + t / lam) * lg)
            + 4.0 * math.sqrt(d) * lg + math.sqrt(lam) * b_theta)


@numba.njit(cache=True)
def _beta_tilde(t, d, lam, delta, b_theta, h):
    lg = math.log(4.0 * t * t / delta)
    h2 = h * h
    return (8.0 * h2 * math.sqrt(d * math.log(1.0 + t * h2 / (d * lam)) * lg)
            + 4.0 * h2 * lg + math.sqrt(lam) * b_theta)


@numba.njit(cache=True)
def _variance_estimate(second, first, h):
    """Clamp ``second`` to [0, H^2] and ``first`` to [0, H], then combine."""
    s = min(max(second, 0.0), h * h)
    f = min(max(first, 0.0), h)
    return s - f * f


@numba.njit(cache=True)
def _error_bound(norm_w, norm_w2, b_check, b_tilde, h):
    h2 = h * h
    return min(h2, 2.0 * h * b_check * norm_w) + min(h2, b_tilde * norm_w2)


@numba.njit(cache=True)
def _sigma_bar(var_est, e_t, h, d):
    return math.sqrt(max(h * h / d, var_est + e_t))


def _check_t(t) -> float:
    if not t >= 1:
        raise ValueError(f"t must be >= 1, got {t!r}")
    return float(t)


def beta_hat(t, p: RadiusParams) -> float:
    return _beta_hat(_check_t(t), float(p.d), float(p.lam), float(p.delta), float(p.b_theta))


def beta_check(t, p: RadiusParams) -> float:
    return _beta_check(_check_t(t), float(p.d), float(p.lam), float(p.delta), float(p.b_theta))


def beta_tilde(t, p: RadiusParams) -> float:
    return _beta_tilde(_check_t(t), float(p.d), float(p.lam), float(p.delta), float(p.b_theta), float(p.h))


def variance_estimate(phi_w2, phi_w, theta_tilde, theta_hat, h: float) -> float:
    second = float(np.dot(phi_w2, theta_tilde))
    first = float(np.dot(phi_w, theta_hat))
    return _variance_estimate(second, first, float(h))


def error_bound(phi_w, phi_w2, gram_hat_inv, gram_tilde_inv, t, p: RadiusParams) -> float:
    phi_w = np.asarray(phi_w, dtype=float)
    phi_w2 = np.asarray(phi_w2, dtype=float)
    norm_w = math.sqrt(max(float(phi_w @ gram_hat_inv @ phi_w), 0.0))
    norm_w2 = math.sqrt(max(float(phi_w2 @ gram_tilde_inv @ phi_w2), 0.0))
    return _error_bound(norm_w, norm_w2, beta_check(t, p), beta_tilde(t, p), float(p.h))


def sigma_bar(var_est: float, e_t: float, h: float, d: int) -> float:
    if e_t < 0:
        raise ValueError("e_t must be non-negative")
    return _sigma_bar(float(var_est), float(e_t), float(h), float(d))


@dataclass(frozen=True)
class ConfidenceSet:
    """Ellipsoid ``{theta : ||theta - center||_gram <= radius}``."""

    center: np.ndarray
    gram: np.ndarray
    radius: float
    gram_inv: np.ndarray | None = None

    def __post_init__(self):
        center = np.array(self.center, dtype=float)
        gram = np.array(self.gram, dtype=float)
        if gram.shape != (center.size, center.size):
            raise ValueError("gram shape does not match center")
        if self.radius < 0 or not math.isfinite(self.radius):
            raise ValueError("radius must be finite and non-negative")
        gram_inv = np.linalg.inv(gram) if self.gram_inv is None else np.array(self.gram_inv, dtype=float)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "gram", gram)
        object.__setattr__(self, "gram_inv", gram_inv)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.size

    @classmethod
    def from_accumulator(cls, acc, radius: float) -> "ConfidenceSet":
        return cls(acc.solve(), acc.gram.copy(), radius, acc.gram_inv.copy())

    def distance(self, theta) -> float:
        diff = np.asarray(theta, dtype=float) - self.center
        return math.sqrt(max(float(diff @ self.gram @ diff), 0.0))

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != self.center.shape:
            raise ValueError("dimension mismatch")
        return self.distance(theta) <= self.radius


def contains(cset: ConfidenceSet, theta) -> bool:
    return cset.contains(theta)


@numba.njit(cache=True)
def _radii_table(horizon, d, lam, delta, b, h):
    out = np.empty((3, horizon))
    for i in range(horizon):
        t = float(i + 1)
        out[0, i] = _beta_hat(t, d, lam, delta, b)
        out[1, i] = _beta_check(t, d, lam, delta, b)
        out[2, i] = _beta_tilde(t, d, lam, delta, b, h)
    return out


def radii_over_time(horizon: int, p: RadiusParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(beta_hat_t, beta_check_t, beta_tilde_t)`` for t = 1..T as arrays."""
    out = _radii_table(int(horizon), float(p.d), float(p.lam), float(p.delta), float(p.b_theta), float(p.h))
    return out[0], out[1], out[2]
