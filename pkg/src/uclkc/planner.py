"""Discounted extended value iteration with span clipping.

Two maximizers of ``<phi_V, theta>`` over the frozen confidence set are offered:

``relaxed``
    Ellipsoid intersected with the affine set where every transition row sums
    to one, solved in closed form; the result is then clamped into
    ``[min V, max V]`` (the range of any true expectation) and Q into
    ``[0, 1/(1-gamma)]``.  Without a planning context it reduces to the plain
    ellipsoid maximum ``<phi, c> + r ||phi||_{Sigma^-1}``.
``exact``
    Two-state instances only.  Maximizes over ellipsoid and the full
    probability-simplex constraint set by enumerating KKT active sets.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .confidence import ConfidenceSet
from .mdp import FeatureMap

MODES = ("relaxed", "exact")
MAX_ACTIVE_SETS = 200_000


class EmptyConfidenceSetError(ValueError):
    """The ellipsoid does not meet the set of valid transition cores."""


def clip(v_tilde, h: float) -> np.ndarray:
    """``min(V~, min V~ + H)`` pointwise."""
    v_tilde = np.asarray(v_tilde, dtype=float)
    if h < 0:
        raise ValueError("H must be non-negative")
    return np.minimum(v_tilde, v_tilde.min() + h)


def default_rounds(h: float, horizon: int, dim: int) -> int:
    """``ceil(sqrt(HT/d) log(sqrt(T)/(d sqrt(H))))``, floored at 1."""
    n = math.sqrt(h * horizon / dim) * math.log(math.sqrt(horizon) / (dim * math.sqrt(h)))
    return max(1, math.ceil(n)) if n > 0 else 1


def default_gamma(h: float, horizon: int, dim: int) -> float:
    """``1 - sqrt(d/(HT))``, kept inside [0, 1)."""
    return max(0.0, 1.0 - math.sqrt(dim / (h * horizon)))


@dataclass(frozen=True)
class PlanningContext:
    """Per-environment quantities reused across episodes."""

    features: FeatureMap
    reward: np.ndarray
    theta_p: np.ndarray = field(init=False, repr=False)
    basis: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        reward = np.asarray(self.reward, dtype=float)
        if reward.shape != self.features.phi.shape[:2]:
            raise ValueError("reward shape does not match features")
        theta_p, basis = self.features.affine_hull()
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "theta_p", theta_p)
        object.__setattr__(self, "basis", basis)

    @classmethod
    def from_mdp(cls, mdp) -> "PlanningContext":
        return cls(mdp.features, mdp.reward)


def _restrict(ctx: PlanningContext, cset: ConfidenceSet):
    """Ellipsoid restricted to the affine hull, in coordinates ``theta = theta_p + N u``.

    Returns ``(u0, M, rho2)`` with restricted set ``(u-u0)^T M (u-u0) <= rho2``.
    """
    N, tp = ctx.basis, ctx.theta_p
    m = N.shape[1]
    if m == 0:
        diff = tp - cset.center
        return np.zeros(0), np.zeros((0, 0)), cset.radius**2 - float(diff @ cset.gram @ diff)
    M = N.T @ cset.gram @ N
    M = 0.5 * (M + M.T)
    u0 = -np.linalg.solve(M, N.T @ cset.gram @ (tp - cset.center))
    diff = tp + N @ u0 - cset.center
    rho2 = cset.radius**2 - float(diff @ cset.gram @ diff)
    return u0, M, rho2


class RelaxedMaximizer:
    """Closed-form maximizer over ellipsoid and affine hull, precomputed per episode."""

    def __init__(self, ctx: PlanningContext, cset: ConfidenceSet):
        self.ctx = ctx
        u0, M, rho2 = _restrict(ctx, cset)
        self.empty = rho2 < 0.0
        self.rho = math.sqrt(max(rho2, 0.0))
        N = ctx.basis
        center = ctx.theta_p + N @ u0
        phi = ctx.features.phi
        self.lin = phi @ center
        if N.shape[1]:
            chol = np.linalg.cholesky(M)
            K = np.linalg.solve(chol, N.T)
            self.L = phi @ K.T
        else:
            self.L = np.zeros(phi.shape[:3] + (0,))

    def expectations(self, V) -> np.ndarray:
        """Optimistic ``max <phi_V(s,a), theta>`` for all (s, a), clamped to [min V, max V]."""
        V = np.asarray(V, dtype=float)
        lin = self.lin @ V
        spread = np.einsum("sapm,p->sam", self.L, V)
        val = lin + self.rho * np.sqrt(np.einsum("sam,sam->sa", spread, spread))
        return np.clip(val, V.min(), V.max())


def _null_space(A, tol=1e-12):
    if A.shape[0] == 0:
        return np.eye(A.shape[1])
    _, sv, vt = np.linalg.svd(A)
    rank = int(np.sum(sv > tol * max(1.0, sv[0])))
    return vt[rank:].T


class ExactMaximizer:
    """Exact maximization over ellipsoid and valid cores for two-state MDPs.

    In coordinates ``theta = theta_p + N u`` the validity constraints are
    ``0 <= c_i + h_i u <= 1`` with ``p1_i = c_i + h_i u`` the probability of
    moving to state 1 from the i-th (s, a) pair.  A linear objective ``g u`` is
    maximized by checking every candidate active set: constraints parallel to
    ``g`` become a slab on the objective, and for each subset of the others
    the maximizer on the ellipsoid slice is computed in closed form.
    """

    def __init__(self, ctx: PlanningContext, cset: ConfidenceSet, tol: float = 1e-10):
        phi = ctx.features.phi
        if phi.shape[0] != 2:
            raise ValueError("exact planner mode supports two-state instances only")
        self.ctx, self.tol = ctx, tol
        self.u0, self.M, rho2 = _restrict(ctx, cset)
        self.rho2 = rho2
        N, tp = ctx.basis, ctx.theta_p
        S, A = phi.shape[:2]
        rows = phi[:, :, 1, :].reshape(S * A, -1)
        self.c_all = rows @ tp
        self.h_all = rows @ N
        scale = np.linalg.norm(self.h_all, axis=1)
        self.const = scale <= 1e-14 * max(1.0, float(scale.max(initial=0.0)))
        if np.any(self.c_all[self.const] < -tol) or np.any(self.c_all[self.const] > 1 + tol):
            raise EmptyConfidenceSetError("a fixed transition row is not a distribution")
        if rho2 < -tol * max(1.0, cset.radius**2):
            raise EmptyConfidenceSetError("ellipsoid misses the affine hull of valid cores")
        self.rho2 = max(rho2, 0.0)
        # distinct non-constant rows, each as two half-spaces a u <= b
        free = np.flatnonzero(~self.const)
        self.rows_h = self.h_all[free]
        self.rows_c = self.c_all[free]
        self.Minv = np.linalg.inv(self.M) if self.M.size else self.M
        self._p1_range = None

    # ---- generic linear objective in u-space
    def _max_u(self, g: np.ndarray) -> float:
        """``max g.u`` over the feasible set (``-inf`` when empty)."""
        m = g.size
        if m == 0:
            return 0.0
        gn = np.linalg.norm(g)
        if gn == 0.0:
            return 0.0 if self._feasible_point_exists() else -math.inf
        lo_slab, hi_slab = -math.inf, math.inf
        others_a, others_b = [], []
        for h, c in zip(self.rows_h, self.rows_c):
            hn = np.linalg.norm(h)
            cos = float(h @ g) / (hn * gn)
            if abs(abs(cos) - 1.0) <= 1e-12:
                # 0 <= c + h u <= 1 with h = k g
                k = float(h @ g) / float(g @ g)
                a, b = (-c) / k, (1.0 - c) / k
                lo_slab = max(lo_slab, min(a, b))
                hi_slab = min(hi_slab, max(a, b))
            else:
                others_a.append((h, 1.0 - c))
                others_b.append((-h, c))
        pairs = list(zip(others_a, others_b))
        top = self._max_over(g, pairs)
        bottom = -self._max_over(-g, pairs)
        if top == -math.inf:
            return -math.inf
        if min(hi_slab, top) < max(lo_slab, bottom) - self.tol:
            return -math.inf
        return min(hi_slab, top)

    def _max_over(self, g, pairs) -> float:
        m = g.size
        count = sum(math.comb(len(pairs), k) * 2**k for k in range(min(m, len(pairs)) + 1))
        if count > MAX_ACTIVE_SETS:
            raise ValueError(f"exact planner would enumerate {count} active sets; instance too large")
        all_a = np.array([p[0][0] for p in pairs] + [p[1][0] for p in pairs]).reshape(-1, m)
        all_b = np.array([p[0][1] for p in pairs] + [p[1][1] for p in pairs])
        best = -math.inf
        for k in range(min(m, len(pairs)) + 1):
            for idx in itertools.combinations(range(len(pairs)), k):
                for sides in itertools.product((0, 1), repeat=k):
                    A = np.array([pairs[i][s][0] for i, s in zip(idx, sides)]).reshape(k, m)
                    b = np.array([pairs[i][s][1] for i, s in zip(idx, sides)])
                    u = self._slice_max(g, A, b)
                    if u is None:
                        continue
                    if all_a.size and np.any(all_a @ u - all_b > self.tol):
                        continue
                    best = max(best, float(g @ u))
        return best

    def _slice_max(self, g, A, b):
        """Maximizer of ``g u`` on ``{A u = b}`` within the ellipsoid, or None."""
        m = g.size
        if A.shape[0]:
            if np.linalg.matrix_rank(A, tol=1e-12) < A.shape[0]:
                return None
            uJ = np.linalg.lstsq(A, b, rcond=None)[0]
        else:
            uJ = self.u0.copy()
        Z = _null_space(A) if A.shape[0] else np.eye(m)
        off = uJ - self.u0
        if Z.shape[1] == 0:
            if float(off @ self.M @ off) <= self.rho2 + self.tol:
                return uJ
            return None
        MZ = Z.T @ self.M @ Z
        w0 = -np.linalg.solve(MZ, Z.T @ self.M @ off)
        centre = uJ + Z @ w0
        d = centre - self.u0
        rhoJ2 = self.rho2 - float(d @ self.M @ d)
        if rhoJ2 < -self.tol:
            return None
        gz = Z.T @ g
        MZinv_g = np.linalg.solve(MZ, gz)
        quad = float(gz @ MZinv_g)
        if quad <= 1e-24 * max(1.0, float(g @ g)):
            raise ValueError("degenerate constraint geometry: objective orthogonal to an active slice")
        return centre + Z @ (math.sqrt(max(rhoJ2, 0.0) / quad) * MZinv_g)

    def _feasible_point_exists(self) -> bool:
        if not self.rows_h.size:
            return True
        return self._max_u(self.rows_h[0]) > -math.inf

    # ---- public API
    def maximize(self, objectives) -> np.ndarray:
        """``max <phi, theta>`` over the feasible set for each row of ``objectives`` (shape (k, d))."""
        objectives = np.atleast_2d(np.asarray(objectives, dtype=float))
        N, tp = self.ctx.basis, self.ctx.theta_p
        out = np.empty(objectives.shape[0])
        for i, phi in enumerate(objectives):
            top = self._max_u(N.T @ phi)
            if top == -math.inf:
                raise EmptyConfidenceSetError("confidence set contains no valid transition core")
            out[i] = float(phi @ tp) + top
        return out

    def p1_range(self) -> tuple[np.ndarray, np.ndarray]:
        """Feasible interval of ``P(1|s,a)`` for every (s, a); arrays of shape (S, A)."""
        if self._p1_range is None:
            lo, hi = self.c_all.copy(), self.c_all.copy()
            for i in np.flatnonzero(~self.const):
                top = self._max_u(self.h_all[i])
                bot = self._max_u(-self.h_all[i])
                if top == -math.inf or bot == -math.inf:
                    raise EmptyConfidenceSetError("confidence set contains no valid transition core")
                hi[i] += top
                lo[i] -= bot
            shape = self.ctx.features.phi.shape[:2]
            self._p1_range = (np.clip(lo, 0.0, 1.0).reshape(shape), np.clip(hi, 0.0, 1.0).reshape(shape))
        return self._p1_range

    def expectations(self, V) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        lo, hi = self.p1_range()
        diff = V[1] - V[0]
        return V[0] + np.maximum(diff * hi, diff * lo)


def make_maximizer(mode: str, ctx: PlanningContext, cset: ConfidenceSet):
    if mode == "relaxed":
        return RelaxedMaximizer(ctx, cset)
    if mode == "exact":
        return ExactMaximizer(ctx, cset)
    raise ValueError(f"unknown planner mode {mode!r}; expected one of {MODES}")


def optimistic_expectation(phi_v, cset: ConfidenceSet, mode: str = "relaxed", context=None) -> float:
    """Optimistic ``max <phi_v, theta>`` over the confidence set.

    Relaxed mode without a context is the plain ellipsoid maximum.  With a
    :class:`PlanningContext` the maximum is over the ellipsoid intersected with
    the affine hull of valid cores (relaxed) or with the valid cores (exact).
    """
    phi_v = np.asarray(phi_v, dtype=float)
    if mode not in MODES:
        raise ValueError(f"unknown planner mode {mode!r}")
    if mode == "relaxed" and context is None:
        return float(phi_v @ cset.center) + cset.radius * math.sqrt(max(float(phi_v @ cset.gram_inv @ phi_v), 0.0))
    if context is None:
        raise ValueError("exact mode needs a planning context")
    if mode == "exact":
        return float(ExactMaximizer(context, cset).maximize(phi_v[None])[0])
    u0, M, rho2 = _restrict(context, cset)
    N = context.basis
    centre = context.theta_p + N @ u0
    g = N.T @ phi_v
    bonus = math.sqrt(max(rho2, 0.0) * max(float(g @ np.linalg.solve(M, g)), 0.0)) if g.size else 0.0
    return float(phi_v @ centre) + bonus


@dataclass
class ValueFunctions:
    q: np.ndarray
    v_tilde: np.ndarray
    v: np.ndarray
    w: np.ndarray
    policy: np.ndarray
    gamma: float
    h: float
    rounds_run: int
    q_prev: np.ndarray
    clip_active: bool = False
    set_empty: bool = False
    history: list[np.ndarray] | None = None


def run_value_iteration(ctx: PlanningContext, cset: ConfidenceSet, gamma: float, rounds: int, h: float,
                        mode: str = "relaxed", clip_enabled: bool = True, keep_history: bool = False,
                        maximizer=None) -> ValueFunctions:
    """Run exactly ``rounds`` rounds of clipped optimistic value iteration from ``Q = 1/(1-gamma)``."""
    if rounds < 1:
        raise ValueError("N must be at least 1")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if not h > 0:
        raise ValueError("H must be positive")
    mx = maximizer if maximizer is not None else make_maximizer(mode, ctx, cset)
    r = ctx.reward
    top = 1.0 / (1.0 - gamma)
    q = np.full(r.shape, top)
    v = np.full(r.shape[0], top)
    q_prev = q
    history = [q.copy()] if keep_history else None
    clip_active = False
    for _ in range(rounds):
        q_prev = q
        q = np.clip(r + gamma * mx.expectations(v), 0.0, top)
        v_tilde = q.max(axis=1)
        if clip_enabled:
            v = np.minimum(v_tilde, v_tilde.min() + h)
            clip_active = clip_active or bool(np.any(v < v_tilde))
        else:
            v = v_tilde
        if keep_history:
            history.append(q.copy())
    return ValueFunctions(
        q=q, v_tilde=v_tilde, v=v, w=v - v.min(), policy=q.argmax(axis=1), gamma=gamma, h=h,
        rounds_run=rounds, q_prev=q_prev, clip_active=clip_active,
        set_empty=bool(getattr(mx, "empty", False)), history=history,
    )
