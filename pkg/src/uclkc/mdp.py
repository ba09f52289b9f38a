"""Finite linear mixture MDPs and exact tabular oracles.

Transitions are ``P(s'|s,a) = <phi(s,a,s'), theta*>`` for a known feature
tensor ``phi`` of shape ``(S, A, S, d)``.  Rewards are known and deterministic.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PROB_TOL = 1e-12


class OracleError(RuntimeError):
    """Raised when an oracle fails to converge."""


@dataclass(frozen=True)
class FeatureMap:
    """Feature tensor ``phi[s, a, s', :]`` of shape (S, A, S, d)."""

    phi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim != 4 or phi.shape[0] != phi.shape[2]:
            raise ValueError(f"phi must have shape (S, A, S, d), got {phi.shape}")
        if not np.all(np.isfinite(phi)):
            raise ValueError("feature vectors must be finite")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @property
    def num_states(self) -> int:
        return self.phi.shape[0]

    @property
    def num_actions(self) -> int:
        return self.phi.shape[1]

    @property
    def dim(self) -> int:
        return self.phi.shape[3]

    def phi_f(self, F) -> np.ndarray:
        """``phi_F(s, a) = sum_s' phi(s,a,s') F(s')`` for every (s, a); shape (S, A, d)."""
        return np.einsum("sapd,p->sad", self.phi, np.asarray(F, dtype=float))

    def transitions(self, theta) -> np.ndarray:
        return self.phi @ np.asarray(theta, dtype=float)

    def row_sums(self) -> np.ndarray:
        """``sum_s' phi(s,a,s')`` flattened to (S*A, d): the sum-to-one constraint rows."""
        return self.phi.sum(axis=2).reshape(-1, self.dim)

    def affine_hull(self, tol: float = 1e-10):
        """Particular solution and orthonormal null basis of ``{theta : rows sum to one}``.

        Returns ``(theta_p, basis)`` with ``basis`` of shape (d, m).
        """
        E = self.row_sums()
        ones = np.ones(E.shape[0])
        theta_p, *_ = np.linalg.lstsq(E, ones, rcond=None)
        if np.max(np.abs(E @ theta_p - ones)) > 1e-8:
            raise ValueError("no core vector makes every transition row sum to one")
        _, sv, vt = np.linalg.svd(E)
        rank = int(np.sum(sv > tol * max(1.0, sv[0] if sv.size else 1.0)))
        return theta_p, vt[rank:].T.copy()


@dataclass(frozen=True)
class LinearMixtureMDP:
    features: FeatureMap
    theta_star: np.ndarray
    reward: np.ndarray
    b_theta: float | None = None
    initial_state: int = 0
    P: np.ndarray = field(init=False, repr=False, compare=False)
    cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        theta = np.asarray(self.theta_star, dtype=float).copy()
        reward = np.asarray(self.reward, dtype=float).copy()
        S, A, d = self.features.num_states, self.features.num_actions, self.features.dim
        if theta.shape != (d,):
            raise ValueError(f"theta_star must have shape ({d},), got {theta.shape}")
        if reward.shape != (S, A):
            raise ValueError(f"reward must have shape ({S}, {A}), got {reward.shape}")
        if np.any(reward < 0.0) or np.any(reward > 1.0):
            raise ValueError("rewards must lie in [0, 1]")
        norm = float(np.linalg.norm(theta))
        b_theta = norm if self.b_theta is None else float(self.b_theta)
        if norm > b_theta * (1 + 1e-12) + 1e-15:
            raise ValueError(f"||theta*|| = {norm} exceeds b_theta = {b_theta}")
        if not 0 <= self.initial_state < S:
            raise ValueError("initial_state out of range")
        P = self.features.transitions(theta)
        if P.min() < -PROB_TOL or P.max() > 1 + PROB_TOL:
            raise ValueError("transition probabilities leave [0, 1]")
        if np.max(np.abs(P.sum(axis=2) - 1.0)) > PROB_TOL * max(1, S):
            raise ValueError("transition rows do not sum to one")
        for arr in (theta, reward, P):
            arr.setflags(write=False)
        object.__setattr__(self, "theta_star", theta)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "b_theta", b_theta)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "cdf", self._sampling_cdf())

    @property
    def num_states(self) -> int:
        return self.features.num_states

    @property
    def num_actions(self) -> int:
        return self.features.num_actions

    @property
    def dim(self) -> int:
        return self.features.dim

    def phi_f(self, s: int, a: int, F) -> np.ndarray:
        return np.asarray(F, dtype=float) @ self.features.phi[s, a]

    def transition_prob(self, s: int, a: int, s_next: int) -> float:
        return float(self.P[s, a, s_next])

    def _sampling_cdf(self) -> np.ndarray:
        """Row-wise CDFs with round-off negatives clamped to zero; last entry forced to 1."""
        rows = np.clip(self.P, 0.0, None)
        rows = rows / rows.sum(axis=2, keepdims=True)
        cdf = np.cumsum(rows, axis=2)
        cdf[..., -1] = 1.0
        return cdf

    def sample_next(self, s: int, a: int, rng: np.random.Generator) -> int:
        return next_state(self.cdf[s, a], rng.random())

    def feature_scale(self) -> float:
        """Largest ``||phi_F(s,a)||_2 / H`` over F: S -> [0, H].

        The norm is convex in F, so the max over the box is attained at a 0/1 vertex.
        """
        S = self.num_states
        if S > 16:
            raise ValueError("feature scale check enumerates 2^S subsets; S too large")
        phi = self.features.phi
        worst = 0.0
        for mask in itertools.product((0.0, 1.0), repeat=S):
            F = np.array(mask)
            worst = max(worst, float(np.max(np.linalg.norm(np.einsum("sapd,p->sad", phi, F), axis=2))))
        return worst

    def check_feature_scale(self, tol: float = 1e-9) -> None:
        scale = self.feature_scale()
        if scale > 1.0 + tol:
            raise ValueError(
                f"feature map violates ||phi_F(s,a)||_2 <= H for F in [0,H]^S (ratio {scale:.6g})"
            )

    def to_json(self) -> dict:
        return {
            "type": "linear_mixture_mdp",
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "dim": self.dim,
            "features": self.features.phi.tolist(),
            "theta_star": self.theta_star.tolist(),
            "reward": self.reward.tolist(),
            "b_theta": self.b_theta,
            "initial_state": self.initial_state,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LinearMixtureMDP":
        phi = np.asarray(doc["features"], dtype=float)
        expected = (doc["num_states"], doc["num_actions"], doc["num_states"], doc["dim"])
        if phi.shape != tuple(expected):
            raise ValueError(f"features have shape {phi.shape}, header says {expected}")
        return cls(
            FeatureMap(phi),
            np.asarray(doc["theta_star"], dtype=float),
            np.asarray(doc["reward"], dtype=float),
            b_theta=doc.get("b_theta"),
            initial_state=int(doc.get("initial_state", 0)),
        )


def next_state(cdf_row: np.ndarray, u: float) -> int:
    return int(min(np.searchsorted(cdf_row, u, side="right"), cdf_row.shape[0] - 1))


def phi_f(mdp: LinearMixtureMDP, s: int, a: int, F) -> np.ndarray:
    return mdp.phi_f(s, a, F)


def transition_prob(mdp: LinearMixtureMDP, s: int, a: int, s_next: int) -> float:
    return mdp.transition_prob(s, a, s_next)


def sample_next(mdp: LinearMixtureMDP, s: int, a: int, rng: np.random.Generator) -> int:
    return mdp.sample_next(s, a, rng)


def span(F) -> float:
    F = np.asarray(F, dtype=float)
    return float(F.max() - F.min())


def save_mdp(mdp: LinearMixtureMDP, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_json()))


def load_mdp(path, check_scale: bool = True) -> LinearMixtureMDP:
    mdp = LinearMixtureMDP.from_json(json.loads(Path(path).read_text()))
    if check_scale:
        mdp.check_feature_scale()
    return mdp


# --------------------------------------------------------------------------- oracles


@dataclass(frozen=True)
class OracleSolution:
    j_star: float
    bias: np.ndarray
    q_bias: np.ndarray
    span: float
    residual: float
    iterations: int = 0


def bellman_average_residual(P, r, j, v, q) -> float:
    """Max violation of ``J + q = r + P v`` and ``v = max_a q``."""
    lhs = j + q - r - P @ v
    return float(max(np.max(np.abs(lhs)), np.max(np.abs(v - q.max(axis=1)))))


def _evaluate_policy(P, r, policy, anchor):
    S = P.shape[0]
    idx = np.arange(S)
    P_pi, r_pi = P[idx, policy], r[idx, policy]
    # unknowns (J, h); J + h - P_pi h = r_pi, h[anchor] = 0
    M = np.zeros((S + 1, S + 1))
    M[:S, 0] = 1.0
    M[:S, 1:] = np.eye(S) - P_pi
    M[S, 1 + anchor] = 1.0
    rhs = np.append(r_pi, 0.0)
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    if np.max(np.abs(M @ sol - rhs)) > 1e-9:
        return None
    return sol[0], sol[1:]


def solve_average_oracle(mdp, tol: float = 1e-10, max_iter: int = 1_000_000, anchor: int = 0) -> OracleSolution:
    """Optimal gain and bias by relative value iteration anchored at ``anchor``.

    After the span stopping rule fires, the greedy policy is evaluated exactly
    (with a few policy-improvement steps if needed) to remove the residual
    geometric tail from ``J*`` and ``v*``.
    """
    P, r = _model(mdp)
    if not tol > 0:
        raise ValueError("tol must be positive")
    h = np.zeros(P.shape[0])
    for it in range(1, max_iter + 1):
        Th = (r + P @ h).max(axis=1)
        new = Th - Th[anchor]
        if span(new - h) <= tol:
            h = new
            break
        h = new
    else:
        raise OracleError(
            f"relative value iteration did not converge in {max_iter} iterations; "
            "the MDP may violate the Bellman optimality condition"
        )
    j = float(Th[anchor])
    best = _finish(P, r, j, h)
    policy = (r + P @ h).argmax(axis=1)
    for _ in range(100):
        ev = _evaluate_policy(P, r, policy, anchor)
        if ev is None:
            break
        j_pi, h_pi = ev
        q_pi = r + P @ h_pi
        improved = q_pi.argmax(axis=1)
        keep = q_pi[np.arange(len(policy)), policy] >= q_pi.max(axis=1) - 1e-13
        improved[keep] = policy[keep]
        if np.array_equal(improved, policy):
            cand = _finish(P, r, float(j_pi), h_pi)
            if cand.residual <= best.residual:
                best = cand
            break
        policy = improved
    return OracleSolution(best.j_star, best.bias, best.q_bias, best.span, best.residual, it)


def _finish(P, r, j, h) -> OracleSolution:
    v = h - h.min()
    q = r + P @ v - j
    return OracleSolution(j, v, q, span(v), bellman_average_residual(P, r, j, v, q))


def solve_discounted_oracle(mdp, gamma: float, tol: float = 1e-10):
    """Optimal discounted ``(V*, Q*)`` by value iteration with ``||V - V*||_inf <= tol``."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if not tol > 0:
        raise ValueError("tol must be positive")
    P, r = _model(mdp)
    V = np.zeros(P.shape[0])
    stop = tol * (1 - gamma) / (2 * gamma) if gamma > 0 else math.inf
    while True:
        Q = r + gamma * (P @ V)
        V_new = Q.max(axis=1)
        done = np.max(np.abs(V_new - V)) <= stop
        V = V_new
        if done:
            break
    Q = r + gamma * (P @ V)
    return V, Q


def _model(mdp):
    if isinstance(mdp, LinearMixtureMDP):
        return mdp.P, mdp.reward
    P, r = mdp
    return np.asarray(P, dtype=float), np.asarray(r, dtype=float)


# --------------------------------------------------------------------- test corpora


def tabular_to_linear_mixture(P, reward, initial_state: int = 0) -> LinearMixtureMDP:
    """One-hot embedding: ``phi(s,a,s') = e_{(s,a,s')}`` and ``theta* = vec(P)``."""
    P = np.asarray(P, dtype=float)
    S, A, _ = P.shape
    d = S * A * S
    phi = np.eye(d).reshape(S, A, S, d)
    return LinearMixtureMDP(FeatureMap(phi), P.reshape(-1), np.asarray(reward, dtype=float),
                            initial_state=initial_state)


def random_tabular_mdp(rng: np.random.Generator, num_states: int, num_actions: int) -> LinearMixtureMDP:
    """Dirichlet(1) transition rows and uniform rewards in the one-hot embedding."""
    P = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    P /= P.sum(axis=2, keepdims=True)
    r = rng.random((num_states, num_actions))
    return tabular_to_linear_mixture(P, r)


def random_two_state_mdp(rng: np.random.Generator, num_actions: int = 3, dim: int = 3,
                         margin: float = 0.05) -> LinearMixtureMDP:
    """Random two-state instance shaped like the lower-bound construction.

    ``phi(s,a,1) = (psi_sa, kappa q_sa)``, ``phi(s,a,0) = (-psi_sa, kappa (1 - q_sa))``
    and ``theta* = (w, 1/kappa)``, so ``P(1|s,a) = <psi_sa, w> + q_sa``.
    """
    if dim < 2:
        raise ValueError("dim must be at least 2")
    m = dim - 1
    # ||psi|| = 1/2 and kappa <= 0.8 keep ||phi_F|| <= 1 for F in [0, 1]^2
    kappa = rng.uniform(0.5, 0.8)
    q = rng.uniform(0.2, 0.8, size=(2, num_actions))
    psi = rng.normal(size=(2, num_actions, m))
    psi *= 0.5 / np.linalg.norm(psi, axis=2, keepdims=True)
    w = rng.normal(size=m)
    w *= rng.uniform(0.04, 0.3) / np.linalg.norm(w)
    p1 = psi @ w + q
    if p1.min() < margin or p1.max() > 1 - margin:
        raise AssertionError("unreachable: q in [0.2, 0.8] and |<psi, w>| <= 0.15")
    phi = np.zeros((2, num_actions, 2, dim))
    phi[:, :, 1, :m] = psi
    phi[:, :, 1, m] = kappa * q
    phi[:, :, 0, :m] = -psi
    phi[:, :, 0, m] = kappa * (1 - q)
    theta = np.append(w, 1.0 / kappa)
    reward = rng.random((2, num_actions))
    return LinearMixtureMDP(FeatureMap(phi), theta, reward)
