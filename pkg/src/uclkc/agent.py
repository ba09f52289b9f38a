"""The UCLK-C online loop and its no-clipping ablation.

Each episode freezes the confidence ellipsoid, plans with clipped value
iteration, then acts greedily while the determinant of the variance-weighted
Gram matrix has at most doubled.  The per-step work (sampling, variance
estimate, error bound, two rank-one updates) runs in a numba kernel.

Next states are drawn by inverse CDF from uniforms pre-drawn from the run's
seed, so agents sharing a seed see common random numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numba
import numpy as np

from .confidence import (ConfidenceSet, RadiusParams, _beta_check, _beta_tilde, _error_bound, _sigma_bar,
                         _variance_estimate, beta_hat)
from .linalg_stats import REINVERT_EVERY, GramAccumulator, inv_norm, refresh_inverse, sherman_morrison_update
from .mdp import LinearMixtureMDP
from .planner import MODES, PlanningContext, default_gamma, default_rounds, make_maximizer, run_value_iteration

LOG2 = math.log(2.0)


class AgentError(RuntimeError):
    """A planner or estimator failure, tagged with the global step."""


@dataclass(frozen=True)
class AgentConfig:
    h: float
    gamma: float
    n_rounds: int
    lam: float
    b_theta: float
    delta: float
    horizon: int
    planner_mode: str = "relaxed"
    clip_enabled: bool = True
    bonus_scale: float = 1.0
    h_eff: float | None = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("H must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if int(self.n_rounds) != self.n_rounds or self.n_rounds < 1:
            raise ValueError("N must be a positive integer")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("T must be a positive integer")
        if self.planner_mode not in MODES:
            raise ValueError(f"planner_mode must be one of {MODES}")
        if not self.bonus_scale >= 0:
            raise ValueError("bonus_scale must be non-negative")
        if self.h_eff is not None and not self.h_eff > 0:
            raise ValueError("h_eff must be positive")

    @classmethod
    def from_theory(cls, dim: int, h: float, horizon: int, b_theta: float, delta: float, **overrides) -> "AgentConfig":
        """Defaults ``gamma = 1 - sqrt(d/(HT))``, ``lambda = 1/B^2`` and the matching N."""
        kw = dict(
            h=h,
            gamma=default_gamma(h, horizon, dim),
            n_rounds=default_rounds(h, horizon, dim),
            lam=1.0 / b_theta**2,
            b_theta=b_theta,
            delta=delta,
            horizon=horizon,
        )
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    @property
    def weight_scale(self) -> float:
        """H used in the weight floor, clamps, error bound and squared radius."""
        if self.h_eff is not None:
            return self.h_eff
        return self.h if self.clip_enabled else 1.0 / (1.0 - self.gamma)

    def radius_params(self, dim: int) -> RadiusParams:
        return RadiusParams(dim, self.lam, self.delta, self.b_theta, self.weight_scale)


@dataclass
class RegretTrace:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    episode: np.ndarray
    logdet_ratio: np.ndarray
    sigma_bar: np.ndarray
    e_t: np.ndarray
    var_est: np.ndarray
    next_states: np.ndarray
    episode_starts: np.ndarray
    w_tables: np.ndarray
    policies: np.ndarray
    clip_bound: np.ndarray
    end_ratio: np.ndarray
    dist_hat: np.ndarray | None = None
    dist_tilde: np.ndarray | None = None
    seed: int | None = None
    label: str = "uclkc"

    @property
    def horizon(self) -> int:
        return self.rewards.size

    @property
    def num_episodes(self) -> int:
        return self.episode_starts.size


def compute_regret(trace: RegretTrace, j_star: float) -> np.ndarray:
    """``Regret(t) = t J* - sum_{i<=t} r_i`` for t = 1..T."""
    rewards = trace.rewards if isinstance(trace, RegretTrace) else np.asarray(trace, dtype=float)
    t = np.arange(1, rewards.size + 1)
    return t * j_star - np.cumsum(rewards)


def episode_bound(dim: int, horizon: int, h: float, b_theta: float) -> float:
    """``1 + d log2(1 + T H^2 B^2 / d)``."""
    return 1.0 + dim * math.log2(1.0 + horizon * h * h * b_theta * b_theta / dim)


@numba.njit(cache=True)
def _run_episode(t, horizon, state, k, policy, w, phi_w, phi_w2, cdf, reward, uniforms,
                 g_hat, gi_hat, b_hat, g_til, gi_til, b_til, logdets, counts, logdet_k,
                 d, lam, delta, b_theta, h, theta_ref, monitor,
                 o_state, o_action, o_reward, o_episode, o_ratio, o_sigma, o_et, o_var, o_next,
                 o_dist_hat, o_dist_til):
    """Act greedily from global step ``t`` (1-based) until the doubling test fails or t > T.

    ``logdets`` holds (log det Sigma_hat, log det Sigma_tilde); ``counts`` the update
    counters used for periodic re-inversion.  Returns (t, state).
    """
    n_states = cdf.shape[2]
    while t <= horizon:
        ratio = logdets[0] - logdet_k
        if ratio > LOG2:
            break
        a = policy[state]
        u = uniforms[t - 1]
        nxt = n_states - 1
        for j in range(n_states):
            if u < cdf[state, a, j]:
                nxt = j
                break
        theta_hat = gi_hat @ b_hat
        theta_til = gi_til @ b_til
        x_w = phi_w[state, a]
        x_w2 = phi_w2[state, a]
        if monitor:
            diff = theta_ref - theta_hat
            o_dist_hat[t - 1] = math.sqrt(max(diff @ (g_hat @ diff), 0.0))
            diff2 = theta_ref - theta_til
            o_dist_til[t - 1] = math.sqrt(max(diff2 @ (g_til @ diff2), 0.0))
        first = 0.0
        second = 0.0
        for i in range(x_w.shape[0]):
            first += x_w[i] * theta_hat[i]
            second += x_w2[i] * theta_til[i]
        var_est = _variance_estimate(second, first, h)
        tf = float(t)
        e_t = _error_bound(inv_norm(gi_hat, x_w), inv_norm(gi_til, x_w2),
                           _beta_check(tf, d, lam, delta, b_theta),
                           _beta_tilde(tf, d, lam, delta, b_theta, h), h)
        sig = _sigma_bar(var_est, e_t, h, d)
        wn = w[nxt]
        logdets[0] += sherman_morrison_update(g_hat, gi_hat, b_hat, x_w, 1.0 / (sig * sig), wn)
        logdets[1] += sherman_morrison_update(g_til, gi_til, b_til, x_w2, 1.0, wn * wn)
        counts[0] += 1
        counts[1] += 1
        if counts[0] % REINVERT_EVERY == 0:
            refresh_inverse(g_hat, gi_hat)
        if counts[1] % REINVERT_EVERY == 0:
            refresh_inverse(g_til, gi_til)
        o_state[t - 1] = state
        o_action[t - 1] = a
        o_reward[t - 1] = reward[state, a]
        o_episode[t - 1] = k
        o_ratio[t - 1] = ratio
        o_sigma[t - 1] = sig
        o_et[t - 1] = e_t
        o_var[t - 1] = var_est
        o_next[t - 1] = nxt
        state = nxt
        t += 1
    return t, state


def _run(mdp: LinearMixtureMDP, cfg: AgentConfig, seed: int, theta_ref=None, label: str = "uclkc",
         uniforms=None) -> RegretTrace:
    T, d = int(cfg.horizon), mdp.dim
    if uniforms is None:
        uniforms = np.random.default_rng(seed).random(T)
    uniforms = np.ascontiguousarray(uniforms, dtype=float)
    if uniforms.size < T:
        raise ValueError("not enough uniforms for the horizon")
    h = float(cfg.weight_scale)
    ctx = PlanningContext.from_mdp(mdp)
    hat = GramAccumulator.init(d, cfg.lam)
    til = GramAccumulator.init(d, cfg.lam)
    logdets = np.array([hat.log_det, til.log_det])
    counts = np.zeros(2, dtype=np.int64)
    monitor = theta_ref is not None
    ref = np.ascontiguousarray(theta_ref if monitor else np.zeros(d), dtype=float)

    o_state = np.zeros(T, dtype=np.int64)
    o_action = np.zeros(T, dtype=np.int64)
    o_next = np.zeros(T, dtype=np.int64)
    o_episode = np.zeros(T, dtype=np.int64)
    o_reward, o_ratio, o_sigma, o_et, o_var = (np.zeros(T) for _ in range(5))
    o_dh = np.full(T, np.nan)
    o_dt = np.full(T, np.nan)

    starts, w_tables, policies, clip_bound, end_ratio = [], [], [], [], []
    t, state, k = 1, int(mdp.initial_state), 0
    phi = mdp.features.phi
    cdf = np.ascontiguousarray(mdp.cdf)
    reward = np.ascontiguousarray(mdp.reward)
    while t <= T:
        k += 1
        starts.append(t)
        radius = cfg.bonus_scale * beta_hat(t, cfg.radius_params(d))
        cset = ConfidenceSet(hat.gram_inv @ hat.target, hat.gram.copy(), radius, hat.gram_inv.copy())
        try:
            mx = make_maximizer(cfg.planner_mode, ctx, cset)
            vf = run_value_iteration(ctx, cset, cfg.gamma, int(cfg.n_rounds), cfg.h, cfg.planner_mode,
                                     clip_enabled=cfg.clip_enabled, maximizer=mx)
        except Exception as exc:  # noqa: BLE001 - re-raised with the step index
            raise AgentError(f"planning failed at step {t} (episode {k}): {exc}") from exc
        w = vf.w
        w_tables.append(w)
        policies.append(vf.policy)
        clip_bound.append(vf.clip_active)
        phi_w = np.ascontiguousarray(np.einsum("sapd,p->sad", phi, w))
        phi_w2 = np.ascontiguousarray(np.einsum("sapd,p->sad", phi, w * w))
        logdet_k = float(logdets[0])
        t, state = _run_episode(
            t, T, state, k, np.ascontiguousarray(vf.policy, dtype=np.int64), np.ascontiguousarray(w),
            phi_w, phi_w2, cdf, reward, uniforms,
            hat.gram, hat.gram_inv, hat.target, til.gram, til.gram_inv, til.target,
            logdets, counts, logdet_k, float(d), cfg.lam, cfg.delta, cfg.b_theta, h, ref, monitor,
            o_state, o_action, o_reward, o_episode, o_ratio, o_sigma, o_et, o_var, o_next, o_dh, o_dt,
        )
        end_ratio.append(float(logdets[0]) - logdet_k)
        if not np.all(np.isfinite(hat.gram_inv)) or not np.all(np.isfinite(til.gram_inv)):
            raise AgentError(f"estimator produced non-finite values before step {t}")
    return RegretTrace(
        states=o_state, actions=o_action, rewards=o_reward, episode=o_episode, logdet_ratio=o_ratio,
        sigma_bar=o_sigma, e_t=o_et, var_est=o_var, next_states=o_next,
        episode_starts=np.array(starts, dtype=np.int64), w_tables=np.array(w_tables),
        policies=np.array(policies, dtype=np.int64), clip_bound=np.array(clip_bound, dtype=bool),
        end_ratio=np.array(end_ratio),
        dist_hat=o_dh if monitor else None, dist_tilde=o_dt if monitor else None, seed=seed, label=label,
    )


def run_uclkc(mdp: LinearMixtureMDP, cfg: AgentConfig, seed: int, theta_ref=None, uniforms=None) -> RegretTrace:
    """One run of the clipped algorithm.

    ``theta_ref`` (usually the true core) only switches on a diagnostic record of
    its distance to both ridge estimates; it never influences decisions.
    """
    cfg = cfg if cfg.clip_enabled else replace(cfg, clip_enabled=True)
    return _run(mdp, cfg, seed, theta_ref, "uclkc", uniforms)


def run_baseline_noclip(mdp: LinearMixtureMDP, cfg: AgentConfig, seed: int, h_eff: float | None = None,
                        theta_ref=None, uniforms=None) -> RegretTrace:
    """The same loop with clipping disabled.

    ``h_eff`` replaces H in the weight floor, clamps and error bound; it
    defaults to ``1/(1-gamma)``, the span bound that holds without clipping.
    """
    cfg = replace(cfg, clip_enabled=False, h_eff=h_eff if h_eff is not None else cfg.h_eff)
    return _run(mdp, cfg, seed, theta_ref, "noclip", uniforms)
