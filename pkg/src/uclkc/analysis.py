"""Post-hoc trace diagnostics that use the true core.

Nothing here feeds back into the agent; these functions replay a finished
trace against the environment's exact transition kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .agent import AgentConfig, RegretTrace
from .confidence import radii_over_time
from .mdp import LinearMixtureMDP


@dataclass(frozen=True)
class CoverageReport:
    covered_all: bool
    first_miss: int | None
    aux_steps: int
    variance_violations: int
    max_variance_slack: float


def step_tables(trace: RegretTrace) -> np.ndarray:
    """W_k in force at every step; shape (T, S)."""
    return trace.w_tables[trace.episode - 1]


def coverage(trace: RegretTrace, mdp: LinearMixtureMDP, cfg: AgentConfig, tol: float = 1e-9) -> CoverageReport:
    """Check ``theta* in C_hat_t`` at every step and the variance error bound on auxiliary events.

    Requires a trace recorded with ``theta_ref = theta*``.
    """
    if trace.dist_hat is None:
        raise ValueError("trace was recorded without a reference core")
    b_hat, b_check, b_tilde = radii_over_time(trace.horizon, cfg.radius_params(mdp.dim))
    miss = np.flatnonzero(trace.dist_hat > b_hat)
    aux = (trace.dist_hat <= b_check) & (trace.dist_tilde <= b_tilde)
    true_var = exact_variance(trace, mdp)
    slack = np.abs(true_var - trace.var_est) - trace.e_t
    bad = aux & (slack > tol)
    return CoverageReport(
        covered_all=miss.size == 0,
        first_miss=int(miss[0]) + 1 if miss.size else None,
        aux_steps=int(aux.sum()),
        variance_violations=int(bad.sum()),
        max_variance_slack=float(slack[aux].max()) if aux.any() else -math.inf,
    )


def exact_variance(trace: RegretTrace, mdp: LinearMixtureMDP) -> np.ndarray:
    """``[V W_k](s_t, a_t)`` by enumeration over next states."""
    W = step_tables(trace)
    rows = mdp.P[trace.states, trace.actions]
    first = np.einsum("tp,tp->t", rows, W)
    second = np.einsum("tp,tp->t", rows, W * W)
    return second - first**2


def martingale_sums(trace: RegretTrace, mdp: LinearMixtureMDP) -> tuple[float, float]:
    """``sum_t ([P W_k](s_t,a_t) - W_k(s_{t+1}))`` and the same for ``W_k^2``."""
    W = step_tables(trace)
    rows = mdp.P[trace.states, trace.actions]
    idx = np.arange(trace.horizon)
    nxt = W[idx, trace.next_states]
    first = np.einsum("tp,tp->t", rows, W) - nxt
    second = np.einsum("tp,tp->t", rows, W * W) - nxt**2
    return float(first.sum()), float(second.sum())


def azuma_bound(scale: float, horizon: int, delta: float) -> float:
    """``scale * sqrt(2 T log(1/delta))``."""
    return scale * math.sqrt(2.0 * horizon * math.log(1.0 / delta))


def doubling_boundaries_ok(trace: RegretTrace) -> bool:
    """Episodes start exactly at the first step whose log-det ratio would exceed log 2."""
    starts = trace.episode_starts
    if starts.size == 0 or starts[0] != 1 or np.any(np.diff(starts) <= 0):
        return False
    if np.any(trace.logdet_ratio > math.log(2.0)):
        return False
    if np.any(trace.end_ratio[:-1] <= math.log(2.0)):
        return False
    expected = np.searchsorted(starts, np.arange(1, trace.horizon + 1), side="right")
    return bool(np.array_equal(expected, trace.episode))
