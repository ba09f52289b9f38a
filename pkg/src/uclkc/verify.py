"""Executable invariant suites.

Each suite returns a list of :class:`Check` records (name, pass flag, sample
size, margin).  A positive margin is the distance to the failing side of the
inequality being checked.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import hard_instance as hi
from .agent import AgentConfig, compute_regret, episode_bound, run_baseline_noclip, run_uclkc
from .analysis import azuma_bound, coverage as coverage_report, doubling_boundaries_ok, martingale_sums
from .confidence import ConfidenceSet, RadiusParams, beta_hat
from .harness import pooled_standard_error, seed_streams
from .linalg_stats import GramAccumulator
from .mdp import random_tabular_mdp, random_two_state_mdp, solve_average_oracle, solve_discounted_oracle, span
from .planner import ExactMaximizer, PlanningContext, clip, run_value_iteration

SCOPES = ("contraction", "convergence", "optimism", "episodes", "span", "coverage", "oracle",
          "martingale", "estimator", "figure2")
ALL_SCOPES = SCOPES[:-1]


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    n: int
    margin: float
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"[{status}] {self.name}: n={self.n} margin={self.margin:.6g} ({self.seconds:.1f}s){extra}"


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        checks = fn(*args, **kwargs)
        elapsed = time.perf_counter() - start
        return [Check(c.name, c.passed, c.n, c.margin, c.detail, elapsed) for c in checks]

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ------------------------------------------------------------------ oracle


@_timed
def oracle(dims=(2, 4, 8), deltas=(0.5, 0.1, 1 / 120), seed: int = 0, tol: float = 1e-8) -> list[Check]:
    """Closed-form hard-instance optimum against relative value iteration."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    n = 0
    for d in dims:
        for delta in deltas:
            p = hi.HardInstanceParams(dim=d, delta_mdp=delta, horizon=100_000, scale=3.0).with_random_signs(rng)
            a = hi.analytic_optimal(p)
            o = solve_average_oracle(hi.build(p), tol=1e-10)
            err = max(abs(a.j_star - o.j_star), np.max(np.abs(a.bias - o.bias)),
                      np.max(np.abs(a.q_bias - o.q_bias)), abs(a.span - o.span))
            worst = max(worst, float(err))
            n += 1
    return [Check("oracle: analytic vs relative value iteration", worst <= tol, n, tol - worst,
                  f"max abs error {worst:.3g}")]


# ------------------------------------------------------------- contraction


@_timed
def contraction(pairs: int = 1000, seed: int = 0, slack: float = 1e-12) -> list[Check]:
    """``max(clip(V) - clip(V')) <= max(V - V')`` on random pairs."""
    rng = np.random.default_rng(seed)
    worst = math.inf
    for i in range(pairs):
        S = int(rng.integers(1, 21))
        h = (0.5, 1.0, 5.0)[i % 3]
        scale = rng.choice((1.0, 10.0, 100.0))
        a = rng.normal(scale=scale, size=S)
        b = a + rng.normal(scale=scale * rng.choice((0.01, 1.0)), size=S) if i % 2 else rng.normal(scale=scale, size=S)
        lhs = float(np.max(clip(a, h) - clip(b, h)))
        rhs = float(np.max(a - b))
        worst = min(worst, rhs - lhs)
    return [Check("contraction: clipping is non-expansive in max(V - V')", worst >= -slack, pairs, worst)]


# -------------------------------------------------- two-state planning suites


def _two_state_cases(count: int, seed: int):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n_actions = int(rng.integers(2, 4))
        dim = int(rng.integers(2, 4))
        yield rng, random_two_state_mdp(rng, n_actions, dim)


@_timed
def convergence(instances: int = 20, gammas=(0.5, 0.9, 0.99), rounds: int = 30, seed: int = 1,
                tol: float = 1e-9) -> list[Check]:
    """Geometric convergence of exact-mode value iteration and the fixed-point residual."""
    conv, resid, chain, bounded = math.inf, math.inf, math.inf, math.inf
    n = 0
    for rng, mdp in _two_state_cases(instances, seed):
        ctx = PlanningContext.from_mdp(mdp)
        d = mdp.dim
        gram = _random_gram(rng, d)
        noise = rng.normal(size=d)
        noise *= rng.uniform(0.0, 0.8) / math.sqrt(noise @ gram @ noise)
        cset = ConfidenceSet(mdp.theta_star + noise, gram, rng.uniform(1.0, 3.0))
        sol = solve_average_oracle(mdp)
        h = max(2 * sol.span, 0.05)
        mx = ExactMaximizer(ctx, cset)
        for gamma in gammas:
            vf = run_value_iteration(ctx, cset, gamma, rounds, h, "exact", keep_history=True, maximizer=mx)
            conv = min(conv, gamma ** (rounds - 1) + tol - float(np.max(vf.q_prev - vf.q)))
            target = ctx.reward + gamma * mx.expectations(vf.v)
            resid = min(resid, gamma**rounds + tol - float(np.max(vf.q - target)))
            hist = vf.history
            for k in range(2, len(hist)):
                prev = float(np.max(hist[k - 2] - hist[k - 1]))
                cur = float(np.max(hist[k - 1] - hist[k]))
                chain = min(chain, gamma * prev + tol - cur)
            top = 1.0 / (1.0 - gamma)
            bounded = min(bounded, min(top + tol - float(np.max(q)) for q in hist),
                          min(float(np.min(q)) + tol for q in hist))
            n += 1
    return [
        Check("convergence: max(Q^(N-1) - Q^(N)) <= gamma^(N-1)", conv >= 0, n, conv),
        Check("convergence: Q_k <= r + gamma max<phi_V, theta> + gamma^N", resid >= 0, n, resid),
        Check("convergence: contraction chain across rounds", chain >= 0, n, chain),
        Check("convergence: intermediates in [0, 1/(1-gamma)]", bounded >= 0, n, bounded),
    ]


def _random_gram(rng, d):
    X = rng.normal(size=(3 * d, d))
    return np.eye(d) + X.T @ X * rng.uniform(0.5, 20.0)


@_timed
def optimism(instances: int = 20, gammas=(0.5, 0.9, 0.99), rounds: int = 30, seed: int = 1,
             tol: float = 1e-9, radius_t: int = 1000, delta: float = 0.1) -> list[Check]:
    """Exact-mode planning from a set containing the true core dominates the optimal values."""
    v_margin, q_margin, top_margin = math.inf, math.inf, math.inf
    n = 0
    for rng, mdp in _two_state_cases(instances, seed):
        ctx = PlanningContext.from_mdp(mdp)
        d = mdp.dim
        b = mdp.b_theta
        radius = beta_hat(radius_t, RadiusParams(d, 1.0 / b**2, delta, b, 1.0))
        gram = _random_gram(rng, d)
        cset = ConfidenceSet(mdp.theta_star, gram, radius)
        sol = solve_average_oracle(mdp)
        h = max(2 * sol.span, 1e-6)
        mx = ExactMaximizer(ctx, cset)
        for gamma in gammas:
            V, Q = solve_discounted_oracle(mdp, gamma, tol=1e-12)
            vf = run_value_iteration(ctx, cset, gamma, rounds, h, "exact", keep_history=True, maximizer=mx)
            v_margin = min(v_margin, float(np.min(vf.v - V)) + tol)
            q_margin = min(q_margin, float(np.min(vf.q - Q)) + tol)
            top_margin = min(top_margin, min(1.0 / (1.0 - gamma) - float(np.max(q)) for q in vf.history) + tol)
            n += 1
    return [
        Check("optimism: V_k >= V*", v_margin >= 0, n, v_margin),
        Check("optimism: Q_k >= Q*", q_margin >= 0, n, q_margin),
        Check("optimism: intermediates <= 1/(1-gamma)", top_margin >= 0, n, top_margin),
    ]


# ------------------------------------------------------------------ span


@_timed
def span_bridge(instances: int = 50, gammas=(0.9, 0.99), seed: int = 2, tol: float = 1e-6) -> list[Check]:
    """Discounted and average-reward optima are within the bias span of each other."""
    rng = np.random.default_rng(seed)
    gap_margin, span_margin = math.inf, math.inf
    n = 0
    for _ in range(instances):
        S, A = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        mdp = random_tabular_mdp(rng, S, A)
        sol = solve_average_oracle(mdp, tol=1e-10)
        for gamma in gammas:
            V, _ = solve_discounted_oracle(mdp, gamma, tol=1e-10)
            gap = float(np.max(np.abs(sol.j_star - (1 - gamma) * V)))
            gap_margin = min(gap_margin, (1 - gamma) * sol.span + tol - gap)
            span_margin = min(span_margin, 2 * sol.span + tol - span(V))
            n += 1
    return [
        Check("span: |J* - (1-gamma) V*| <= (1-gamma) sp(v*)", gap_margin >= 0, n, gap_margin),
        Check("span: sp(V*) <= 2 sp(v*)", span_margin >= 0, n, span_margin),
    ]


# ---------------------------------------------------------- agent-run suites


def hard_setup(seed: int, dim: int, horizon: int, delta_mdp: float, delta: float, scale: float = 3.0,
               delta_conf: float | None = None, **overrides):
    """Hard instance with a per-seed sign vector and the theory-default agent config."""
    params = hi.HardInstanceParams(dim=dim, delta_mdp=delta_mdp, horizon=horizon, scale=scale,
                                   delta_conf=delta_conf).with_random_signs(seed_streams(seed)[0])
    mdp = hi.build(params)
    sol = hi.analytic_optimal(params)
    cfg = AgentConfig.from_theory(dim, 2 * sol.span, horizon, mdp.b_theta, delta, **overrides)
    return params, mdp, sol, cfg


def _uniforms(seed, horizon):
    return seed_streams(seed)[1].random(horizon)


@_timed
def episodes(runs: int = 20, dim: int = 8, horizon: int = 100_000, delta_mdp: float = 1 / 120,
             delta: float = 0.1, seed0: int = 0) -> list[Check]:
    """Episode count bound and determinant-doubling discipline."""
    bound_margin, discipline = math.inf, True
    worst_k = 0
    for i in range(runs):
        seed = seed0 + i
        _, mdp, _, cfg = hard_setup(seed, dim, horizon, delta_mdp, delta)
        tr = run_uclkc(mdp, cfg, seed, uniforms=_uniforms(seed, horizon))
        bound = episode_bound(dim, horizon, cfg.h, cfg.b_theta)
        bound_margin = min(bound_margin, bound - tr.num_episodes)
        worst_k = max(worst_k, tr.num_episodes)
        discipline = discipline and doubling_boundaries_ok(tr)
    return [
        Check("episodes: K_T <= 1 + d log2(1 + T H^2 B^2 / d)", bound_margin >= 0, runs, bound_margin,
              f"max K_T {worst_k}"),
        Check("episodes: boundaries follow the determinant-doubling test", discipline, runs, 0.0),
    ]


@_timed
def coverage(runs: int = 50, dim: int = 4, horizon: int = 20_000, delta: float = 0.1, seed0: int = 0,
             tol: float = 1e-9) -> list[Check]:
    """Ellipsoid coverage of the true core and validity of the variance error bound."""
    covered, violations, aux_steps = 0, 0, 0
    slack = -math.inf
    for i in range(runs):
        seed = seed0 + i
        _, mdp, _, cfg = hard_setup(seed, dim, horizon, delta, delta)
        tr = run_uclkc(mdp, cfg, seed, theta_ref=mdp.theta_star, uniforms=_uniforms(seed, horizon))
        rep = coverage_report(tr, mdp, cfg, tol)
        covered += rep.covered_all
        violations += rep.variance_violations
        aux_steps += rep.aux_steps
        slack = max(slack, rep.max_variance_slack)
    frac = covered / runs
    need = 1 - 3 * delta
    return [
        Check("coverage: fraction of runs with theta* in C_t for all t", frac >= need, runs, frac - need,
              f"fraction {frac:.3f}"),
        Check("coverage: |Var W - Var_est| <= E_t on auxiliary events", violations == 0, aux_steps, -slack,
              f"{violations} violations"),
    ]


@_timed
def martingale(runs: int = 100, dim: int = 4, horizon: int = 10_000, delta: float = 0.1, seed0: int = 0) -> list[Check]:
    """Azuma-scale bounds on the first- and second-moment martingale sums."""
    ok1 = ok2 = 0
    m1 = m2 = math.inf
    for i in range(runs):
        seed = seed0 + i
        _, mdp, _, cfg = hard_setup(seed, dim, horizon, delta, delta)
        tr = run_uclkc(mdp, cfg, seed, uniforms=_uniforms(seed, horizon))
        s1, s2 = martingale_sums(tr, mdp)
        b1 = azuma_bound(cfg.h, horizon, delta)
        b2 = azuma_bound(cfg.h**2, horizon, delta)
        ok1 += abs(s1) <= b1
        ok2 += s2 <= b2
        m1 = min(m1, (b1 - abs(s1)) / b1)
        m2 = min(m2, (b2 - s2) / b2)
    need = math.ceil((1 - delta) * runs)
    return [
        Check("martingale: |sum (P W - W(s'))| <= H sqrt(2T log(1/delta))", ok1 >= need, runs, ok1 - need,
              f"{ok1}/{runs} runs within bound; worst relative slack {m1:.3g}"),
        Check("martingale: sum (P W^2 - W^2(s')) <= H^2 sqrt(2T log(1/delta))", ok2 >= need, runs, ok2 - need,
              f"{ok2}/{runs} runs within bound; worst relative slack {m2:.3g}"),
    ]


@_timed
def estimator(updates: int = 100_000, dim: int = 8, seed: int = 3, inv_tol: float = 1e-8,
              logdet_tol: float = 1e-6) -> list[Check]:
    """Rank-one accumulator against dense refactorization."""
    rng = np.random.default_rng(seed)
    acc = GramAccumulator.init(dim, 1.0)
    xs = rng.normal(size=(updates, dim)) * rng.uniform(0.0, 10.0, size=(updates, 1))
    ws = rng.uniform(1e-4, 1.0, size=updates)
    ys = rng.normal(size=updates)
    worst_inv, worst_ld, worst_id = 0.0, 0.0, 0.0
    eye = np.eye(dim)
    for i in range(updates):
        acc.rank_one_update(xs[i], ws[i], ys[i])
        if (i + 1) % 5000 == 0 or i + 1 == updates:
            dense = np.linalg.inv(acc.gram)
            worst_inv = max(worst_inv, float(np.max(np.abs(acc.gram_inv - dense))))
            worst_id = max(worst_id, float(np.max(np.abs(acc.gram @ acc.gram_inv - eye))))
            _, ld = np.linalg.slogdet(acc.gram)
            worst_ld = max(worst_ld, abs(acc.log_det - ld) / abs(ld))
    return [
        Check("estimator: inverse max-abs error", worst_inv <= inv_tol, updates, inv_tol - worst_inv,
              f"{worst_inv:.3g}"),
        Check("estimator: Sigma Sigma^-1 - I max-abs", worst_id <= inv_tol, updates, inv_tol - worst_id,
              f"{worst_id:.3g}"),
        Check("estimator: log-det relative error", worst_ld <= logdet_tol, updates, logdet_tol - worst_ld,
              f"{worst_ld:.3g}"),
    ]


@_timed
def figure2(seeds: int = 10, dim: int = 8, horizon: int = 100_000, delta_mdp: float = 1 / 120,
            delta: float = 0.1, scale: float = 3.0, bonus_scale: float = 1.0) -> list[Check]:
    """Clipped agent against the no-clipping ablation on the hard instance."""
    finals = {"uclkc": [], "noclip": []}
    curves = {"uclkc": [], "noclip": []}
    for seed in range(seeds):
        _, mdp, sol, cfg = hard_setup(seed, dim, horizon, delta_mdp, delta, scale, bonus_scale=bonus_scale)
        u = _uniforms(seed, horizon)
        for name, runner in (("uclkc", run_uclkc), ("noclip", run_baseline_noclip)):
            reg = compute_regret(runner(mdp, cfg, seed, uniforms=u), sol.j_star)
            finals[name].append(reg[-1])
            curves[name].append(reg)
    a, b = np.array(finals["uclkc"]), np.array(finals["noclip"])
    gap = float(b.mean() - a.mean())
    se = pooled_standard_error(a, b)
    half = horizon // 2
    sub = {}
    for name, cs in curves.items():
        mean = np.mean(cs, axis=0)
        first = mean[half - 1] / half
        second = (mean[-1] - mean[half - 1]) / (horizon - half)
        sub[name] = (first, second)
    checks = [Check("figure2: mean final regret gap exceeds one pooled SE", gap > se, seeds, gap - se,
                    f"uclkc {a.mean():.1f}, noclip {b.mean():.1f}, pooled SE {se:.1f}")]
    for name, (first, second) in sub.items():
        checks.append(Check(f"figure2: {name} regret rate falls in the second half", second < first, seeds,
                            first - second, f"first-half rate {first:.4g}, second-half rate {second:.4g}"))
    return checks


SUITES = {
    "contraction": contraction,
    "convergence": convergence,
    "optimism": optimism,
    "episodes": episodes,
    "span": span_bridge,
    "coverage": coverage,
    "oracle": oracle,
    "martingale": martingale,
    "estimator": estimator,
    "figure2": figure2,
}


def verify_invariants(scope: str = "all") -> list[Check]:
    if scope == "all":
        names = ALL_SCOPES
    elif scope in SUITES:
        names = (scope,)
    else:
        raise ValueError(f"unknown scope {scope!r}; expected one of {('all',) + SCOPES}")
    checks = []
    for name in names:
        checks.extend(SUITES[name]())
    return checks
