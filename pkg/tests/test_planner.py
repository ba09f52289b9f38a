from __future__ import annotations

import math

import numpy as np
import pytest

from uclkc import hard_instance as hi
from uclkc.confidence import ConfidenceSet
from uclkc.mdp import random_tabular_mdp, random_two_state_mdp, solve_average_oracle, solve_discounted_oracle
from uclkc.planner import (EmptyConfidenceSetError, ExactMaximizer, PlanningContext, RelaxedMaximizer, clip,
                           default_rounds, optimistic_expectation, run_value_iteration)


def _gram(rng, d, scale=5.0):
    X = rng.normal(size=(3 * d, d))
    return np.eye(d) + scale * X.T @ X


def test_clip_examples():
    np.testing.assert_array_equal(clip([0.0, 10.0], 4.0), [0.0, 4.0])
    v = np.array([1.0, 2.5, 1.7])
    np.testing.assert_array_equal(clip(v, 1.5), v)
    with pytest.raises(ValueError):
        clip(v, -1.0)


def test_relaxed_cauchy_schwarz():
    cset = ConfidenceSet(np.zeros(2), np.eye(2), 1.0)
    assert optimistic_expectation(np.array([3.0, 4.0]), cset) == pytest.approx(5.0, abs=1e-15)


def test_zero_radius_and_zero_vector(rng):
    mdp = random_two_state_mdp(rng, 3, 3)
    ctx = PlanningContext.from_mdp(mdp)
    gram = _gram(rng, 3)
    phi_v = rng.normal(size=3)
    cset = ConfidenceSet(mdp.theta_star, gram, 0.0)
    assert optimistic_expectation(phi_v, cset) == float(phi_v @ mdp.theta_star)
    assert optimistic_expectation(phi_v, cset, "exact", ctx) == pytest.approx(phi_v @ mdp.theta_star, abs=1e-12)
    wide = ConfidenceSet(mdp.theta_star, gram, 2.0)
    for mode in ("relaxed", "exact"):
        assert optimistic_expectation(np.zeros(3), wide, mode, ctx) == 0.0


def test_relaxed_context_matches_hull_restriction(rng):
    # sampled feasible points on the affine hull never beat the closed form
    mdp = random_two_state_mdp(rng, 2, 3)
    ctx = PlanningContext.from_mdp(mdp)
    gram = _gram(rng, 3)
    cset = ConfidenceSet(mdp.theta_star, gram, 0.7)
    phi_v = rng.normal(size=3)
    val = optimistic_expectation(phi_v, cset, "relaxed", ctx)
    assert val <= optimistic_expectation(phi_v, cset) + 1e-12
    N, tp = ctx.basis, ctx.theta_p
    best = -math.inf
    for _ in range(20000):
        z = rng.normal(size=N.shape[1])
        theta = tp + N @ z
        diff = theta - cset.center
        q = diff @ gram @ diff
        if q <= 0.49:
            best = max(best, float(phi_v @ theta))
    assert best <= val + 1e-12


def test_exact_rejects_more_than_two_states(rng):
    mdp = random_tabular_mdp(rng, 3, 2)
    ctx = PlanningContext.from_mdp(mdp)
    cset = ConfidenceSet(mdp.theta_star, np.eye(mdp.dim), 1.0)
    with pytest.raises(ValueError):
        optimistic_expectation(np.ones(mdp.dim), cset, "exact", ctx)
    with pytest.raises(ValueError):
        optimistic_expectation(np.ones(mdp.dim), cset, "bogus", ctx)


def test_exact_empty_set_raises(rng):
    p = hi.HardInstanceParams(dim=2, delta_mdp=0.1, gap_override=0.02)
    mdp = hi.build(p)
    ctx = PlanningContext.from_mdp(mdp)
    far = mdp.theta_star + np.array([0.0, 50.0])
    with pytest.raises(EmptyConfidenceSetError):
        ExactMaximizer(ctx, ConfidenceSet(far, np.eye(2), 1e-3))


def _cvxpy_max(cp, ctx, cset, phi_v):
    phi = ctx.features.phi
    d = phi.shape[-1]
    theta = cp.Variable(d)
    rows = phi.reshape(-1, 2, d)
    chol = np.linalg.cholesky(cset.gram)
    cons = [cp.norm(chol.T @ (theta - cset.center)) <= cset.radius]
    cons += [rows[:, 0, :] @ theta + rows[:, 1, :] @ theta == 1, rows[:, 1, :] @ theta >= 0, rows[:, 1, :] @ theta <= 1]
    prob = cp.Problem(cp.Maximize(phi_v @ theta), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return prob.value


def test_exact_matches_convex_solver():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(7)
    errs, binding = [], 0
    for _ in range(30):
        mdp = random_two_state_mdp(rng, int(rng.integers(2, 4)), int(rng.integers(2, 4)))
        ctx = PlanningContext.from_mdp(mdp)
        d = mdp.dim
        gram = np.eye(d) + 0.2 * _gram(rng, d, 1.0)
        cset = ConfidenceSet(mdp.theta_star, gram, float(rng.uniform(0.5, 6.0)))
        mx = ExactMaximizer(ctx, cset)
        rx = RelaxedMaximizer(ctx, cset)
        for _ in range(3):
            phi_v = rng.normal(size=d)
            exact = float(mx.maximize(phi_v[None])[0])
            ref = _cvxpy_max(cp, ctx, cset, phi_v)
            errs.append(abs(exact - ref))
            relaxed = optimistic_expectation(phi_v, cset, "relaxed", ctx)
            assert exact <= relaxed + 1e-9
            binding += relaxed > exact + 1e-6
        lo, hi_ = mx.p1_range()
        assert np.all(lo <= mdp.P[:, :, 1] + 1e-12) and np.all(mdp.P[:, :, 1] <= hi_ + 1e-12)
    assert max(errs) <= 1e-7
    assert binding >= 3


def test_gamma_zero_gives_rewards(rng):
    mdp = random_two_state_mdp(rng, 3, 3)
    ctx = PlanningContext.from_mdp(mdp)
    cset = ConfidenceSet(mdp.theta_star, _gram(rng, 3), 1.0)
    for mode in ("relaxed", "exact"):
        vf = run_value_iteration(ctx, cset, 0.0, 5, 10.0, mode, keep_history=True)
        for q in vf.history[1:]:
            np.testing.assert_array_equal(q, mdp.reward)


def test_value_function_invariants(rng):
    mdp = random_tabular_mdp(rng, 4, 3)
    ctx = PlanningContext.from_mdp(mdp)
    cset = ConfidenceSet(mdp.theta_star, _gram(rng, mdp.dim), 0.5)
    gamma, H = 0.95, 1.5
    vf = run_value_iteration(ctx, cset, gamma, 40, H, keep_history=True)
    assert vf.rounds_run == 40 and len(vf.history) == 41
    for q in vf.history:
        assert q.min() >= 0.0 and q.max() <= 1 / (1 - gamma)
    assert np.all(vf.v <= vf.v_tilde)
    np.testing.assert_array_equal(vf.v_tilde, vf.q.max(axis=1))
    assert np.ptp(vf.v) <= H + 1e-12
    assert vf.w.min() == 0.0 and vf.w.max() <= H + 1e-12
    np.testing.assert_array_equal(vf.policy, np.argmax(vf.q, axis=1))


def test_tie_break_lowest_index():
    p = hi.HardInstanceParams(dim=3, delta_mdp=0.1, gap_override=0.02)
    mdp = hi.build(p)
    ctx = PlanningContext.from_mdp(mdp)
    cset = ConfidenceSet(mdp.theta_star, np.eye(mdp.dim), 0.0)
    vf = run_value_iteration(ctx, cset, 0.0, 1, 1.0)
    # all rewards tie at gamma = 0
    np.testing.assert_array_equal(vf.policy, [0, 0])


def test_relaxed_true_core_is_optimistic(rng):
    mdp = random_tabular_mdp(rng, 3, 2)
    ctx = PlanningContext.from_mdp(mdp)
    cset = ConfidenceSet(mdp.theta_star, _gram(rng, mdp.dim), 1.0)
    gamma = 0.9
    V, Q = solve_discounted_oracle(mdp, gamma, tol=1e-12)
    vf = run_value_iteration(ctx, cset, gamma, 200, 1 / (1 - gamma), clip_enabled=False)
    assert np.all(vf.q >= Q - 1e-9)
    assert np.all(vf.v >= V - 1e-9)


def test_exact_optimism_with_clip(rng):
    for _ in range(5):
        mdp = random_two_state_mdp(rng, 3, 3)
        ctx = PlanningContext.from_mdp(mdp)
        cset = ConfidenceSet(mdp.theta_star, _gram(rng, 3), 1.5)
        gamma = 0.99
        h = 2 * solve_average_oracle(mdp).span
        V, Q = solve_discounted_oracle(mdp, gamma, tol=1e-12)
        vf = run_value_iteration(ctx, cset, gamma, 60, h, "exact")
        assert np.all(vf.v >= V - 1e-9)
        assert np.all(vf.q >= Q - 1e-9)
        assert np.max(vf.q_prev - vf.q) <= gamma**59 + 1e-9


def test_default_rounds():
    assert default_rounds(10.0, 100_000, 8) == math.ceil(math.sqrt(1e6 / 8) * math.log(math.sqrt(1e5) / (8 * math.sqrt(10))))
    assert default_rounds(100.0, 10, 8) == 1


def test_argument_validation(rng):
    mdp = random_two_state_mdp(rng, 2, 2)
    ctx = PlanningContext.from_mdp(mdp)
    cset = ConfidenceSet(mdp.theta_star, np.eye(2), 1.0)
    for kwargs in ({"gamma": 1.0, "rounds": 1, "h": 1.0}, {"gamma": 0.5, "rounds": 0, "h": 1.0},
                   {"gamma": 0.5, "rounds": 1, "h": 0.0}):
        with pytest.raises(ValueError):
            run_value_iteration(ctx, cset, **kwargs)
