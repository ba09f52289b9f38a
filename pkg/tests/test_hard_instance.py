from __future__ import annotations

import math

import numpy as np
import pytest

from uclkc import hard_instance as hi
from uclkc.mdp import bellman_average_residual, solve_average_oracle


def test_gap_formula_and_scale():
    p1 = hi.HardInstanceParams(dim=8, delta_mdp=0.1, horizon=10_000, delta_conf=0.1, scale=1.0)
    expected = 7 / (45 * math.sqrt(2 * 10_000 * math.log(2) / (5 * 0.1)))
    assert p1.gap == pytest.approx(expected, rel=1e-14)
    p3 = hi.HardInstanceParams(dim=8, delta_mdp=0.1, horizon=10_000, delta_conf=0.1, scale=3.0)
    assert p3.gap == pytest.approx(3 * expected, rel=1e-14)
    assert p1.alpha == pytest.approx(math.sqrt(p1.gap / (7 * (1 + p1.gap))))
    assert p1.beta == pytest.approx(math.sqrt(1 / (1 + p1.gap)))


def test_actions_lexicographic():
    acts = hi.action_set(3)
    np.testing.assert_array_equal(acts, [[-1, -1], [-1, 1], [1, -1], [1, 1]])


@pytest.mark.parametrize("dim", [2, 3, 5])
def test_up_probability_every_action(dim, rng):
    p = hi.HardInstanceParams(dim=dim, delta_mdp=0.1, horizon=5000).with_random_signs(rng)
    mdp = hi.build(p)
    acts = hi.action_set(dim)
    np.testing.assert_allclose(mdp.P[0, :, 1], 0.1 + acts @ p.theta, atol=1e-15)
    np.testing.assert_allclose(mdp.P[1, :, 0], 0.1, atol=1e-15)
    np.testing.assert_array_equal(mdp.reward[0], 0.0)
    np.testing.assert_array_equal(mdp.reward[1], 1.0)


def test_core_norm_bound():
    # Delta <= delta/3 holds exactly when T >= (d-1)^2 / (90 log 2 delta)
    for d, delta in [(2, 0.5), (4, 0.1), (8, 1 / 120)]:
        T = math.ceil((d - 1) ** 2 / (90 * math.log(2) * delta))
        p = hi.HardInstanceParams(dim=d, delta_mdp=delta, horizon=T, scale=1.0)
        assert p.gap <= delta / 3
        assert np.linalg.norm(p.core) <= 1 + delta / 3
        assert np.linalg.norm(p.core) == pytest.approx(1 + p.gap, rel=1e-12)
        if T > 1:
            q = hi.HardInstanceParams(dim=d, delta_mdp=delta, horizon=T - 1, scale=1.0)
            assert q.gap > delta / 3


def test_published_threshold_is_too_small():
    # 16 (d-1)^2 / (2025 delta) is about half the exact threshold
    d, delta = 8, 1 / 120
    T = math.ceil(16 * (d - 1) ** 2 / (2025 * delta))
    p = hi.HardInstanceParams(dim=d, delta_mdp=delta, horizon=T, scale=1.0)
    assert p.gap > delta / 3
    assert np.linalg.norm(p.core) > 1 + delta / 3


def test_best_action_d2():
    p = hi.HardInstanceParams(dim=2, delta_mdp=0.1, sign_vector=(1,))
    acts = hi.action_set(2)
    adv = acts @ p.theta
    assert p.best_action == 1
    assert int(np.argmax(adv)) == 1 and np.sum(adv == adv.max()) == 1
    assert adv[1] == pytest.approx(p.gap)


def test_build_rejects():
    with pytest.raises(ValueError):
        hi.HardInstanceParams(dim=1)
    with pytest.raises(ValueError):
        hi.HardInstanceParams(dim=3, sign_vector=(1, 0))
    with pytest.raises(ValueError):
        hi.build(hi.HardInstanceParams(dim=2, delta_mdp=0.1, gap_override=0.2))


def test_analytic_values_known_gap():
    p = hi.HardInstanceParams(dim=2, delta_mdp=0.1, gap_override=0.02)
    sol = hi.analytic_optimal(p)
    assert sol.j_star == pytest.approx(6 / 11, abs=1e-15)
    assert sol.span == pytest.approx(50 / 11, abs=1e-13)
    assert sol.q_bias[0, p.best_action] == pytest.approx(0.0, abs=1e-15)
    assert sol.residual <= 1e-12


def test_span_bracket():
    p = hi.HardInstanceParams(dim=4, delta_mdp=0.1, horizon=10_000, scale=1.0)
    assert p.gap <= p.delta_mdp / 3
    span = hi.analytic_optimal(p).span
    assert 1 / (3 * p.delta_mdp) <= span <= 1 / (2 * p.delta_mdp)


@pytest.mark.parametrize("dim", [2, 4, 8])
@pytest.mark.parametrize("delta", [0.5, 0.1, 1 / 120])
def test_analytic_matches_oracle(dim, delta, rng):
    p = hi.HardInstanceParams(dim=dim, delta_mdp=delta, horizon=100_000).with_random_signs(rng)
    a = hi.analytic_optimal(p)
    o = solve_average_oracle(hi.build(p))
    assert abs(a.j_star - o.j_star) <= 1e-8
    assert np.max(np.abs(a.bias - o.bias)) <= 1e-8
    assert np.max(np.abs(a.q_bias - o.q_bias)) <= 1e-8
    assert abs(a.span - o.span) <= 1e-8
    mdp = hi.build(p)
    assert bellman_average_residual(mdp.P, mdp.reward, a.j_star, a.bias, a.q_bias) <= 1e-12


def test_optimal_policy_long_run_regret():
    """Regret per step of the optimal policy vanishes within a CLT band."""
    p = hi.HardInstanceParams(dim=2, delta_mdp=0.1, gap_override=0.02, sign_vector=(1,))
    mdp = hi.build(p)
    rng = np.random.default_rng(5)
    n = 200_000
    u = rng.random(n)
    s, total = 0, 0.0
    cdf = mdp.cdf
    for i in range(n):
        a = p.best_action
        total += mdp.reward[s, a]
        s = int(u[i] >= cdf[s, a, 0])
    j = hi.analytic_optimal(p).j_star
    pi = hi.stationary_distribution(p)
    # two-state chain: asymptotic variance of the reward sum per step
    lam = 1 - (p.delta_mdp + p.gap) - p.delta_mdp
    sigma2 = pi[0] * pi[1] * (1 + lam) / (1 - lam)
    assert abs(total / n - j) <= 3 * math.sqrt(sigma2 / n)


def test_params_json_round_trip(tmp_path):
    p = hi.HardInstanceParams(dim=3, delta_mdp=0.2, horizon=500, sign_vector=(-1, 1))
    back = hi.HardInstanceParams.from_json(p.to_json())
    assert back == p
    path = tmp_path / "p.json"
    path.write_text('{"dim": 3, "delta_mdp": 0.2}')
    assert hi.load_params(path).dim == 3
    assert hi.load_params('{"dim": 4}').dim == 4
    with pytest.raises(ValueError):
        hi.HardInstanceParams.from_json({"dim": 3, "bogus": 1})
