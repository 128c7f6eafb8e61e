import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marlfocal import policy as pn
from marlfocal import rl
from harness import bandit_run
from oracles import numeric_grad, returns_oracle


def traj_of(rewards, gamma=0.8, states=None, actions=None, logps=None):
    t = rl.Trajectory(gamma)
    for i, r in enumerate(rewards):
        s = np.ones(2) if states is None else states[i]
        a = 0 if actions is None else actions[i]
        lp = 0.0 if logps is None else logps[i]
        t.append(s, a, lp, r)
    return t


def collected(params, rng, n, rewards=None):
    """Sample ``n`` steps from ``params`` and record their log-probs."""
    t = rl.Trajectory(0.8)
    for i in range(n):
        s = rng.normal(size=params.input_dim)
        dist = pn.forward(params, s)
        a = int(rng.integers(params.output_dim))
        t.append(s, a, pn.log_prob(dist, a), rng.normal() if rewards is None else rewards[i])
    return t


def test_returns_examples():
    assert np.allclose(rl.discounted_returns(traj_of([1, 1])), [1.8, 1.0], atol=1e-15)
    assert np.allclose(rl.discounted_returns(traj_of([-1.1, 1, 1])), [0.34, 1.8, 1.0], atol=1e-12)
    r = [0.3, -1.0, 2.0]
    assert np.array_equal(rl.discounted_returns(traj_of(r, gamma=0.0)), r)


def test_empty_trajectory_rejected():
    with pytest.raises(ValueError):
        rl.discounted_returns(rl.Trajectory())


def test_frozen_trajectory_rejects_append():
    t = traj_of([1.0]).freeze()
    with pytest.raises(RuntimeError):
        t.append(np.ones(2), 0, 0.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=40), st.floats(0, 1))
def test_returns_match_double_loop(rewards, gamma):
    got = rl.discounted_returns(traj_of(rewards, gamma))
    assert np.max(np.abs(got - returns_oracle(rewards, gamma))) < 1e-12


def test_total_return_mode():
    cfg = rl.UpdateConfig(returns="total", baseline="none")
    adv = rl.advantages(traj_of([1, 1]), cfg)
    assert np.allclose(adv, [1.8, 1.8])


def test_config_validation():
    with pytest.raises(ValueError):
        rl.UpdateConfig(algorithm="a2c")
    with pytest.raises(ValueError):
        rl.UpdateConfig(algorithm=rl.PPO, clip_eps=0.0)
    with pytest.raises(ValueError):
        rl.UpdateConfig(baseline="critic")


def test_running_baseline_window():
    b = rl.RunningBaseline(window=2)
    assert b(np.array([1.0, 3.0])) == 2.0
    assert b(np.array([4.0])) == 3.0
    assert b(np.array([0.0])) == 2.0  # first batch has left the window


def test_zero_rewards_leave_params_unchanged(rng):
    params = pn.init_params(pn.CATEGORICAL, 3, 4, (5,), rng)
    before = params.copy()
    t = collected(params, rng, 6, rewards=np.zeros(6))
    rl.reinforce_update(params, t, rl.UpdateConfig(baseline="none", lr=0.5))
    assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), before.arrays()))


def test_positive_advantage_raises_log_prob(rng):
    params = pn.init_params(pn.CATEGORICAL, 3, 4, (5,), rng)
    s = rng.normal(size=3)
    t = rl.Trajectory(0.8)
    t.append(s, 2, pn.log_prob(pn.forward(params, s), 2), 1.0)
    before = pn.log_prob(pn.forward(params, s), 2)
    rl.reinforce_update(params, t, rl.UpdateConfig(baseline="none", lr=0.01))
    assert pn.log_prob(pn.forward(params, s), 2) > before


def test_gradient_is_linear_in_steps(rng):
    params = pn.init_params(pn.BERNOULLI, 3, 4, (5,), rng)
    s = rng.normal(size=3)
    a = np.array([1.0, 0.0, 1.0, 1.0])
    one = traj_of([1.0], states=[s], actions=[a])
    two = traj_of([1.0, 1.0], gamma=0.0, states=[s, s], actions=[a, a])
    g1 = rl.policy_gradient(params, one, np.array([1.0]))
    g2 = rl.policy_gradient(params, two, np.array([1.0, 1.0]))
    assert all(np.allclose(2 * x, y, rtol=0, atol=1e-15) for x, y in zip(g1, g2))


def test_ppo_first_epoch_equals_reinforce(rng):
    params = pn.init_params(pn.CATEGORICAL, 3, 4, (5,), rng)
    t = collected(params, rng, 8)
    adv = rl.discounted_returns(t)
    _, _, ratio = rl._ratios(params, t)
    assert np.all(ratio == 1.0)
    ppo = rl.ppo_gradient(params, t, adv, 0.02)
    pg = rl.policy_gradient(params, t, adv)
    assert all(np.allclose(x, y, atol=1e-14) for x, y in zip(ppo, pg))


def test_ppo_saturated_step_has_no_gradient(rng):
    params = pn.init_params(pn.CATEGORICAL, 3, 4, (5,), rng)
    s = rng.normal(size=3)
    lp = pn.log_prob(pn.forward(params, s), 1)
    t = rl.Trajectory(0.8)
    t.append(s, 1, lp - 0.1, 1.0)  # ratio = e^0.1 > 1 + eps with positive advantage
    grads = rl.ppo_gradient(params, t, np.array([1.0]), 0.02)
    assert all(np.all(g == 0) for g in grads)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.5))
def test_ppo_objective_matches_scalar_recomputation(seed, eps):
    rng = np.random.default_rng(seed)
    params = pn.init_params(pn.CATEGORICAL, 3, 4, (5,), rng)
    t = collected(params, rng, 6)
    for step in t.steps:
        step.log_prob_old += rng.normal(scale=0.3)
    adv = rng.normal(size=6)
    want = 0.0
    for step, a in zip(t.steps, adv):
        r = float(np.exp(pn.log_prob(pn.forward(params, step.state), step.action) - step.log_prob_old))
        want += min(r * a, min(max(r, 1 - eps), 1 + eps) * a)
    assert rl.ppo_objective(params, t, adv, eps) == pytest.approx(want, abs=1e-12)


def test_ppo_gradient_matches_finite_differences(rng):
    params = pn.init_params(pn.CATEGORICAL, 3, 4, (5,), rng, scheme="fan-in")
    t = collected(params, rng, 5)
    for step in t.steps:
        step.log_prob_old += rng.normal(scale=0.3)
    adv = rng.normal(size=5)
    analytic = rl.ppo_gradient(params, t, adv, 0.2)
    numeric = numeric_grad(lambda: rl.ppo_objective(params, t, adv, 0.2), params.arrays(), h=1e-6)
    assert all(np.allclose(x, y, atol=1e-6) for x, y in zip(analytic, numeric))


def test_zero_advantage_ppo_leaves_params(rng):
    params = pn.init_params(pn.BERNOULLI, 3, 2, (4,), rng)
    before = params.copy()
    t = traj_of([0.0, 0.0], states=[np.ones(3)] * 2, actions=[np.array([1.0, 0.0])] * 2)
    rl.ppo_update(params, t, rl.UpdateConfig(algorithm=rl.PPO, baseline="none"))
    assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), before.arrays()))


@pytest.mark.parametrize("algorithm", [rl.REINFORCE, rl.PPO])
def test_bandit_learns_best_arm(algorithm):
    wins = sum(bandit_run(algorithm, seed)[-1] > 0.95 for seed in range(5))
    assert wins >= 4
