from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from maas.core import cumulative_feasible
from maas.dqn import (
    DqnHyperparams,
    DqnScenario,
    EnvOrder,
    OrderEnv,
    ReplayBuffer,
    RewardConfig,
    base_price,
    baseline,
    epsilon_schedule,
    episode_seed,
    greedy_policy,
    make_random_policy,
    period_plan,
    price,
    pricing_utility,
    reward,
    run_episode,
    td_targets,
    train_dqn,
)
from maas.errors import ConfigError, InvalidUtilityError
from maas.neural import Mlp


def env_with(orders, caps=(4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0), seed=0, **kw):
    """An env at period 0 with hand-placed visible orders and capacities."""
    env = OrderEnv(DqnScenario(**kw), episode_seed(seed, 0, 0))
    env.waiting = list(orders)
    env.caps = list(caps)
    env.jobs = []
    return env


def test_price_examples():
    assert price(100.0, 1.0) == pytest.approx(150.0)
    assert price(100.0, 0.25) == pytest.approx(200.0)
    assert base_price(10.0, 10.0) == 100.0
    with pytest.raises(InvalidUtilityError):
        price(100.0, 0.0)


def test_pricing_utility_floor_and_order():
    assert pricing_utility(1, False) == 0.01
    assert pricing_utility(7, True) > pricing_utility(3, True) > pricing_utility(3, False)


def test_reward_cases():
    cfg = RewardConfig(waste_coefficient=2.0)
    assert reward("valid", cfg, rate=150.0 / 5.0) == 30.0
    assert reward("invalid", RewardConfig()) == -50.0
    assert reward("wait", cfg, wasted_hours=6.0) == -12.0
    with pytest.raises(ValueError):
        reward("other", cfg)


def test_config_validation():
    with pytest.raises(ConfigError):
        RewardConfig(gamma=0.0)
    with pytest.raises(ConfigError):
        RewardConfig(invalid_penalty=-1.0)
    with pytest.raises(ConfigError):
        DqnScenario(due_pmf=(0.5, 0.5, 0.0, 0.0, 0.0, 0.1))


def test_valid_selection_debits_capacity():
    o = EnvOrder(100, 30.0, 3.0, 0, 2, price=90.0)
    env = env_with([o, EnvOrder(101, 10.0, 1.0, 0, 3, price=20.0)])
    before = sum(env.free_capacity())
    tr = env.step(0)
    assert tr.kind == "valid" and tr.reward == 30.0 and not tr.period_advanced
    assert env.t == 0 and o not in env.slots
    assert sum(env.free_capacity()) == pytest.approx(before - 3.0)
    assert env.revenue == 90.0


def test_infeasible_order_is_penalized_and_closes_period():
    # due next period with 2 h available, needs 3 h
    env = env_with([EnvOrder(100, 30.0, 3.0, 0, 1, price=90.0)], caps=(2.0,) * 7)
    assert not env.valid_mask()[0]
    tr = env.step(0)
    assert tr.kind == "invalid" and tr.reward == -50.0 and tr.period_advanced
    assert env.t == 1


def test_empty_slot_is_invalid():
    env = env_with([])
    tr = env.step(1)
    assert tr.kind == "invalid" and tr.reward == -50.0


def test_wait_penalizes_idle_hours():
    env = env_with([], caps=(6.0,) * 7)
    tr = env.step(env.sc.slots)
    assert tr.kind == "wait" and tr.reward == -5.0 * 6.0


def test_wait_at_horizon_is_terminal():
    env = OrderEnv(DqnScenario(reward=RewardConfig(horizon=3)), episode_seed(0, 0, 0))
    kinds = []
    while not env.done:
        tr = env.step(env.sc.slots)
        kinds.append(tr.terminal)
    assert kinds == [False, False, True]
    with pytest.raises(RuntimeError):
        env.step(0)


def test_capacity_conserved_over_random_episodes():
    sc = DqnScenario()
    rng = np.random.default_rng(0)
    for e in range(5):
        env = OrderEnv(sc, episode_seed(7, 0, e))
        while not env.done:
            env.step(int(rng.integers(sc.n_actions)))
            assert cumulative_feasible(env.caps, env._relative_jobs())


def test_state_shape_and_padding():
    env = env_with([EnvOrder(100, 30.0, 3.0, 2, 4, price=90.0)])
    s = env.state()
    assert s.shape == (env.sc.state_size,) and np.all(np.isfinite(s))
    # second and third slots are empty and zero-filled
    from maas.dqn import SLOT_FEATURES
    assert np.all(s[SLOT_FEATURES : 3 * SLOT_FEATURES] == 0)
    assert s[0] == 1.0 and s[6 + 2] == 1.0


def test_epsilon_schedule():
    assert epsilon_schedule(0, 500) == 1.0
    assert epsilon_schedule(400, 500) == pytest.approx(0.01)
    assert epsilon_schedule(499, 500) == 0.01
    eps = [epsilon_schedule(e, 500) for e in range(500)]
    assert all(b <= a for a, b in zip(eps, eps[1:]))


def test_terminal_targets_skip_bootstrap():
    net = Mlp((2, 2), [np.eye(2)], [np.zeros(2)])
    r = np.array([1.0, 1.0])
    s2 = np.array([[3.0, 5.0], [3.0, 5.0]])
    y = td_targets(net, r, s2, np.array([True, False]), 0.9)
    assert y[0] == 1.0 and y[1] == pytest.approx(1.0 + 0.9 * 5.0)


def test_greedy_takes_highest_rate():
    env = env_with([EnvOrder(100, 10.0, 1.0, 0, 5, price=25.0), EnvOrder(101, 10.0, 1.0, 0, 5, price=30.0)])
    assert greedy_policy(env) == 1
    assert greedy_policy(env_with([])) == env.sc.slots


def test_random_policy_only_picks_valid_orders():
    env = env_with([EnvOrder(100, 30.0, 9.0, 0, 1, price=90.0), EnvOrder(101, 10.0, 1.0, 0, 5, price=30.0)])
    policy = make_random_policy(np.random.default_rng(0))
    assert all(policy(env) == 1 for _ in range(20))


def _period_value(env, picks):
    return sum(env.slots[k].price for k in picks)


def test_period_plan_beats_greedy_within_a_period():
    rng = np.random.default_rng(3)
    for trial in range(40):
        orders = [EnvOrder(100 + k, 10.0, float(rng.integers(1, 7)), 0, int(rng.integers(1, 8)),
                           price=float(rng.uniform(20, 400))) for k in range(3)]
        caps = tuple(float(c) for c in rng.integers(0, 8, size=7))
        env = env_with(orders, caps=caps)
        plan = period_plan(env)
        assert cumulative_feasible(env.caps, [(env.slots[k].hours, env.slots[k].due) for k in plan])
        # greedy's period: keep taking the best valid rate
        genv = env_with(orders, caps=caps)
        taken = 0.0
        while True:
            a = greedy_policy(genv)
            if a == genv.sc.slots:
                break
            taken += genv.slots[a].price
            genv.step(a)
        assert _period_value(env, plan) >= taken - 1e-9


def test_replay_buffer_ring():
    buf = ReplayBuffer(3, 2)
    with pytest.raises(ValueError):
        buf.sample(1, np.random.default_rng(0))
    for k in range(5):
        buf.push(np.full(2, k), k % 2, float(k), np.zeros(2), False)
    assert buf.size == 3 and sorted(buf.r.tolist()) == [2.0, 3.0, 4.0]
    s, a, r, s2, term = buf.sample(3, np.random.default_rng(1))
    assert s.shape == (3, 2) and set(r.tolist()) <= {2.0, 3.0, 4.0}
    with pytest.raises(ConfigError):
        ReplayBuffer(0, 2)


def test_episodes_share_the_arrival_stream():
    sc = DqnScenario()
    a = run_episode(OrderEnv(sc, episode_seed(1, 1, 0)), greedy_policy)
    b = run_episode(OrderEnv(sc, episode_seed(1, 1, 0)), make_random_policy(np.random.default_rng(0)))
    assert a.arrived == b.arrived == sc.orders_per_period * sc.horizon


def test_training_is_deterministic():
    sc = DqnScenario(reward=RewardConfig(horizon=5))
    hp = DqnHyperparams(episodes=6, batch_size=8, buffer_size=64, target_every=2)
    net1, curve1 = train_dqn(sc, hp, seed=4)
    net2, curve2 = train_dqn(sc, hp, seed=4)
    assert curve1 == curve2
    assert all(np.array_equal(a, b) for a, b in zip(net1.params, net2.params))
    assert curve1[0].epsilon == 1.0


def test_baselines_run_and_reject_unknown():
    sc = replace(DqnScenario(), reward=RewardConfig(horizon=5))
    for name in ("greedy", "random", "rolling_horizon"):
        stats = baseline(name, sc, 0, episodes=2)
        assert len(stats) == 2 and all(s.revenue >= 0 for s in stats)
    assert len(baseline("tabular_q", sc, 0, episodes=2, tabular_episodes=5)) == 2
    with pytest.raises(ConfigError):
        baseline("oracle", sc, 0)
    assert not math.isnan(baseline("greedy", sc, 0, episodes=1)[0].acceptance_rate)
