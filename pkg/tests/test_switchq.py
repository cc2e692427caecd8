import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scripted import Hopper, Throttle
from stitchrl.airl import collect_start_states
from stitchrl.envs import PointHurdle, hurdle_interval
from stitchrl.errors import ConfigError
from stitchrl.nn import Adam, MlpNet
from stitchrl.rng import RngStream, Xoshiro256
from stitchrl.switchq import (STAY, SWITCH, ReplayBuffer, RewardSpec, SwitchConfig, SwitchQNet,
                              double_q_target, epsilon_at, epsilon_greedy, q_learning_target, q_update,
                              resolve_handoff, train_switcher)


def _constant_q(values):
    net = MlpNet([3, 4, 2], "relu")
    net.biases[-1][:] = values
    return SwitchQNet(net, net.copy())


def test_terminal_target_is_reward():
    q = SwitchQNet.init(3, Xoshiro256(0), hidden=8)
    assert double_q_target(q, 0.7, np.ones(3), True, 0.99) == 0.7


def test_bootstrap_arithmetic():
    q = _constant_q([2.0, 2.0])
    assert double_q_target(q, 1.0, np.zeros(3), False, 0.99) == pytest.approx(2.98, abs=1e-12)


def test_double_q_picks_action_online_evaluates_target():
    q = _constant_q([0.0, 1.0])  # online prefers switch
    q.target_net.biases[-1][:] = [5.0, -3.0]
    assert double_q_target(q, 0.0, np.zeros(3), False, 1.0) == -3.0
    assert q_learning_target(q, 0.0, np.zeros(3), False, 1.0) == 5.0


def test_double_q_equals_plain_target_when_nets_match():
    gen = np.random.default_rng(0)
    for i in range(1000):
        q = SwitchQNet.init(4, Xoshiro256(i), hidden=16)
        s2 = gen.normal(size=(5, 4))
        r = gen.normal(size=5)
        term = gen.random(5) < 0.3
        assert np.array_equal(double_q_target(q, r, s2, term, 0.99), q_learning_target(q, r, s2, term, 0.99))


def test_greedy_tie_stays():
    assert _constant_q([0.5, 0.5]).greedy(np.zeros(3)) == STAY


def test_fifo_eviction():
    buf = ReplayBuffer(3, 1)
    for k in range(5):
        buf.push([k], k % 2, float(k), [k], False)
    assert len(buf) == 3
    assert [buf.rewards[i] for i in buf.contents()] == [2.0, 3.0, 4.0]


@settings(max_examples=25, deadline=None)
@given(cap=st.integers(1, 20), n=st.integers(0, 60))
def test_buffer_keeps_newest(cap, n):
    buf = ReplayBuffer(cap, 1)
    for k in range(n):
        buf.push([k], 0, float(k), [k], False)
    assert [buf.rewards[i] for i in buf.contents()] == [float(k) for k in range(max(0, n - cap), n)]


def test_uniform_replay_sampling():
    buf = ReplayBuffer(10, 1)
    for k in range(10):
        buf.push([k], 0, float(k), [k], False)
    draws = buf.sample(100_000, Xoshiro256(1))["rewards"].astype(int)
    counts = np.bincount(draws, minlength=10)
    expected = 10_000
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert abs(chi2 - 9) < 3 * np.sqrt(18)  # chi-square(9): mean 9, sd sqrt(18)
    assert np.all(np.abs(counts - expected) < 3 * np.sqrt(100_000 * 0.1 * 0.9))


def test_empty_buffer_sampling_rejected():
    with pytest.raises(ConfigError):
        ReplayBuffer(4, 1).sample(2, Xoshiro256(0))
    with pytest.raises(ConfigError):
        ReplayBuffer(0, 1)


def test_epsilon_one_is_a_fair_coin():
    q = _constant_q([0.0, 1.0])
    rng = Xoshiro256(2)
    freq = np.mean([epsilon_greedy(q, np.zeros(3), 1.0, rng) for _ in range(10_000)])
    assert abs(freq - 0.5) < 0.02


def test_epsilon_zero_is_greedy():
    q = _constant_q([0.0, 1.0])
    assert all(epsilon_greedy(q, np.zeros(3), 0.0, Xoshiro256(3)) == SWITCH for _ in range(50))
    with pytest.raises(ConfigError):
        epsilon_greedy(q, np.zeros(3), 1.5, Xoshiro256(0))


def test_epsilon_schedule():
    assert epsilon_at(0, 100) == 1.0
    assert epsilon_at(25, 100) == pytest.approx(0.525)
    assert epsilon_at(50, 100) == pytest.approx(0.05)
    assert epsilon_at(99, 100) == pytest.approx(0.05)


def test_reward_spec_signs():
    with pytest.raises(ConfigError):
        RewardSpec(1.0, 0.0)
    with pytest.raises(ConfigError):
        RewardSpec(-1.0, -2.0)


def test_target_sync_period():
    q = SwitchQNet.init(3, Xoshiro256(4), hidden=8, sync_period=3)
    opt = Adam(1e-2)
    gen = np.random.default_rng(0)
    batch = {"obs": gen.normal(size=(8, 3)), "actions": gen.integers(0, 2, 8), "rewards": gen.normal(size=8),
             "next_obs": gen.normal(size=(8, 3)), "terminals": np.zeros(8, bool)}
    frozen = [p.copy() for p in q.target_net.params]
    q_update(q, batch, opt, 0.99)
    q_update(q, batch, opt, 0.99)
    assert all(np.array_equal(a, b) for a, b in zip(frozen, q.target_net.params))
    q_update(q, batch, opt, 0.99)
    assert all(np.array_equal(a, b) for a, b in zip(q.q_net.params, q.target_net.params))


def test_q_regression_reaches_terminal_rewards():
    q = SwitchQNet.init(2, Xoshiro256(5), hidden=32)
    opt = Adam(1e-2)
    obs = np.array([[1.0, 0.0], [0.0, 1.0]])
    batch = {"obs": obs, "actions": np.array([SWITCH, STAY]), "rewards": np.array([1.0, -1.0]),
             "next_obs": obs, "terminals": np.array([True, True])}
    for _ in range(300):
        q_update(q, batch, opt, 0.99)
    assert q.q_values(obs[0])[0, SWITCH] == pytest.approx(1.0, abs=0.05)
    assert q.q_values(obs[1])[0, STAY] == pytest.approx(-1.0, abs=0.05)


def test_resolve_handoff_outcomes():
    env = PointHurdle()
    s = env.reset(0)
    s = type(s)(s.hurdles[0] - 1.0, 0.0, 2.0, 0.0, True, 0, 0, s.hurdles)
    ok, _, _, _ = resolve_handoff(Hopper(), env, "jump", s, Xoshiro256(0), 300)
    assert ok
    ok, final, _, steps = resolve_handoff(Throttle(), env, "jump", s, Xoshiro256(0), 300)
    assert not ok and steps < 20


def test_switcher_training_learns_to_switch_for_a_good_successor():
    env, iv = PointHurdle(), hurdle_interval()
    starts = collect_start_states(Throttle(), env, iv, 20, Xoshiro256(0))
    cfg = SwitchConfig(budget=1500, minibatch_size=16, hidden=16, learning_rate=1e-3, sync_period=20,
                       updates_per_episode=4)
    q, log = train_switcher(starts, Throttle(), Hopper(), env, iv, RewardSpec(), cfg, RngStream(0))
    assert log.to_csv().startswith("episode,switch_step_index,outcome,epsilon,mean_q_stay,mean_q_switch\n")
    entry = env.observe(starts.states[0])
    vals = q.q_values(entry)[0]
    assert q.greedy(entry) == SWITCH and np.all(np.abs(vals) <= 100.0)
