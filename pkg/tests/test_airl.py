import numpy as np
import pytest

from oracles import max_gradient_error
from scripted import Hopper, Throttle
from stitchrl.airl import (AirlConfig, DiscriminatorNet, ExpertBuffer, StartStateSet, airl_reward,
                           collect_boundary_data, collect_expert, collect_start_states, disc_forward,
                           disc_loss_and_grads, disc_update, log_sigmoid, sigmoid, train_transition_policy)
from stitchrl.envs import PointHurdle, hurdle_interval
from stitchrl.errors import CollectionError, ConfigError
from stitchrl.nn import Adam
from stitchrl.ppo import PpoConfig
from stitchrl.rng import RngStream, Xoshiro256


def _disc(seed=0, obs_dim=5, act_dim=2):
    return DiscriminatorNet.init(obs_dim, act_dim, 0.99, Xoshiro256(seed))


def _batch(gen, n, shift=0.0):
    return {"obs": gen.normal(size=(n, 5)) + shift, "actions": gen.normal(size=(n, 2)) + shift,
            "next_obs": gen.normal(size=(n, 5)) + shift, "log_pi": gen.normal(size=n)}


def test_sigmoid_is_stable():
    x = np.array([-800.0, -1.0, 0.0, 1.0, 800.0])
    s = sigmoid(x)
    assert np.all(np.isfinite(s)) and s[2] == 0.5 and s[0] == 0.0 and s[-1] == 1.0
    assert np.allclose(log_sigmoid(np.array([-800.0, 0.0])), [-800.0, np.log(0.5)])


def test_d_is_half_when_f_equals_log_pi():
    gen = np.random.default_rng(0)
    d = _disc()
    b = _batch(gen, 32)
    log_pi = d.f(b["obs"], b["actions"], b["next_obs"])
    assert np.all(disc_forward(d, b["obs"], b["actions"], b["next_obs"], log_pi) == 0.5)


def test_reward_is_log_odds():
    gen = np.random.default_rng(1)
    d = _disc(1)
    b = _batch(gen, 200)
    dv = disc_forward(d, b["obs"], b["actions"], b["next_obs"], b["log_pi"])
    r = airl_reward(d, b["obs"], b["actions"], b["next_obs"], b["log_pi"], clamp=np.inf)
    f = d.f(b["obs"], b["actions"], b["next_obs"])
    assert np.max(np.abs(np.log(dv) - np.log1p(-dv) - r)) < 1e-9
    assert np.max(np.abs(r - (f - b["log_pi"]))) < 1e-12


def test_reward_clamp():
    d = _disc()
    obs, act = np.zeros((2, 5)), np.zeros((2, 2))
    r = airl_reward(d, obs, act, obs, np.array([1e3, -1e3]))
    assert list(r) == [-20.0, 20.0]


def test_identical_batches_at_equilibrium_give_zero_gradient():
    gen = np.random.default_rng(2)
    d = _disc(2)
    b = _batch(gen, 16)
    b["log_pi"] = d.f(b["obs"], b["actions"], b["next_obs"])
    loss, grads, _, _ = disc_loss_and_grads(d, b, dict(b))
    assert loss == pytest.approx(np.log(2.0))
    assert all(np.all(g == 0.0) for g in grads)
    before = [p.copy() for p in d.params]
    disc_update(d, b, dict(b), Adam(3e-4))
    assert all(np.array_equal(a, p) for a, p in zip(before, d.params))


def test_swapping_labels_flips_gradient():
    gen = np.random.default_rng(3)
    d = _disc(3)
    e, g = _batch(gen, 8), _batch(gen, 8, 1.0)
    for batch in (e, g):
        batch["log_pi"] = d.f(batch["obs"], batch["actions"], batch["next_obs"])
    _, ga, _, _ = disc_loss_and_grads(d, e, g)
    _, gb, _, _ = disc_loss_and_grads(d, g, e)
    assert all(np.allclose(x, -y, atol=1e-15) for x, y in zip(ga, gb))


def test_disc_loss_gradient_matches_finite_differences():
    gen = np.random.default_rng(4)
    d = _disc(4)
    e, g = _batch(gen, 6), _batch(gen, 6, 0.5)
    _, grads, _, _ = disc_loss_and_grads(d, e, g)
    err = max_gradient_error(lambda: disc_loss_and_grads(d, e, g)[0], d.params, grads, gen, per_array=8)
    assert err < 1e-4


def test_discriminator_separates_clusters():
    gen = np.random.default_rng(5)
    d = _disc(5)
    opt = Adam(1e-3)
    first = last = None
    for i in range(50):
        e, g = _batch(gen, 64, 2.0), _batch(gen, 64, -2.0)
        e["log_pi"] = np.zeros(64)
        g["log_pi"] = np.zeros(64)
        stats = disc_update(d, e, g, opt)
        first = first or stats
        last = stats
    assert last["mean_D_expert"] > first["mean_D_expert"]
    assert last["mean_D_generator"] < first["mean_D_generator"]


def test_empty_minibatch_rejected():
    d = _disc()
    empty = {"obs": np.zeros((0, 5)), "actions": np.zeros((0, 2)), "next_obs": np.zeros((0, 5)),
             "log_pi": np.zeros(0)}
    with pytest.raises(ConfigError):
        disc_update(d, empty, _batch(np.random.default_rng(0), 4), Adam())


def test_discrete_actions_are_one_hot():
    d = DiscriminatorNet.init(3, 2, 0.9, Xoshiro256(0), hidden=8, discrete=True)
    obs = np.eye(3)
    f = d.f(obs, np.array([0, 1, 1]), obs)
    assert f.shape == (3,)


def test_normalizer_uses_expert_statistics():
    gen = np.random.default_rng(6)
    d = _disc()
    obs, acts = gen.normal(3.0, 2.0, size=(500, 5)), gen.normal(size=(500, 2))
    obs[:, 0] = 1.0  # constant column keeps unit scale
    d.fit_normalizer(obs, acts)
    assert np.allclose(d.obs_mean[1:], 3.0, atol=0.3) and d.obs_std[0] == 1.0


def test_start_states_are_first_interval_entries():
    env, iv = PointHurdle(), hurdle_interval()
    starts = collect_start_states(Throttle(), env, iv, 20, Xoshiro256(0))
    assert len(starts) == 20
    for s in starts.states:
        assert env.in_interval(s, iv) and s.passed == 0
        h = s.hurdles[0]
        assert s.x - 2.0 * 0.05 < h - iv.lo  # the step before was still outside


def test_expert_sources_lie_in_interval():
    env, iv = PointHurdle(), hurdle_interval()
    buf = collect_expert(Hopper(), env, iv, 50, Xoshiro256(1))
    assert len(buf) == 50 and buf.source == "jump"
    d = buf.obs[:, 3]
    assert np.all((d >= iv.hi - 1e-12) & (d <= iv.lo + 1e-12)) and np.all(buf.obs[:, 0] == 0.0)


def test_collection_gives_up_when_interval_unreachable():
    class Idle(Throttle):
        def act(self, obs, rng=None, deterministic=False):
            return np.zeros(2)

    with pytest.raises(CollectionError):
        collect_start_states(Idle(), PointHurdle(), hurdle_interval(), 5, Xoshiro256(0), max_len=20)


def test_boundary_collection_is_deterministic():
    env, iv = PointHurdle(), hurdle_interval()
    a = collect_boundary_data(Throttle(), Hopper(), env, iv, 5, 30, RngStream(3))
    b = collect_boundary_data(Throttle(), Hopper(), env, iv, 5, 30, RngStream(3))
    assert a[0].states == b[0].states and np.array_equal(a[1].obs, b[1].obs)


def test_short_transition_training_runs_and_logs():
    env, iv = PointHurdle(), hurdle_interval()
    starts, expert = collect_boundary_data(Throttle(), Hopper(), env, iv, 10, 200, RngStream(0))
    cfg = AirlConfig(iterations=3, steps_per_iter=128, disc_steps=2)
    gen, disc, log = train_transition_policy(starts, expert, env, iv, PpoConfig(epochs=1), cfg, RngStream(1))
    csv = log.to_csv().splitlines()
    assert csv[0] == "iteration,mean_D_expert,mean_D_generator,mean_airl_reward,generator_episode_fail_rate"
    assert len(csv) == 4
    with pytest.raises(ConfigError):
        train_transition_policy(StartStateSet([]), expert, env, iv, PpoConfig(), cfg, RngStream(1))


def test_expert_buffer_sampling():
    buf = ExpertBuffer(np.arange(10.0)[:, None], np.zeros((10, 1)), np.zeros((10, 1)), np.zeros(10, np.int8))
    s = buf.sample(1000, Xoshiro256(0))
    assert set(s["obs"][:, 0]) == set(range(10))
