"""Adversarial IRL for transition policies.

The discriminator scores a transition with ``f(s, a, s') = g(s, a) +
gamma * h(s') - h(s)`` and classifies it against the generator's own density:
``D = exp(f) / (exp(f) + pi(a|s)) = sigmoid(f - log pi(a|s))``. The generator
is rewarded with ``log D - log(1 - D)``, which collapses to ``f - log pi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .envs.base import Env, Signal, TransitionInterval
from .errors import CollectionError, ConfigError, NonFiniteError
from .nn import Adam, CategoricalPolicy, GaussianPolicy, MlpNet, clip_grad_norm
from .ppo import PpoConfig, PpoLearner, RolloutRunner, compute_gae, make_value_net, ppo_update
from .rng import RngStream, Xoshiro256

REWARD_CLAMP = 20.0


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


@dataclass
class DiscriminatorNet:
    g_net: MlpNet
    h_net: MlpNet
    gamma: float
    obs_mean: np.ndarray
    obs_std: np.ndarray
    act_mean: np.ndarray
    act_std: np.ndarray
    n_actions: int = 0  # > 0 means one-hot encoded discrete actions

    @classmethod
    def init(cls, obs_dim: int, act_dim: int, gamma: float, rng: Xoshiro256, hidden: int = 100,
             discrete: bool = False) -> "DiscriminatorNet":
        g_net = MlpNet.init([obs_dim + act_dim, hidden, hidden, 1], "relu", rng)
        h_net = MlpNet.init([obs_dim, hidden, hidden, 1], "relu", rng)
        return cls(g_net, h_net, gamma, np.zeros(obs_dim), np.ones(obs_dim), np.zeros(act_dim),
                   np.ones(act_dim), act_dim if discrete else 0)

    def fit_normalizer(self, obs: np.ndarray, actions: np.ndarray) -> None:
        """Fix input normalization to the expert data statistics."""
        self.obs_mean = obs.mean(axis=0)
        self.obs_std = _safe_std(obs.std(axis=0))
        acts = self._encode_actions(actions)
        self.act_mean = acts.mean(axis=0)
        self.act_std = _safe_std(acts.std(axis=0))

    def _encode_actions(self, actions) -> np.ndarray:
        if self.n_actions:
            a = np.asarray(actions, dtype=np.int64).reshape(-1)
            out = np.zeros((len(a), self.n_actions))
            out[np.arange(len(a)), a] = 1.0
            return out
        return np.atleast_2d(np.asarray(actions, dtype=np.float64))

    def _inputs(self, obs, actions, next_obs):
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        next_obs = np.atleast_2d(np.asarray(next_obs, dtype=np.float64))
        acts = self._encode_actions(actions)
        s = (obs - self.obs_mean) / self.obs_std
        s2 = (next_obs - self.obs_mean) / self.obs_std
        a = (acts - self.act_mean) / self.act_std
        return np.concatenate([s, a], axis=1), s, s2

    def f(self, obs, actions, next_obs) -> np.ndarray:
        sa, s, s2 = self._inputs(obs, actions, next_obs)
        g = self.g_net.forward(sa)[:, 0]
        return g + self.gamma * self.h_net.forward(s2)[:, 0] - self.h_net.forward(s)[:, 0]

    @property
    def params(self) -> list[np.ndarray]:
        return [*self.g_net.params, *self.h_net.params]

    def logit_grads(self, obs, actions, next_obs, dlogit) -> list[np.ndarray]:
        """Parameter gradients of ``sum_i dlogit[i] * f_i``."""
        sa, s, s2 = self._inputs(obs, actions, next_obs)
        dl = np.asarray(dlogit, dtype=np.float64)[:, None]
        g_grads = self.g_net.backward(sa, dl)
        h_next = self.h_net.backward(s2, self.gamma * dl)
        h_now = self.h_net.backward(s, -dl)
        return [*g_grads, *(a + b for a, b in zip(h_next, h_now))]


def _safe_std(std: np.ndarray) -> np.ndarray:
    return np.where(std < 1e-6, 1.0, std)


def disc_forward(d: DiscriminatorNet, s, a, s_next, log_pi):
    """D in (0, 1), evaluated as ``sigmoid(f - log_pi)``."""
    out = sigmoid(d.f(s, a, s_next) - np.asarray(log_pi, dtype=np.float64))
    return out if out.size > 1 else float(out[0])


def airl_reward(d: DiscriminatorNet, s, a, s_next, log_pi, clamp: float = REWARD_CLAMP):
    """``log D - log(1 - D) = f - log_pi``, clamped to ``[-clamp, clamp]``."""
    r = np.clip(d.f(s, a, s_next) - np.asarray(log_pi, dtype=np.float64), -clamp, clamp)
    return r if r.size > 1 else float(r[0])


def disc_loss_and_grads(d: DiscriminatorNet, expert: dict, generator: dict):
    """Binary cross-entropy (expert = 1, generator = 0), averaged over both classes."""
    x_e = d.f(expert["obs"], expert["actions"], expert["next_obs"]) - expert["log_pi"]
    x_g = d.f(generator["obs"], generator["actions"], generator["next_obs"]) - generator["log_pi"]
    n = len(x_e) + len(x_g)
    loss = -(np.sum(log_sigmoid(x_e)) + np.sum(log_sigmoid(-x_g))) / n
    ge = d.logit_grads(expert["obs"], expert["actions"], expert["next_obs"], (sigmoid(x_e) - 1.0) / n)
    gg = d.logit_grads(generator["obs"], generator["actions"], generator["next_obs"], sigmoid(x_g) / n)
    grads = [a + b for a, b in zip(ge, gg)]
    return float(loss), grads, sigmoid(x_e), sigmoid(x_g)


def disc_update(d: DiscriminatorNet, expert: dict, generator: dict, opt: Adam,
                max_grad_norm: float = 0.0) -> dict:
    if len(expert["obs"]) == 0 or len(generator["obs"]) == 0:
        raise ConfigError("discriminator minibatches must be non-empty")
    loss, grads, d_e, d_g = disc_loss_and_grads(d, expert, generator)
    if not math.isfinite(loss):
        raise NonFiniteError(f"non-finite discriminator loss {loss}")
    if max_grad_norm > 0:
        clip_grad_norm(grads, max_grad_norm)
    opt.step(d.params, grads)
    return {"loss": loss, "mean_D_expert": float(np.mean(d_e)), "mean_D_generator": float(np.mean(d_g))}


# -- boundary data ---------------------------------------------------------


@dataclass
class ExpertBuffer:
    obs: np.ndarray
    actions: np.ndarray
    next_obs: np.ndarray
    signals: np.ndarray
    source: str = ""

    def __len__(self) -> int:
        return len(self.obs)

    def sample(self, n: int, rng: Xoshiro256) -> dict:
        idx = rng.integers(len(self), size=n)
        return {"obs": self.obs[idx], "actions": self.actions[idx], "next_obs": self.next_obs[idx]}


@dataclass
class StartStateSet:
    states: list
    source: str = ""

    def __len__(self) -> int:
        return len(self.states)


def collect_start_states(policy_a, env: Env, interval: TransitionInterval, n_starts: int,
                         rng: Xoshiro256, max_len: int = 1000, max_attempts: int | None = None) -> StartStateSet:
    """Run ``policy_a`` on the full task and keep the first state inside the interval."""
    states = []
    attempts = 0
    max_attempts = max_attempts or 20 * n_starts
    while len(states) < n_starts:
        if attempts >= max_attempts:
            raise CollectionError(f"policy {interval.from_subtask!r} reached the interval in only "
                                  f"{len(states)} of {attempts} episodes")
        attempts += 1
        state = env.reset(rng.next_u64())
        if env.in_interval(state, interval):
            states.append(state)
            continue
        for _ in range(max_len):
            res = env.step(state, policy_a.act(env.observe(state), rng))
            if res.done:
                break
            state = res.next_state
            if env.in_interval(state, interval):
                states.append(state)
                break
    return StartStateSet(states, interval.from_subtask)


def collect_expert(policy_b, env: Env, interval: TransitionInterval, n_expert: int, rng: Xoshiro256,
                   max_len: int = 1000, max_attempts: int | None = None) -> ExpertBuffer:
    """Transitions of ``policy_b`` on its own sub-environment whose source state is in the interval."""
    sub_env = env.subtask_env(interval.to_subtask)
    obs_l, act_l, nobs_l, sig_l = [], [], [], []
    attempts = 0
    max_attempts = max_attempts or max(100, 20 * n_expert)
    while len(obs_l) < n_expert:
        if attempts >= max_attempts:
            raise CollectionError(f"policy {interval.to_subtask!r} produced only {len(obs_l)} "
                                  f"in-interval transitions in {attempts} episodes")
        attempts += 1
        state = sub_env.reset(rng.next_u64())
        for _ in range(max_len):
            obs = sub_env.observe(state)
            action, _ = policy_b.sample(obs, rng)
            res = sub_env.step(state, action)
            if sub_env.in_interval(state, interval):
                obs_l.append(obs)
                act_l.append(action)
                nobs_l.append(res.observation)
                sig_l.append(int(res.signal))
                if len(obs_l) >= n_expert:
                    break
            if res.done:
                break
            state = res.next_state
    discrete = getattr(sub_env, "discrete", False)
    return ExpertBuffer(np.asarray(obs_l, dtype=np.float64),
                        np.asarray(act_l, dtype=np.int64 if discrete else np.float64),
                        np.asarray(nobs_l, dtype=np.float64), np.asarray(sig_l, dtype=np.int8),
                        interval.to_subtask)


def collect_boundary_data(policy_a, policy_b, env: Env, interval: TransitionInterval, n_starts: int,
                          n_expert: int, rng_stream: RngStream, max_len: int = 1000):
    starts = collect_start_states(policy_a, env, interval, n_starts, rng_stream.derive("starts"), max_len)
    expert = collect_expert(policy_b, env, interval, n_expert, rng_stream.derive("expert"), max_len)
    return starts, expert


# -- training ----------------------------------------------------------------


@dataclass
class AirlConfig:
    iterations: int = 200
    steps_per_iter: int = 2048
    disc_lr: float = 3e-4
    disc_hidden: int = 100
    disc_minibatch: int = 64
    disc_steps: int = 32
    reward_clamp: float = REWARD_CLAMP
    rollout_cap: int = 100
    policy_hidden: int = 32
    lr_anneal: bool = True  # generator lr decays linearly to zero over the iterations


@dataclass
class AirlLog:
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["iteration,mean_D_expert,mean_D_generator,mean_airl_reward,generator_episode_fail_rate"]
        for r in self.rows:
            lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in r))
        return "\n".join(lines) + "\n"

    @property
    def last(self):
        return self.rows[-1] if self.rows else None


def make_generator(env: Env, hidden: int, rng: Xoshiro256):
    if getattr(env, "discrete", False):
        return CategoricalPolicy.init(env.obs_dim, env.act_dim, (hidden, hidden), "tanh", rng)
    return GaussianPolicy.init(env.obs_dim, env.act_dim, (hidden, hidden), "tanh", rng)


def train_transition_policy(starts: StartStateSet, expert: ExpertBuffer, env: Env,
                            interval: TransitionInterval, ppo: PpoConfig, cfg: AirlConfig,
                            rng_stream: RngStream, generator=None, callback=None):
    """Alternate generator rollouts from the start states with one discriminator
    fit and one PPO step on the AIRL reward, ``cfg.iterations`` times.

    Returns ``(generator, discriminator, log)``.
    """
    if len(starts) == 0 or len(expert) == 0:
        raise ConfigError("transition training needs non-empty start states and expert data")
    init_rng = rng_stream.derive("init")
    if generator is None:
        generator = make_generator(env, cfg.policy_hidden, init_rng)
    value_net = make_value_net(env.obs_dim, (cfg.policy_hidden, cfg.policy_hidden), "tanh", init_rng)
    discrete = getattr(env, "discrete", False)
    disc = DiscriminatorNet.init(env.obs_dim, env.act_dim, ppo.gamma, init_rng, cfg.disc_hidden, discrete)
    disc.fit_normalizer(expert.obs, expert.actions)
    disc_opt = Adam(cfg.disc_lr)
    learner = PpoLearner(generator, value_net, ppo)

    def reset_fn(r: Xoshiro256):
        state = starts.states[r.integer(len(starts))]
        env.set_state(state)
        return state

    def stop_fn(res, length):
        return length >= cfg.rollout_cap or not env.in_interval(res.next_state, interval)

    runner = RolloutRunner(env, rng_stream.derive("rollout"), reset_fn, stop_fn)
    disc_rng = rng_stream.derive("disc")
    update_rng = rng_stream.derive("update")
    log = AirlLog()
    for it in range(cfg.iterations):
        runner.state = None  # every iteration starts fresh episodes from the start set
        batch = runner.collect(generator, cfg.steps_per_iter, value_net)
        gen_all = {"obs": batch.obs, "actions": batch.actions, "next_obs": batch.next_obs,
                   "log_pi": batch.log_probs}
        for _ in range(cfg.disc_steps):
            e = expert.sample(cfg.disc_minibatch, disc_rng)
            e["log_pi"] = generator.log_prob(e["obs"], e["actions"])
            idx = disc_rng.integers(len(batch), size=cfg.disc_minibatch)
            g = {k: v[idx] for k, v in gen_all.items()}
            disc_update(disc, e, g, disc_opt)
        rewards = airl_reward(disc, batch.obs, batch.actions, batch.next_obs, batch.log_probs,
                              cfg.reward_clamp)
        batch.rewards = np.atleast_1d(np.asarray(rewards, dtype=np.float64))
        adv, ret = compute_gae(batch, ppo.gamma, ppo.gae_lambda)

        e = expert.sample(len(batch), disc_rng)
        d_e = sigmoid(disc.f(e["obs"], e["actions"], e["next_obs"]) - generator.log_prob(e["obs"], e["actions"]))
        d_g = sigmoid(disc.f(batch.obs, batch.actions, batch.next_obs) - batch.log_probs)
        if cfg.lr_anneal:
            frac = 1.0 - it / cfg.iterations
            learner.policy_opt.learning_rate = learner.value_opt.learning_rate = ppo.learning_rate * frac
        ppo_update(learner, batch, update_rng, adv, ret)

        n_eps = len(batch.episode_lengths)
        fails = int(np.sum(batch.signals[batch.dones] == int(Signal.FAIL)))
        row = (it, float(np.mean(d_e)), float(np.mean(d_g)), float(np.mean(batch.rewards)),
               fails / n_eps if n_eps else 0.0)
        log.rows.append(row)
        if callback is not None:
            callback(it, generator, disc, row)
    return generator, disc, log
