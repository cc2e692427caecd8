"""Clipped-surrogate PPO with GAE and a separate value network."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .envs.base import Env, Signal
from .errors import ConfigError, NonFiniteError, TrainingFailure
from .nn import Adam, GaussianPolicy, CategoricalPolicy, MlpNet, clip_grad_norm
from .rng import Xoshiro256


@dataclass
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    epochs: int = 10
    minibatch_size: int = 64
    learning_rate: float = 1e-3
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    rollout_steps: int = 2048
    normalize_advantages: bool = True

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}", field="gamma")
        if not 0 <= self.gae_lambda <= 1:
            raise ConfigError("gae_lambda must lie in [0, 1]", field="gae_lambda")
        if self.clip_epsilon <= 0:
            raise ConfigError("clip_epsilon must be positive", field="clip_epsilon")
        if self.epochs < 1 or self.minibatch_size < 1 or self.rollout_steps < 1:
            raise ConfigError("epochs, minibatch_size and rollout_steps must be >= 1")


@dataclass
class RolloutBatch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray  # terminal: no bootstrap
    cuts: np.ndarray  # episode boundary (terminal or truncated)
    values: np.ndarray
    next_values: np.ndarray
    next_obs: np.ndarray
    signals: np.ndarray
    episode_returns: list = field(default_factory=list)
    episode_successes: list = field(default_factory=list)
    episode_subgoals: list = field(default_factory=list)
    episode_lengths: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rewards)


def episode_succeeded(env: Env, signal: Signal, done: bool) -> bool:
    return done and signal != Signal.FAIL


class RolloutRunner:
    """Steps one environment for a policy, carrying episodes across calls.

    ``reset_fn(rng)`` starts an episode (default: ``env.reset`` with a drawn
    seed). ``stop_fn(result, length)`` may end an episode early; such stops
    count as terminal.
    """

    def __init__(self, env: Env, rng: Xoshiro256, reset_fn=None, stop_fn=None):
        self.env = env
        self.rng = rng
        self.reset_fn = reset_fn or (lambda r: env.reset(r.next_u64()))
        self.stop_fn = stop_fn
        self.state = None
        self._ep_return = 0.0
        self._ep_len = 0
        self._ep_subgoals = 0

    def _start(self):
        self.state = self.reset_fn(self.rng)
        self._ep_return = 0.0
        self._ep_len = 0
        self._ep_subgoals = 0

    def collect(self, policy, n_steps: int, value_net: MlpNet | None = None) -> RolloutBatch:
        if n_steps <= 0:
            raise ConfigError("n_steps must be positive")
        env = self.env
        discrete = isinstance(policy, CategoricalPolicy) or getattr(env, "discrete", False)
        obs_l, act_l, logp_l, rew_l, done_l, cut_l, nobs_l, sig_l = [], [], [], [], [], [], [], []
        batch = RolloutBatch(*([None] * 10))
        if self.state is None:
            self._start()
        obs = env.observe(self.state)
        for t in range(n_steps):
            action, logp = policy.sample(obs, self.rng)
            res = env.step(self.state, action)
            self._ep_return += res.reward
            self._ep_len += 1
            self._ep_subgoals += res.subgoal_count_delta
            done = res.done
            if not done and self.stop_fn is not None and self.stop_fn(res, self._ep_len):
                done = True
            obs_l.append(obs)
            act_l.append(action)
            logp_l.append(logp)
            rew_l.append(res.reward)
            nobs_l.append(res.observation)
            sig_l.append(int(res.signal))
            done_l.append(done)
            last = t == n_steps - 1
            cut_l.append(done or last)
            if done:
                batch.episode_returns.append(self._ep_return)
                batch.episode_successes.append(episode_succeeded(env, res.signal, res.done))
                batch.episode_subgoals.append(self._ep_subgoals)
                batch.episode_lengths.append(self._ep_len)
                self._start()
                obs = env.observe(self.state)
            else:
                self.state = res.next_state
                obs = res.observation
        batch.obs = np.asarray(obs_l, dtype=np.float64)
        batch.actions = np.asarray(act_l, dtype=np.int64 if discrete else np.float64)
        batch.log_probs = np.asarray(logp_l, dtype=np.float64)
        batch.rewards = np.asarray(rew_l, dtype=np.float64)
        batch.dones = np.asarray(done_l, dtype=bool)
        batch.cuts = np.asarray(cut_l, dtype=bool)
        batch.next_obs = np.asarray(nobs_l, dtype=np.float64)
        batch.signals = np.asarray(sig_l, dtype=np.int8)
        if value_net is not None:
            fill_values(batch, value_net)
        else:
            batch.values = np.zeros(n_steps)
            batch.next_values = np.zeros(n_steps)
        return batch


def fill_values(batch: RolloutBatch, value_net: MlpNet) -> None:
    batch.values = value_net.forward(batch.obs)[:, 0]
    batch.next_values = value_net.forward(batch.next_obs)[:, 0] * (~batch.dones)


def collect_rollout(policy, env: Env, n_steps: int, seed, value_net: MlpNet | None = None) -> RolloutBatch:
    rng = seed if isinstance(seed, Xoshiro256) else Xoshiro256(int(seed))
    return RolloutRunner(env, rng).collect(policy, n_steps, value_net)


def compute_gae(batch: RolloutBatch, gamma: float, lam: float, normalize: bool = False):
    """Returns ``(advantages, returns)``; returns use the raw advantages."""
    rewards, values, next_values = batch.rewards, batch.values, batch.next_values
    not_done = 1.0 - batch.dones.astype(np.float64)
    not_cut = 1.0 - batch.cuts.astype(np.float64)
    deltas = rewards + gamma * next_values * not_done - values
    adv = np.zeros_like(rewards)
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = deltas[t] + gamma * lam * not_cut[t] * running
        adv[t] = running
    returns = adv + values
    if normalize:
        adv = normalize_advantages(adv)
    return adv, returns


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def make_value_net(obs_dim: int, hidden=(32, 32), activation="tanh", rng: Xoshiro256 | None = None) -> MlpNet:
    sizes = [obs_dim, *hidden, 1]
    return MlpNet.init(sizes, activation, rng) if rng is not None else MlpNet(sizes, activation)


@dataclass
class PpoLearner:
    """A policy/value pair with the Adam states that own their updates."""

    policy: object
    value_net: MlpNet
    config: PpoConfig
    policy_opt: Adam = None
    value_opt: Adam = None

    def __post_init__(self):
        if self.policy_opt is None:
            self.policy_opt = Adam(self.config.learning_rate)
        if self.value_opt is None:
            self.value_opt = Adam(self.config.learning_rate)


def ppo_update(learner: PpoLearner, batch: RolloutBatch, rng: Xoshiro256,
               advantages: np.ndarray | None = None, returns: np.ndarray | None = None) -> dict:
    cfg = learner.config
    policy, value_net = learner.policy, learner.value_net
    if advantages is None or returns is None:
        advantages, returns = compute_gae(batch, cfg.gamma, cfg.gae_lambda)
    adv = normalize_advantages(advantages) if cfg.normalize_advantages else np.asarray(advantages)
    n = len(batch)
    mb = min(cfg.minibatch_size, n)
    ratios, clip_fracs, pol_losses, val_losses, kls = [], [], [], [], []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n - mb + 1, mb):
            idx = perm[start:start + mb]
            obs, act, a = batch.obs[idx], batch.actions[idx], adv[idx]
            logp = policy.log_prob(obs, act)
            log_ratio = logp - batch.log_probs[idx]
            ratio = np.exp(log_ratio)
            lo, hi = 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon
            surr1 = ratio * a
            surr2 = np.clip(ratio, lo, hi) * a
            if isinstance(policy, GaussianPolicy):
                entropy = policy.entropy()
            else:
                entropy = float(np.mean(policy.entropy_batch(obs)))
            pol_loss = -float(np.mean(np.minimum(surr1, surr2))) - cfg.entropy_coef * entropy
            active = surr1 <= surr2
            dlogp = np.where(active, -ratio * a / len(idx), 0.0)
            grads = policy.logp_grads(obs, act, dlogp, dentropy=-cfg.entropy_coef)

            v = value_net.forward(obs)[:, 0]
            verr = v - returns[idx]
            val_loss = cfg.value_coef * float(np.mean(verr * verr))
            if not (math.isfinite(pol_loss) and math.isfinite(val_loss)):
                raise NonFiniteError(f"non-finite PPO loss (policy {pol_loss}, value {val_loss})")
            vgrads = value_net.backward(obs, (2.0 * cfg.value_coef / len(idx)) * verr[:, None])
            clip_grad_norm(grads, cfg.max_grad_norm)
            clip_grad_norm(vgrads, cfg.max_grad_norm)
            learner.policy_opt.step(policy.params, grads)
            policy.clamp()
            learner.value_opt.step(value_net.params, vgrads)

            ratios.append(float(np.mean(ratio)))
            clip_fracs.append(float(np.mean(np.abs(ratio - 1.0) > cfg.clip_epsilon)))
            pol_losses.append(pol_loss)
            val_losses.append(val_loss)
            kls.append(float(np.mean((ratio - 1.0) - log_ratio)))
    return {
        "mean_ratio": float(np.mean(ratios)) if ratios else 1.0,
        "minibatch_ratios": ratios,
        "clip_fraction": float(np.mean(clip_fracs)) if clip_fracs else 0.0,
        "policy_loss": float(np.mean(pol_losses)) if pol_losses else 0.0,
        "value_loss": float(np.mean(val_losses)) if val_losses else 0.0,
        "approx_kl": float(np.mean(kls)) if kls else 0.0,
    }


# -- subtask training --------------------------------------------------------


@dataclass
class SubtaskConfig:
    budget: int = 300_000
    target_success: float | None = 0.95
    eval_episodes: int = 100
    hidden: int = 32
    deterministic_eval: bool = False
    min_steps: int = 0  # keep training at least this long even once the target is met


@dataclass
class TrainingCurve:
    rows: list = field(default_factory=list)  # (step, mean_return, success_rate)
    evals: list = field(default_factory=list)  # (step, eval_success_rate)

    def to_csv(self) -> str:
        lines = ["step,mean_return,success_rate"]
        for step, ret, succ in self.rows:
            lines.append(f"{step},{ret!r},{succ!r}")
        return "\n".join(lines) + "\n"


def evaluate_policy(policy, env: Env, n_episodes: int, rng: Xoshiro256,
                    deterministic: bool = False, max_len: int | None = None) -> tuple[float, float]:
    """Success rate and mean return of ``policy`` over fresh episodes."""
    successes, total = 0, 0.0
    for _ in range(n_episodes):
        state = env.reset(rng.next_u64())
        obs = env.observe(state)
        length = 0
        while True:
            action = policy.act(obs, rng, deterministic)
            res = env.step(state, action)
            total += res.reward
            length += 1
            if res.done:
                successes += res.signal != Signal.FAIL
                break
            if max_len is not None and length >= max_len:
                break
            state, obs = res.next_state, res.observation
    return successes / n_episodes, total / n_episodes


def train_subtask(subtask: str, env: Env, ppo: PpoConfig, cfg: SubtaskConfig, rng_stream,
                  require_target: bool = True):
    """PPO on ``env.subtask_env(subtask)``.

    Stops once an evaluation over ``cfg.eval_episodes`` fresh episodes reaches
    ``cfg.target_success``. Raises :class:`TrainingFailure` (carrying the curve)
    if the budget runs out first and ``require_target`` is set.
    """
    sub_env = env.subtask_env(subtask)
    init_rng = rng_stream.derive("policy-init", 0)
    policy = GaussianPolicy.init(sub_env.obs_dim, sub_env.act_dim, (cfg.hidden, cfg.hidden), "tanh", init_rng)
    value_net = make_value_net(sub_env.obs_dim, (cfg.hidden, cfg.hidden), "tanh", init_rng)
    learner = PpoLearner(policy, value_net, ppo)
    runner = RolloutRunner(sub_env, rng_stream.derive("rollout", 0))
    update_rng = rng_stream.derive("update", 0)
    eval_rng = rng_stream.derive("eval", 0)
    curve = TrainingCurve()
    steps = 0
    last_rate = 0.0
    while steps < cfg.budget:
        batch = runner.collect(policy, ppo.rollout_steps, value_net)
        steps += len(batch)
        ppo_update(learner, batch, update_rng)
        if batch.episode_returns:
            mean_ret = float(np.mean(batch.episode_returns))
            rate = float(np.mean(batch.episode_successes))
        else:
            mean_ret, rate = float("nan"), 0.0
        curve.rows.append((steps, mean_ret, rate))
        if cfg.target_success is not None and rate >= cfg.target_success and steps >= cfg.min_steps:
            last_rate, _ = evaluate_policy(policy, sub_env, cfg.eval_episodes, eval_rng, cfg.deterministic_eval)
            curve.evals.append((steps, last_rate))
            if last_rate >= cfg.target_success:
                return policy, curve
    if cfg.target_success is not None:
        last_rate, _ = evaluate_policy(policy, sub_env, cfg.eval_episodes, eval_rng, cfg.deterministic_eval)
        curve.evals.append((steps, last_rate))
        if last_rate >= cfg.target_success:
            return policy, curve
        if require_target:
            raise TrainingFailure(
                f"subtask {subtask!r}: success {last_rate:.2f} < target {cfg.target_success} "
                f"after {steps} steps", log=curve)
    return policy, curve
