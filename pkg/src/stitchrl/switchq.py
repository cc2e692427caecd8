"""Binary stay/switch Q-learning that times the hand-off to the next subtask."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envs.base import Env, Signal, TransitionInterval
from .errors import ConfigError, NonFiniteError
from .nn import Adam, MlpNet, clip_grad_norm
from .rng import RngStream, Xoshiro256

STAY, SWITCH = 0, 1


@dataclass
class SwitchQNet:
    q_net: MlpNet
    target_net: MlpNet
    sync_period: int = 500
    updates: int = 0

    @classmethod
    def init(cls, obs_dim: int, rng: Xoshiro256, hidden: int = 128, sync_period: int = 500) -> "SwitchQNet":
        q = MlpNet.init([obs_dim, hidden, hidden, 2], "relu", rng)
        return cls(q, q.copy(), sync_period)

    def q_values(self, obs) -> np.ndarray:
        return self.q_net.forward(np.atleast_2d(obs))

    def target_values(self, obs) -> np.ndarray:
        return self.target_net.forward(np.atleast_2d(obs))

    def greedy(self, obs) -> int:
        q = self.q_values(obs)[0]
        return int(np.argmax(q))  # argmax returns the first maximum, so ties stay

    def sync(self) -> None:
        self.target_net.load_params_from(self.q_net)


@dataclass(frozen=True)
class RewardSpec:
    r_s: float = 1.0
    r_f: float = -1.0

    def __post_init__(self):
        if not self.r_s > 0 > self.r_f:
            raise ConfigError("reward spec needs r_s > 0 > r_f", field="r_s")


class ReplayBuffer:
    """Fixed-capacity ring of (s, a, r, s_next, terminal) records."""

    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1:
            raise ConfigError("replay capacity must be positive", field="buffer_size")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def push(self, obs, action: int, reward: float, next_obs, terminal: bool) -> None:
        i = self.inserted % self.capacity
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.terminals[i] = terminal
        self.inserted += 1

    def contents(self) -> list[int]:
        """Slot indices from oldest to newest."""
        n = len(self)
        start = self.inserted % self.capacity if self.inserted > self.capacity else 0
        return [(start + k) % self.capacity for k in range(n)]

    def sample(self, n: int, rng: Xoshiro256) -> dict:
        if len(self) == 0:
            raise ConfigError("cannot sample from an empty replay buffer")
        idx = rng.integers(len(self), size=n)
        return {"obs": self.obs[idx], "actions": self.actions[idx], "rewards": self.rewards[idx],
                "next_obs": self.next_obs[idx], "terminals": self.terminals[idx]}


def double_q_target(q: SwitchQNet, r, s_next, terminal, gamma: float):
    """``r + gamma * Q_target(s', argmax_a Q_online(s', a))``; terminal rows give ``r``."""
    r = np.atleast_1d(np.asarray(r, dtype=np.float64))
    terminal = np.atleast_1d(np.asarray(terminal, dtype=bool))
    s_next = np.atleast_2d(s_next)
    a_star = np.argmax(q.q_net.forward(s_next), axis=1)
    boot = q.target_net.forward(s_next)[np.arange(len(r)), a_star]
    y = np.where(terminal, r, r + gamma * boot)
    return y if y.size > 1 else float(y[0])


def q_learning_target(q: SwitchQNet, r, s_next, terminal, gamma: float):
    """Plain target-network target ``r + gamma * max_a Q_target(s', a)``."""
    r = np.atleast_1d(np.asarray(r, dtype=np.float64))
    terminal = np.atleast_1d(np.asarray(terminal, dtype=bool))
    boot = q.target_net.forward(np.atleast_2d(s_next)).max(axis=1)
    y = np.where(terminal, r, r + gamma * boot)
    return y if y.size > 1 else float(y[0])


def epsilon_greedy(q: SwitchQNet, obs, epsilon: float, rng: Xoshiro256) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError(f"epsilon must lie in [0, 1], got {epsilon}", field="epsilon")
    if epsilon > 0 and rng.random() < epsilon:
        return rng.integer(2)
    return q.greedy(obs)


def epsilon_at(step: int, total: int, start: float = 1.0, end: float = 0.05, fraction: float = 0.5) -> float:
    """Linear anneal from ``start`` to ``end`` over the first ``fraction`` of training."""
    horizon = max(1.0, fraction * total)
    t = min(1.0, step / horizon)
    return start + (end - start) * t


def q_update(q: SwitchQNet, batch: dict, opt: Adam, gamma: float, max_grad_norm: float = 10.0) -> float:
    """One squared-error step toward the double-Q targets. Syncs the target net on schedule."""
    y = np.atleast_1d(double_q_target(q, batch["rewards"], batch["next_obs"], batch["terminals"], gamma))
    out, cache = q.q_net.forward_cache(batch["obs"])
    rows = np.arange(len(y))
    err = out[rows, batch["actions"]] - y
    loss = 0.5 * float(np.mean(err * err))
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite Q loss {loss}")
    dout = np.zeros_like(out)
    dout[rows, batch["actions"]] = err / len(y)
    grads = q.q_net.backward(batch["obs"], dout, cache)
    if max_grad_norm > 0:
        clip_grad_norm(grads, max_grad_norm)
    opt.step(q.q_net.params, grads)
    q.updates += 1
    if q.updates % q.sync_period == 0:
        q.sync()
    return loss


# -- training -----------------------------------------------------------------


@dataclass
class SwitchConfig:
    budget: int = 100_000  # decisions taken inside the interval
    learning_rate: float = 1e-4
    minibatch_size: int = 64
    buffer_size: int = 100_000
    sync_period: int = 500
    hidden: int = 128
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_fraction: float = 0.5
    updates_per_episode: int = 1
    handoff_cap: int = 300  # steps the next subtask gets to resolve its subgoal


@dataclass
class SwitchLog:
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["episode,switch_step_index,outcome,epsilon,mean_q_stay,mean_q_switch"]
        for ep, idx, outcome, eps, qs, qw in self.rows:
            lines.append(f"{ep},{idx},{outcome},{eps!r},{qs!r},{qw!r}")
        return "\n".join(lines) + "\n"


def resolve_handoff(policy_b, env: Env, subtask: str, state, rng: Xoshiro256, cap: int):
    """Run ``policy_b`` from ``state`` until its subgoal fires, it fails, or ``cap`` steps pass.

    Returns ``(succeeded, final_state, final_obs, steps)``.
    """
    obs = env.observe(state)
    for k in range(1, cap + 1):
        res = env.step(state, policy_b.act(obs, rng))
        if res.signal == Signal.FAIL:
            return False, res.next_state, res.observation, k
        if env.handoff_complete(subtask, res):
            return True, res.next_state, res.observation, k
        if res.done:
            return res.signal != Signal.FAIL, res.next_state, res.observation, k
        state, obs = res.next_state, res.observation
    return False, state, obs, cap


def train_switcher(starts, transition_policy, policy_b, env: Env, interval: TransitionInterval,
                   rewards: RewardSpec, cfg: SwitchConfig, rng_stream: RngStream, callback=None):
    """Alternate stay/switch decisions inside the interval, one replay update per episode.

    Episodes begin at a sampled start state (``policy_a``'s interval entry).
    Staying runs the transition policy one step; leaving the interval or
    failing on a stay ends the attempt with ``r_f``. Switching hands control to
    ``policy_b`` and stores one terminal record once its subgoal resolves.
    """
    if len(starts) == 0:
        raise ConfigError("switcher training needs start states")
    q = SwitchQNet.init(env.obs_dim, rng_stream.derive("init"), cfg.hidden, cfg.sync_period)
    opt = Adam(cfg.learning_rate)
    buf = ReplayBuffer(cfg.buffer_size, env.obs_dim)
    ep_rng = rng_stream.derive("episodes")
    act_rng = rng_stream.derive("actions")
    explore_rng = rng_stream.derive("explore")
    sample_rng = rng_stream.derive("replay")
    log = SwitchLog()
    steps = 0
    episode = 0
    while steps < cfg.budget:
        state = starts.states[ep_rng.integer(len(starts))]
        env.set_state(state)
        obs = env.observe(state)
        eps = epsilon_at(steps, cfg.budget, cfg.epsilon_start, cfg.epsilon_end, cfg.epsilon_fraction)
        qs = []
        k = 0
        switch_at, outcome = -1, "exit"
        while True:
            eps = epsilon_at(steps, cfg.budget, cfg.epsilon_start, cfg.epsilon_end, cfg.epsilon_fraction)
            qs.append(q.q_values(obs)[0])
            a = epsilon_greedy(q, obs, eps, explore_rng)
            steps += 1
            if a == SWITCH:
                ok, _, final_obs, _ = resolve_handoff(policy_b, env, interval.to_subtask, state, act_rng,
                                                      cfg.handoff_cap)
                buf.push(obs, SWITCH, rewards.r_s if ok else rewards.r_f, final_obs, True)
                switch_at, outcome = k, "success" if ok else "fail"
                break
            res = env.step(state, transition_policy.act(obs, act_rng))
            if res.signal == Signal.FAIL or not env.in_interval(res.next_state, interval):
                buf.push(obs, STAY, rewards.r_f, res.observation, True)
                outcome = "fail" if res.signal == Signal.FAIL else "exit"
                break
            buf.push(obs, STAY, 0.0, res.observation, False)
            state, obs = res.next_state, res.observation
            k += 1
        if len(buf) >= cfg.minibatch_size:
            for _ in range(cfg.updates_per_episode):
                q_update(q, buf.sample(cfg.minibatch_size, sample_rng), opt, cfg.gamma)
        qs = np.asarray(qs)
        row = (episode, switch_at, outcome, eps, float(qs[:, STAY].mean()), float(qs[:, SWITCH].mean()))
        log.rows.append(row)
        if callback is not None:
            callback(episode, q, row)
        episode += 1
    return q, log
