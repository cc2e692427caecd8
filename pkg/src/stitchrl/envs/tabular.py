"""Small finite-horizon MDPs with exact occupancy measures.

These are the ground-truth oracle for distribution matching: a generator
trained against expert samples can be compared with the expert exactly,
without any sampling error in the comparison itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..rng import Xoshiro256, as_generator
from .base import Env, Signal, StepResult, TransitionInterval


@dataclass(frozen=True)
class TabularMdp:
    transitions: np.ndarray  # (S, A, S)
    horizon: int
    start: int = 0

    def __post_init__(self):
        p = np.asarray(self.transitions, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ConfigError("transition tensor must have shape (S, A, S)")
        if p.shape[0] > 16 or p.shape[1] > 4 or not 1 <= self.horizon <= 12:
            raise ConfigError("tabular MDPs are limited to 16 states, 4 actions, horizon 12")
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=2) - 1.0)) > 1e-12:
            raise ConfigError("every transition row must be a probability distribution")
        if not 0 <= self.start < p.shape[0]:
            raise ConfigError("start state out of range")
        object.__setattr__(self, "transitions", p)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


def tabular_occupancy(mdp: TabularMdp, policy) -> np.ndarray:
    """Exact normalized state-action visitation over the horizon."""
    pi = np.asarray(policy, dtype=np.float64)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ConfigError("policy table must have shape (S, A)")
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > 1e-9:
        raise ConfigError("policy rows must be distributions")
    d = np.zeros(mdp.n_states)
    d[mdp.start] = 1.0
    occ = np.zeros_like(pi)
    for _ in range(mdp.horizon):
        sa = d[:, None] * pi
        occ += sa
        d = np.einsum("sa,sat->t", sa, mdp.transitions)
    return occ / mdp.horizon


@dataclass(frozen=True)
class TabularState:
    s: int
    t: int = 0


class TabularEnv(Env):
    """Sampling wrapper: one-hot observations, integer actions.

    Transitions draw from an env-owned stream re-seeded by :meth:`reset`.
    """

    env_id = "tabular"
    discrete = True

    def __init__(self, mdp: TabularMdp, seed: int = 0):
        super().__init__()
        self.mdp = mdp
        self.obs_dim = mdp.n_states
        self.act_dim = mdp.n_actions
        self.rng: Xoshiro256 = as_generator(seed)

    def reset(self, seed) -> TabularState:
        self.rng = as_generator(seed)
        self.state = TabularState(self.mdp.start, 0)
        return self.state

    def observe(self, state: TabularState) -> np.ndarray:
        obs = np.zeros(self.mdp.n_states)
        obs[state.s] = 1.0
        return obs

    def step(self, state: TabularState, action) -> StepResult:
        a = int(action)
        s2 = self.rng.categorical(self.mdp.transitions[state.s, a])
        nxt = TabularState(s2, state.t + 1)
        done = nxt.t >= self.mdp.horizon
        return StepResult(nxt, self.observe(nxt), Signal.ALIVE, 0, 0.0, done)

    def in_interval(self, state: TabularState, interval: TransitionInterval) -> bool:
        return state.t < self.mdp.horizon

    def subtask_env(self, subtask: str) -> "TabularEnv":
        return self

    def encode_state(self, state: TabularState) -> str:
        return f"tabular 1 {state.s} {state.t}"

    def decode_state(self, line: str) -> TabularState:
        parts = line.split()
        if len(parts) != 4 or parts[0] != "tabular":
            raise ConfigError(f"not a tabular state record: {line!r}")
        return TabularState(int(parts[2]), int(parts[3]))


EPISODE_INTERVAL = TransitionInterval("start", "expert", "episode", 0.0, 0.0)


def policy_table(policy, n_states: int) -> np.ndarray:
    """Per-state action distribution of a categorical policy on one-hot inputs."""
    return policy.probs(np.eye(n_states))


def oracle_mdps() -> list[tuple[TabularMdp, np.ndarray]]:
    """Three fixed (MDP, expert policy) pairs used by the distribution-matching checks."""
    out = []

    # 4-state slippery chain, 2 actions (left/right)
    p = np.zeros((4, 2, 4))
    for s in range(4):
        right, left = min(s + 1, 3), max(s - 1, 0)
        p[s, 1, right] += 0.8
        p[s, 1, s] += 0.2
        p[s, 0, left] += 0.8
        p[s, 0, s] += 0.2
    expert = np.array([[0.2, 0.8], [0.3, 0.7], [0.6, 0.4], [0.9, 0.1]])
    out.append((TabularMdp(p, horizon=8, start=0), expert))

    # 5-state random MDP, 3 actions
    gen = np.random.default_rng(1234)
    p = gen.dirichlet(np.ones(5) * 0.7, size=(5, 3))
    expert = gen.dirichlet(np.ones(3) * 1.5, size=5)
    out.append((TabularMdp(p, horizon=10, start=0), expert))

    # 6-state ring, 2 actions (advance / stay), expert mostly advances
    p = np.zeros((6, 2, 6))
    for s in range(6):
        p[s, 0, s] = 0.9
        p[s, 0, (s + 1) % 6] = 0.1
        p[s, 1, (s + 1) % 6] = 0.85
        p[s, 1, (s + 2) % 6] = 0.15
    expert = np.tile([0.25, 0.75], (6, 1))
    expert[3] = [0.7, 0.3]
    out.append((TabularMdp(p, horizon=12, start=0), expert))
    return out


class TablePolicy:
    """Fixed per-state action distribution acting on one-hot observations."""

    kind = "table"

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)

    @property
    def obs_dim(self) -> int:
        return self.table.shape[0]

    @property
    def act_dim(self) -> int:
        return self.table.shape[1]

    def sample(self, obs, rng: Xoshiro256):
        row = self.table[int(np.argmax(obs))]
        a = rng.categorical(row)
        return a, float(np.log(row[a]))

    def act(self, obs, rng: Xoshiro256 | None, deterministic: bool = False):
        row = self.table[int(np.argmax(obs))]
        if deterministic or rng is None:
            return int(np.argmax(row))
        return rng.categorical(row)
