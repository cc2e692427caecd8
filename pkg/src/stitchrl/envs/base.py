from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class Signal(IntEnum):
    ALIVE = 0
    SUCCESS = 1
    FAIL = 2


@dataclass(frozen=True)
class StepResult:
    next_state: object
    observation: np.ndarray
    signal: Signal
    subgoal_count_delta: int
    reward: float = 0.0
    done: bool = False


@dataclass(frozen=True)
class TransitionInterval:
    """Window in task progress where control passes ``from_subtask -> to_subtask``.

    ``kind`` selects the membership predicate: ``"hurdle"`` uses the window
    ``[h - lo, h - hi]`` before the next hurdle (grounded only), ``"touch"``
    the ``lo..hi`` steps following a marker touch, ``"episode"`` accepts every
    state (tabular oracle MDPs).
    """

    from_subtask: str
    to_subtask: str
    kind: str = "hurdle"
    lo: float = 1.5
    hi: float = 0.5

    @property
    def name(self) -> str:
        return f"{self.from_subtask}-{self.to_subtask}"


class Env:
    """Common surface of the environments.

    ``step`` is pure: it never mutates ``self`` beyond the convenience
    ``state`` slot that :meth:`set_state` and :meth:`advance` maintain.
    """

    env_id = "env"
    obs_dim = 0
    act_dim = 0
    discrete = False

    def __init__(self):
        self.state = None

    def reset(self, seed):
        raise NotImplementedError

    def step(self, state, action) -> StepResult:
        raise NotImplementedError

    def observe(self, state) -> np.ndarray:
        raise NotImplementedError

    def validate(self, state) -> None:
        pass

    def set_state(self, state) -> None:
        self.validate(state)
        self.state = state

    def get_state(self):
        return self.state

    def advance(self, action) -> StepResult:
        result = self.step(self.state, action)
        self.state = result.next_state
        return result

    def in_interval(self, state, interval: TransitionInterval) -> bool:
        raise NotImplementedError

    def handoff_complete(self, subtask: str, result: StepResult) -> bool:
        """Whether ``subtask`` has finished its job, for hand-offs without an interval."""
        return result.subgoal_count_delta > 0

    def initial_subtask(self, state, sequence: tuple[str, ...]) -> int:
        return 0

    def trace_xy(self, state) -> tuple[float, float]:
        return (0.0, 0.0)

    def subtask_env(self, subtask: str) -> "Env":
        raise NotImplementedError

    def encode_state(self, state) -> str:
        raise NotImplementedError

    def decode_state(self, line: str):
        raise NotImplementedError
