"""PointPatrol: a 1-D point mass that shuttles between two markers.

The full task alternates MoveRight -> Brake -> MoveLeft -> Brake; a marker
touch counts as one subgoal. Hand-offs into Brake happen inside a window of
steps after the touch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..rng import as_generator
from .base import Env, Signal, StepResult, TransitionInterval

DT = 0.05
K_ACCEL = 10.0
V_MAX = 2.0
MARKER_X = 3.0
OBS_CAP = 5.0
SLOW_SPEED = 0.1
BRAKE_STEPS = 20
NEVER = 10**6

RIGHT, LEFT = 0, 1
SUBTASKS = ("moveright", "moveleft", "brake")


@dataclass(frozen=True)
class PatrolState:
    x: float
    vx: float
    marker: int
    brake_counter: int = 0
    since_touch: int = NEVER
    step: int = 0
    touches: int = 0


class PointPatrol(Env):
    env_id = "point_patrol"
    obs_dim = 4
    act_dim = 1

    def __init__(self, mode: str = "full", n_touches: int = 5, max_steps: int = 2000,
                 window: int = 30, subtask_max_steps: int = 300, brake_reward: float = 1.0):
        super().__init__()
        self.brake_reward = brake_reward
        if mode not in ("full", *SUBTASKS):
            raise ConfigError(f"unknown PointPatrol subtask {mode!r}", field="subtask")
        self.mode = mode
        self.n_touches = n_touches
        self.max_steps = max_steps
        self.window = window
        self.subtask_max_steps = subtask_max_steps

    @property
    def name(self) -> str:
        return self.mode

    def reset(self, seed) -> PatrolState:
        rng = as_generator(seed)
        if self.mode == "full":
            state = PatrolState(0.0, 0.0, RIGHT if rng.random() < 0.5 else LEFT)
        elif self.mode == "moveright":
            state = PatrolState(0.0, 0.0, RIGHT)
        elif self.mode == "moveleft":
            state = PatrolState(0.0, 0.0, LEFT)
        else:
            speed = rng.uniform(1.0, 2.0)
            if rng.random() < 0.5:
                state = PatrolState(MARKER_X, speed, LEFT, 0, 0)
            else:
                state = PatrolState(-MARKER_X, -speed, RIGHT, 0, 0)
        self.state = state
        return state

    def validate(self, state: PatrolState) -> None:
        if abs(state.vx) > V_MAX:
            raise ConfigError("invalid state: |vx| exceeds v_max")
        if state.marker not in (RIGHT, LEFT):
            raise ConfigError("invalid state: unknown marker id")
        if state.brake_counter < 0 or state.since_touch < 0:
            raise ConfigError("invalid state: negative counter")

    def subtask_env(self, subtask: str) -> "PointPatrol":
        if subtask in ("single", "full"):
            return self
        if subtask not in SUBTASKS:
            raise ConfigError(f"unknown PointPatrol subtask {subtask!r}", field="subtask")
        return PointPatrol(subtask, n_touches=1, max_steps=self.subtask_max_steps, window=self.window,
                           subtask_max_steps=self.subtask_max_steps, brake_reward=self.brake_reward)

    def step(self, state: PatrolState, action) -> StepResult:
        a = min(1.0, max(-1.0, float(action[0])))
        vx = min(V_MAX, max(-V_MAX, state.vx + K_ACCEL * a * DT))
        x = state.x + vx * DT
        brake = state.brake_counter + 1 if abs(vx) < SLOW_SPEED else 0
        since = min(NEVER, state.since_touch + 1)
        marker, touches, delta = state.marker, state.touches, 0
        if self.mode != "brake":
            if (marker == RIGHT and x >= MARKER_X) or (marker == LEFT and x <= -MARKER_X):
                marker, since, touches, delta = 1 - marker, 0, touches + 1, 1
        step = state.step + 1

        if self.mode == "brake":
            success = brake >= BRAKE_STEPS
            complete = success
        else:
            success = delta > 0
            complete = touches >= self.n_touches
        limit = self.max_steps
        if step > limit:
            signal = Signal.FAIL
        elif success:
            signal = Signal.SUCCESS
        else:
            signal = Signal.ALIVE

        if self.mode == "moveright":
            reward = vx * DT
        elif self.mode == "moveleft":
            reward = -vx * DT
        elif self.mode == "brake":
            reward = self.brake_reward if abs(vx) < SLOW_SPEED else 0.0
        else:
            reward = float(delta)
        nxt = PatrolState(x, vx, marker, brake, since, step, touches)
        return StepResult(nxt, self.observe(nxt), signal, delta, reward,
                          signal == Signal.FAIL or complete)

    def observe(self, state: PatrolState) -> np.ndarray:
        target = MARKER_X if state.marker == RIGHT else -MARKER_X
        d = max(-OBS_CAP, min(OBS_CAP, target - state.x))
        since = min(state.since_touch, self.window) / self.window
        return np.array([state.vx, d, since, min(state.brake_counter, BRAKE_STEPS) / BRAKE_STEPS])

    def in_interval(self, state: PatrolState, interval: TransitionInterval) -> bool:
        if not interval.lo <= state.since_touch <= interval.hi:
            return False
        # the touch that opened the window flipped the marker away from the source side
        if interval.from_subtask == "moveright":
            return state.marker == LEFT
        if interval.from_subtask == "moveleft":
            return state.marker == RIGHT
        return True

    def handoff_complete(self, subtask: str, result: StepResult) -> bool:
        if subtask == "brake":
            return result.next_state.brake_counter >= BRAKE_STEPS
        return result.subgoal_count_delta > 0

    def initial_subtask(self, state: PatrolState, sequence: tuple[str, ...]) -> int:
        want = "moveright" if state.marker == RIGHT else "moveleft"
        return sequence.index(want) if want in sequence else 0

    def trace_xy(self, state: PatrolState) -> tuple[float, float]:
        return (state.x, 0.0)

    def encode_state(self, state: PatrolState) -> str:
        return " ".join(["point_patrol", "1", repr(state.x), repr(state.vx), str(state.marker),
                         str(state.brake_counter), str(state.since_touch), str(state.step),
                         str(state.touches)])

    def decode_state(self, line: str) -> PatrolState:
        parts = line.split()
        if len(parts) != 9 or parts[0] != "point_patrol" or parts[1] != "1":
            raise ConfigError(f"not a point_patrol v1 state record: {line!r}")
        state = PatrolState(float(parts[2]), float(parts[3]), int(parts[4]), int(parts[5]),
                            int(parts[6]), int(parts[7]), int(parts[8]))
        self.validate(state)
        return state


def patrol_intervals(window: int = 30) -> list[TransitionInterval]:
    return [TransitionInterval("moveright", "brake", "touch", 0, window),
            TransitionInterval("moveleft", "brake", "touch", 0, window)]
