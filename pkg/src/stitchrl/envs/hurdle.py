"""PointHurdle: a point mass that runs along the ground and hops over curbs."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigError
from ..rng import as_generator
from .base import Env, Signal, StepResult, TransitionInterval

DT = 0.05
GRAVITY = 9.8
V_JUMP = 3.0
K_ACCEL = 10.0
V_MAX = 2.0
HURDLE_HEIGHT = 0.3
HURDLE_WIDTH = 0.2
OBS_CAP = 5.0
JUMP_THRESHOLD = 0.5


@dataclass(frozen=True)
class HurdleState:
    x: float
    y: float
    vx: float
    vy: float
    grounded: bool
    step: int = 0
    passed: int = 0
    hurdles: tuple[float, ...] = ()


@dataclass(frozen=True)
class HurdleShaping:
    progress_coef: float = 1.0
    pass_bonus: float = 0.0
    collision_penalty: float = 0.0
    hop_penalty: float = 0.0  # charged on each takeoff


@dataclass(frozen=True)
class HurdleLayout:
    n_hurdles: int = 5
    first: tuple[float, float] = (4.0, 6.0)
    gap: tuple[float, float] = (4.0, 6.0)
    goal_x: float | None = None
    max_steps: int = 2000


SUBTASKS = ("run", "jump")


class PointHurdle(Env):
    env_id = "point_hurdle"
    obs_dim = 5
    act_dim = 2

    def __init__(self, layout: HurdleLayout | None = None, shaping: HurdleShaping | None = None,
                 name: str = "full", subtask_max_steps: int = 300):
        super().__init__()
        self.layout = layout or HurdleLayout()
        self.shaping = shaping or HurdleShaping(1.0, 10.0, -10.0)
        self.name = name
        self.subtask_max_steps = subtask_max_steps
        # subtask shaping defaults; the pipeline overrides them from config
        self.subtask_shaping = {
            "run": HurdleShaping(1.0, 0.0, 0.0),
            "jump": HurdleShaping(1.0, 10.0, -10.0),
        }

    # -- episode setup ----------------------------------------------------

    def reset(self, seed) -> HurdleState:
        rng = as_generator(seed)
        lay = self.layout
        hurdles = []
        pos = 0.0
        for i in range(lay.n_hurdles):
            lo, hi = lay.first if i == 0 else lay.gap
            pos += rng.uniform(lo, hi)
            hurdles.append(pos)
        self.state = HurdleState(0.0, 0.0, 0.0, 0.0, True, 0, 0, tuple(hurdles))
        return self.state

    def validate(self, state: HurdleState) -> None:
        if state.y < 0:
            raise ConfigError("invalid state: y < 0")
        if abs(state.vx) > V_MAX:
            raise ConfigError("invalid state: |vx| exceeds v_max")
        if state.grounded != (state.y == 0.0):
            raise ConfigError("invalid state: grounded must hold exactly when y == 0")
        if not 0 <= state.passed <= len(state.hurdles):
            raise ConfigError("invalid state: passed count out of range")

    def subtask_env(self, subtask: str) -> "PointHurdle":
        if subtask == "run":
            layout = HurdleLayout(n_hurdles=0, goal_x=10.0, max_steps=self.subtask_max_steps)
        elif subtask == "jump":
            layout = HurdleLayout(n_hurdles=1, first=(3.0, 5.0), max_steps=self.subtask_max_steps)
        elif subtask in ("single", "full"):
            return self
        else:
            raise ConfigError(f"unknown PointHurdle subtask {subtask!r}", field="subtask")
        env = PointHurdle(layout, self.subtask_shaping[subtask], name=subtask,
                          subtask_max_steps=self.subtask_max_steps)
        env.subtask_shaping = self.subtask_shaping
        return env

    # -- dynamics ---------------------------------------------------------

    def step(self, state: HurdleState, action) -> StepResult:
        ax = min(1.0, max(-1.0, float(action[0])))
        ay = min(1.0, max(-1.0, float(action[1])))
        x, y, vx, vy, grounded = state.x, state.y, state.vx, state.vy, state.grounded
        took_off = grounded and ay > JUMP_THRESHOLD
        if took_off:
            vy = V_JUMP
            grounded = False
        elif not grounded:
            vy = vy - GRAVITY * DT
        vx = min(V_MAX, max(-V_MAX, vx + K_ACCEL * ax * DT))
        x = x + vx * DT
        y = max(0.0, y + vy * DT)
        if y == 0.0:
            vy = 0.0
            grounded = True
        step = state.step + 1
        hurdles = state.hurdles
        passed = state.passed

        collided = any(h <= x <= h + HURDLE_WIDTH and y <= HURDLE_HEIGHT for h in hurdles)
        delta = 0
        if not collided and passed < len(hurdles) and x > hurdles[passed] + HURDLE_WIDTH:
            passed += 1
            delta = 1
        goal = self.layout.goal_x is not None and x >= self.layout.goal_x

        if collided or step > self.layout.max_steps:
            signal = Signal.FAIL
        elif delta or goal:
            signal = Signal.SUCCESS
        else:
            signal = Signal.ALIVE
        complete = goal or (self.layout.goal_x is None and len(hurdles) > 0 and passed == len(hurdles))
        done = signal == Signal.FAIL or complete

        sh = self.shaping
        reward = sh.progress_coef * vx * DT + sh.pass_bonus * delta
        if collided:
            reward += sh.collision_penalty
        if took_off:
            reward -= sh.hop_penalty
        nxt = HurdleState(x, y, vx, vy, grounded, step, passed, hurdles)
        return StepResult(nxt, self.observe(nxt), signal, delta, reward, done)

    def observe(self, state: HurdleState) -> np.ndarray:
        if state.passed < len(state.hurdles):
            h = state.hurdles[state.passed]
            d_start = min(OBS_CAP, h - state.x)
            d_end = min(OBS_CAP, h + HURDLE_WIDTH - state.x)
        else:
            d_start = d_end = OBS_CAP
        return np.array([state.y, state.vx, state.vy, d_start, d_end])

    # -- task structure ---------------------------------------------------

    def next_hurdle(self, state: HurdleState) -> float | None:
        if state.passed < len(state.hurdles):
            return state.hurdles[state.passed]
        return None

    def in_interval(self, state: HurdleState, interval: TransitionInterval) -> bool:
        h = self.next_hurdle(state)
        if h is None:
            return False
        return state.grounded and h - interval.lo <= state.x <= h - interval.hi

    def trace_xy(self, state: HurdleState) -> tuple[float, float]:
        return (state.x, state.y)

    def jump_apex(self) -> float:
        """Peak height of a single hop from a standing start, by simulation."""
        s = HurdleState(0.0, 0.0, 0.0, 0.0, True)
        apex = 0.0
        env = PointHurdle(HurdleLayout(n_hurdles=0))
        a = (0.0, 1.0)
        while True:
            s = env.step(s, a).next_state
            apex = max(apex, s.y)
            if s.grounded:
                return apex
            a = (0.0, 0.0)

    # -- text records -----------------------------------------------------

    def encode_state(self, state: HurdleState) -> str:
        fields = ["point_hurdle", "1", repr(state.x), repr(state.y), repr(state.vx), repr(state.vy),
                  str(int(state.grounded)), str(state.step), str(state.passed), str(len(state.hurdles))]
        fields.extend(repr(h) for h in state.hurdles)
        return " ".join(fields)

    def decode_state(self, line: str) -> HurdleState:
        parts = line.split()
        if len(parts) < 10 or parts[0] != "point_hurdle":
            raise ConfigError(f"not a point_hurdle state record: {line!r}")
        if parts[1] != "1":
            raise ConfigError(f"unsupported state record version {parts[1]}")
        n = int(parts[9])
        if len(parts) != 10 + n:
            raise ConfigError("state record has the wrong number of hurdle fields")
        state = HurdleState(float(parts[2]), float(parts[3]), float(parts[4]), float(parts[5]),
                            parts[6] == "1", int(parts[7]), int(parts[8]),
                            tuple(float(p) for p in parts[10:]))
        self.validate(state)
        return state


def hurdle_interval(lo: float = 1.5, hi: float = 0.5) -> TransitionInterval:
    return TransitionInterval("run", "jump", "hurdle", lo, hi)


def with_hurdles(state: HurdleState, hurdles) -> HurdleState:
    return replace(state, hurdles=tuple(hurdles))
