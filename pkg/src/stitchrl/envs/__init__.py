from .base import Env, Signal, StepResult, TransitionInterval
from .hurdle import HurdleLayout, HurdleShaping, HurdleState, PointHurdle, hurdle_interval
from .patrol import PatrolState, PointPatrol, patrol_intervals
from .tabular import (TablePolicy, TabularEnv, TabularMdp, TabularState, oracle_mdps,
                      policy_table, tabular_occupancy)

ENV_IDS = ("point_hurdle", "point_patrol")


def make_env(env_id: str, **kwargs) -> Env:
    from ..errors import ConfigError

    if env_id == "point_hurdle":
        return PointHurdle(**kwargs)
    if env_id == "point_patrol":
        return PointPatrol(**kwargs)
    raise ConfigError(f"unknown environment {env_id!r}", field="env")


__all__ = [
    "Env", "Signal", "StepResult", "TransitionInterval", "HurdleLayout", "HurdleShaping",
    "HurdleState", "PointHurdle", "hurdle_interval", "PatrolState", "PointPatrol",
    "patrol_intervals", "TablePolicy", "TabularEnv", "TabularMdp", "TabularState",
    "oracle_mdps", "policy_table", "tabular_occupancy", "make_env", "ENV_IDS",
]
