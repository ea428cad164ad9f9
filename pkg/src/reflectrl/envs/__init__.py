from .base import (
    ENV_KINDS,
    NOTHING_HAPPENS,
    ActionEntry,
    ActionTable,
    EnvConfig,
    EnvConfigError,
    Environment,
    StepResult,
    TaskInstance,
    run_trial,
)
from .graphqa import GraphQA
from .gridhouse import GridHouse
from .setquery import SetQuery

_REGISTRY = {"graphqa": GraphQA, "gridhouse": GridHouse, "setquery": SetQuery}


def make_env(config: EnvConfig) -> Environment:
    try:
        cls = _REGISTRY[config.env_kind]
    except KeyError:
        raise EnvConfigError(f"unknown env_kind {config.env_kind!r}") from None
    return cls(config)


__all__ = [
    "ENV_KINDS", "NOTHING_HAPPENS", "ActionEntry", "ActionTable", "EnvConfig", "EnvConfigError",
    "Environment", "GraphQA", "GridHouse", "SetQuery", "StepResult", "TaskInstance", "make_env", "run_trial",
]
