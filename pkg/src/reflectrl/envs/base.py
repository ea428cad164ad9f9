"""Environment contract shared by the three toy worlds.

An environment is a pure function of ``(task, state, action)``: the dynamic
world state is recovered by replaying ``state.trail`` from the task's start.
Action tables are fixed per task and have one size per environment. A world
may order its entries relative to the task (graphqa lists the relations the
question mentions first) so that a slot index carries the same meaning across
tasks, which is what lets a linear slot-scoring policy generalize.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, Sequence

import numpy as np

from ..core import (
    STEP_LIMIT,
    SUBMITTED,
    AgentAction,
    ContractViolation,
    InvalidToken,
    Reflection,
    StateText,
    Step,
    Trajectory,
    Vocab,
    append_reflections,
)

ENV_KINDS = ("graphqa", "gridhouse", "setquery")
DEFAULT_SIZE = {"graphqa": 40, "gridhouse": 8, "setquery": 10}
DEFAULT_STEP_LIMIT = {"graphqa": 5, "gridhouse": 20, "setquery": 10}
DEFAULT_AMBIGUITY = {"graphqa": 0.5, "gridhouse": 0.0, "setquery": 0.3}
NOTHING_HAPPENS = "nothing-happens"


class EnvConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    env_kind: str = "graphqa"
    size: int = 0  # entities / locations / table rows; 0 selects the kind default
    step_limit: int = 0  # 0 selects the kind default
    expert_error_rate: float = 0.25
    ambiguity_rate: float = -1.0  # share of tasks hiding a detail; negative selects the kind default
    seed: int = 0

    def resolved(self) -> "EnvConfig":
        if self.env_kind not in ENV_KINDS:
            raise EnvConfigError(f"unknown env_kind {self.env_kind!r}")
        cfg = replace(
            self,
            size=self.size or DEFAULT_SIZE[self.env_kind],
            step_limit=self.step_limit or DEFAULT_STEP_LIMIT[self.env_kind],
            ambiguity_rate=DEFAULT_AMBIGUITY[self.env_kind] if self.ambiguity_rate < 0 else self.ambiguity_rate,
        )
        if cfg.step_limit < 1:
            raise EnvConfigError("step_limit must be >= 1")
        if not 0.0 <= cfg.expert_error_rate < 1.0:
            raise EnvConfigError("expert_error_rate must lie in [0, 1)")
        if not 0.0 <= cfg.ambiguity_rate <= 1.0:
            raise EnvConfigError("ambiguity_rate must lie in [0, 1]")
        return cfg

    def to_manifest(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_manifest(cls, text: str) -> "EnvConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        values: dict[str, Any] = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, raw = (p.strip() for p in line.partition("="))
            if key not in kinds:
                raise EnvConfigError(f"unknown manifest key {key!r}")
            kind = kinds[key]
            values[key] = raw if kind == "str" else (float(raw) if kind == "float" else int(raw))
        return cls(**values)


@dataclass(frozen=True)
class TaskInstance:
    task_id: str
    task_tokens: tuple[int, ...]
    hidden_spec: Any = field(repr=False)


@dataclass(frozen=True)
class ActionEntry:
    kind: str
    args: tuple[int, ...]
    thought: tuple[int, ...]


@dataclass(frozen=True)
class ActionTable:
    entries: tuple[ActionEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("action table is empty")
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("action table entries must be distinct")

    def __len__(self) -> int:
        return len(self.entries)

    def action(self, action_id: int) -> AgentAction:
        e = self.entries[action_id]
        return AgentAction(e.thought, e.kind, e.args, action_id)


@dataclass(frozen=True)
class StepResult:
    observation: tuple[int, ...]
    next_state: StateText
    done: bool
    reward_if_done: float | None
    terminated_by: str | None = None


class Environment(ABC):
    """Deterministic world with a scripted expert planner and reflector."""

    kind: str

    def __init__(self, config: EnvConfig):
        self.config = config.resolved()
        if self.config.env_kind != self.kind:
            raise EnvConfigError(f"{type(self).__name__} cannot run env_kind {self.config.env_kind!r}")
        self._build()
        self.vocab = Vocab.build(self._tokens())
        self.table = self._action_table()
        self.alphabet = self.vocab.ids(self._reflection_words())
        self._kind_ids = {e.kind: self.vocab.id(e.kind) for e in self.table.entries}
        self._tables: dict[str, ActionTable] = {}
        self._tables_for: dict[str, TaskInstance] = {}

    # -- hooks implemented by each world ------------------------------------

    @abstractmethod
    def _build(self) -> None:
        """Create config-level structures (graph, layout, schema)."""

    @abstractmethod
    def _tokens(self) -> list[str]: ...

    @abstractmethod
    def _action_table(self) -> ActionTable: ...

    @abstractmethod
    def _reflection_words(self) -> list[str]: ...

    def _task_table(self, task: TaskInstance) -> ActionTable:
        """Table for one task; must have ``len(self.table)`` entries."""
        return self.table

    @abstractmethod
    def _make_task(self, index: int, rng: np.random.Generator) -> TaskInstance: ...

    @abstractmethod
    def _initial_world(self, task: TaskInstance) -> Any:
        """Mutable dynamic state at the start of a trial."""

    @abstractmethod
    def _transition(self, task: TaskInstance, world: Any, action_id: int) -> tuple[list[str], bool]:
        """Apply one action in place; return (observation words, submitted)."""

    @abstractmethod
    def _score(self, task: TaskInstance, world: Any) -> float: ...

    @abstractmethod
    def _passes(self, task: TaskInstance, world: Any) -> bool: ...

    @abstractmethod
    def _optimal_action(self, task: TaskInstance, world: Any) -> int: ...

    @abstractmethod
    def _diagnose(self, task: TaskInstance, world: Any, traj: Trajectory) -> str:
        """Reflection word for a failed trial ending in ``world``."""

    # -- public contract ----------------------------------------------------

    @property
    def step_limit(self) -> int:
        return self.config.step_limit

    @property
    def table_size(self) -> int:
        return len(self.table)

    def generate_tasks(self, count: int, rng: np.random.Generator) -> list[TaskInstance]:
        if count < 1:
            raise EnvConfigError("count must be >= 1")
        return [self._make_task(i, rng) for i in range(count)]

    def reset(self, task: TaskInstance, reflections: Sequence[Reflection] = ()) -> StateText:
        allowed = set(self.alphabet)
        for f in reflections:
            for tok in f.tokens:
                if tok not in allowed:
                    raise InvalidToken(f"token {tok} is not in the {self.kind} reflection alphabet")
        return append_reflections(StateText(task.task_tokens), reflections, self.vocab)

    def task_table(self, task: TaskInstance) -> ActionTable:
        table = self._tables.get(task.task_id)
        if table is None or self._tables_for.get(task.task_id) is not task:
            table = self._task_table(task)
            if len(table) != self.table_size:
                raise ContractViolation(f"task table has {len(table)} entries, expected {self.table_size}")
            self._tables[task.task_id], self._tables_for[task.task_id] = table, task
        return table

    def legal_actions(self, task: TaskInstance, state: StateText) -> ActionTable:
        return self.task_table(task)

    def replay(self, task: TaskInstance, trail: Sequence[int]) -> Any:
        world = self._initial_world(task)
        for a in trail:
            self._transition(task, world, a)
        return world

    def env_step(self, task: TaskInstance, state: StateText, action: AgentAction) -> StepResult:
        if not 0 <= action.action_id < self.table_size:
            raise ContractViolation(f"action id {action.action_id} not in a table of {self.table_size}")
        if state.step_count >= self.step_limit:
            raise ContractViolation("trial already reached its step limit")
        world = self.replay(task, state.trail)
        words, submitted = self._transition(task, world, action.action_id)
        obs = self.vocab.ids(words)
        entry = self.task_table(task).entries[action.action_id]
        history = state.history_tokens + entry.thought + (self._kind_ids[entry.kind],) + entry.args + obs
        trail = state.trail + (action.action_id,)
        next_state = StateText(state.task_tokens, state.reflection_tokens, history, trail)
        if submitted:
            return StepResult(obs, next_state, True, self._score(task, world), SUBMITTED)
        if len(trail) >= self.step_limit:
            return StepResult(obs, next_state, True, self._score(task, world), STEP_LIMIT)
        return StepResult(obs, next_state, False, None)

    def _final_world(self, task: TaskInstance, trajectory: Trajectory) -> Any:
        last = trajectory.steps[-1]
        return self.replay(task, last.state.trail + (last.action.action_id,))

    def final_reward(self, task: TaskInstance, trajectory: Trajectory) -> float:
        return self._score(task, self._final_world(task, trajectory))

    def evaluator_pass(self, task: TaskInstance, trajectory: Trajectory) -> bool:
        return self._passes(task, self._final_world(task, trajectory))

    def optimal_action_id(self, task: TaskInstance, state: StateText) -> int:
        return self._optimal_action(task, self.replay(task, state.trail))

    def expert_action(self, task: TaskInstance, state: StateText, error_rate: float,
                      rng: np.random.Generator) -> tuple[AgentAction, float]:
        """Oracle action with probability ``1 - error_rate``, else a uniform other slot.

        Returns the action and its log-probability under that mixture. Exactly
        one uniform is drawn for the error decision and, on error, one integer.
        """
        best = self.optimal_action_id(task, state)
        table = self.task_table(task)
        n = len(table)
        if n > 1 and rng.random() < error_rate:
            pick = int(rng.integers(n - 1))
            pick += pick >= best
            return table.action(pick), math.log(error_rate / (n - 1))
        return table.action(best), (math.log1p(-error_rate) if n > 1 else 0.0)

    def expert_reflection(self, task: TaskInstance, failed: Trajectory) -> Reflection:
        if self.evaluator_pass(task, failed):
            raise ContractViolation("expert reflection requested for a successful trial")
        word = self._diagnose(task, self._final_world(task, failed), failed)
        return Reflection((self.vocab.id(word),), 0.0, failed.trial_index)

    def reflection_index(self, reflection: Reflection) -> int:
        return self.alphabet.index(reflection.tokens[0])

    def reflection_at(self, index: int, logprob: float, after_trial: int) -> Reflection:
        return Reflection((self.alphabet[index],), logprob, after_trial)

    def describe(self, ids: Sequence[int]) -> str:
        return " ".join(self.vocab.words(ids))


Chooser = Callable[[StateText, ActionTable], tuple[AgentAction, float]]


def run_trial(env: Environment, task: TaskInstance, reflections: Sequence[Reflection],
              trial_index: int, choose: Chooser) -> Trajectory:
    """Roll one trial from the reflection-augmented initial state until done."""
    state = env.reset(task, reflections)
    steps: list[Step] = []
    while True:
        table = env.legal_actions(task, state)
        action, logprob = choose(state, table)
        result = env.env_step(task, state, action)
        steps.append(Step(state, action, min(logprob, 0.0), result.observation))
        if result.done:
            return Trajectory(task.task_id, trial_index, tuple(steps), result.reward_if_done, result.terminated_by)
        state = result.next_state
