"""Value types shared by environments, policies and trainers.

Everything here is immutable. Token sequences are tuples of integer ids into
a single :class:`Vocab` built per experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

SUBMITTED = "submitted"
STEP_LIMIT = "step_limit"
TERMINATIONS = (SUBMITTED, STEP_LIMIT)


class InvalidToken(ValueError):
    """A token id (or string) does not belong to the vocabulary or alphabet."""


class ContractViolation(RuntimeError):
    """An operation was called outside its documented precondition."""


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {t: i for i, t in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("vocabulary tokens must be distinct")
        object.__setattr__(self, "index", index)

    @classmethod
    def build(cls, tokens: Iterable[str]) -> "Vocab":
        """Distinct tokens in first-seen order."""
        return cls(tuple(dict.fromkeys(tokens)))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: object) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise InvalidToken(f"unknown token {token!r}") from None

    def ids(self, tokens: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.id(t) for t in tokens)

    def lookup(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise InvalidToken(f"token id {token_id} out of range")
        return self.tokens[token_id]

    def words(self, ids: Iterable[int]) -> list[str]:
        return [self.lookup(i) for i in ids]

    def check(self, ids: Iterable[int]) -> None:
        n = len(self.tokens)
        for i in ids:
            if not 0 <= i < n:
                raise InvalidToken(f"token id {i} out of range for vocab of {n}")


@dataclass(frozen=True)
class StateText:
    """Planner input: task description, accumulated reflections, history.

    ``trail`` is the sequence of action ids taken so far in the current trial.
    Environments replay it to recover their dynamic state; it is not a
    featurized input.
    """

    task_tokens: tuple[int, ...]
    reflection_tokens: tuple[int, ...] = ()
    history_tokens: tuple[int, ...] = ()
    trail: tuple[int, ...] = ()

    @property
    def step_count(self) -> int:
        return len(self.trail)


@dataclass(frozen=True)
class AgentAction:
    thought: tuple[int, ...]
    action_kind: str
    action_args: tuple[int, ...]
    action_id: int


@dataclass(frozen=True)
class Step:
    state: StateText
    action: AgentAction
    behavior_logprob: float
    observation: tuple[int, ...]

    def __post_init__(self):
        if not self.behavior_logprob <= 0.0:
            raise ValueError(f"behavior_logprob must be <= 0, got {self.behavior_logprob}")


@dataclass(frozen=True)
class Trajectory:
    task_id: str
    trial_index: int
    steps: tuple[Step, ...]
    terminal_reward: float
    terminated_by: str

    def __post_init__(self):
        if not 0.0 <= self.terminal_reward <= 1.0:
            raise ValueError(f"terminal_reward {self.terminal_reward} outside [0, 1]")
        if self.terminated_by not in TERMINATIONS:
            raise ValueError(f"unknown termination {self.terminated_by!r}")
        if self.trial_index < 0:
            raise ValueError("trial_index must be >= 0")

    @property
    def initial_state(self) -> StateText:
        return self.steps[0].state


@dataclass(frozen=True)
class Reflection:
    tokens: tuple[int, ...]
    behavior_logprob: float
    produced_after_trial: int

    def __post_init__(self):
        if len(self.tokens) != 1:
            raise ValueError("reflections are exactly one token long")
        if not self.behavior_logprob <= 0.0:
            raise ValueError("behavior_logprob must be <= 0")


@dataclass(frozen=True)
class TrialSequence:
    """All trials one agent spent on one task.

    With ``reflective=False`` (reflection disabled) no reflections are stored
    even though several trials may exist.
    """

    task_id: str
    trials: tuple[Trajectory, ...]
    reflections: tuple[Reflection, ...]
    solved_at: int | None = None
    reflective: bool = True

    def __post_init__(self):
        if not self.trials:
            raise ValueError("a trial sequence needs at least one trial")
        for k, t in enumerate(self.trials):
            if t.trial_index != k:
                raise ValueError(f"trial {k} carries trial_index {t.trial_index}")
            if t.task_id != self.task_id:
                raise ValueError("trial task_id mismatch")
        n = len(self.trials)
        expected = n - 1 if self.reflective else 0
        if len(self.reflections) != expected:
            raise ValueError(f"{n} trials need {expected} reflections, got {len(self.reflections)}")
        for k, f in enumerate(self.reflections):
            if f.produced_after_trial != k:
                raise ValueError("reflections must follow consecutive trials")
        if self.solved_at is not None and self.solved_at != n - 1:
            raise ValueError("no trial may follow the solving trial")


def append_reflections(initial: StateText, reflections: Sequence[Reflection], vocab: Vocab | None = None) -> StateText:
    """Next trial's initial state: earlier initial state plus reflections, in trial order."""
    if initial.history_tokens or initial.trail:
        raise ContractViolation("reflections are appended to an initial state only")
    ordered = sorted(reflections, key=lambda f: f.produced_after_trial)
    added = tuple(tok for f in ordered for tok in f.tokens)
    if vocab is not None:
        vocab.check(added)
    return StateText(initial.task_tokens, initial.reflection_tokens + added)


def trial_rewards(seq: TrialSequence) -> list[float]:
    return [t.terminal_reward for t in seq.trials]


# -- trajectory log ---------------------------------------------------------
# One tab-separated line per step:
#   task_id  trial  step  state  action_id  behavior_logprob  observation
# followed by one trial-end line:
#   task_id  trial  end  terminal_reward  terminated_by
# ``state`` is task|reflection|history, each a comma-joined id list.


def _ids(seq: Sequence[int]) -> str:
    return ",".join(str(i) for i in seq)


def _parse_ids(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",")) if text else ()


def format_trajectory(traj: Trajectory) -> list[str]:
    lines = []
    for t, step in enumerate(traj.steps):
        s = step.state
        state = "|".join((_ids(s.task_tokens), _ids(s.reflection_tokens), _ids(s.history_tokens)))
        lines.append("\t".join((
            traj.task_id, str(traj.trial_index), str(t), state,
            str(step.action.action_id), repr(step.behavior_logprob), _ids(step.observation),
        )))
    lines.append("\t".join((traj.task_id, str(traj.trial_index), "end", repr(traj.terminal_reward), traj.terminated_by)))
    return lines


def parse_trajectories(lines: Iterable[str], action_for) -> list[Trajectory]:
    """Inverse of :func:`format_trajectory`.

    ``action_for(task_id, action_id)`` rebuilds the :class:`AgentAction`; a
    task's action table is fixed, so the pair is sufficient.
    """
    out: list[Trajectory] = []
    steps: list[Step] = []
    for raw in lines:
        line = raw.rstrip("\n")
        if not line:
            continue
        fields = line.split("\t")
        if fields[2] == "end":
            task_id, trial, _, reward, term = fields
            out.append(Trajectory(task_id, int(trial), tuple(steps), float(reward), term))
            steps = []
            continue
        task_id, trial, step, state, action_id, logprob, obs = fields
        task, refl, hist = state.split("|")
        trail = tuple(st.action.action_id for st in steps)
        if int(step) != len(steps):
            raise ValueError(f"out-of-order step record: {line!r}")
        steps.append(Step(
            StateText(_parse_ids(task), _parse_ids(refl), _parse_ids(hist), trail),
            action_for(task_id, int(action_id)), float(logprob), _parse_ids(obs),
        ))
    if steps:
        raise ValueError("trajectory log ends without a trial-end record")
    return out
