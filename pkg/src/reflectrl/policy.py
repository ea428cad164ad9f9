"""Linear-softmax policies over enumerated action tables.

A policy is a dense weight matrix ``values`` of shape
``(feature_dim, max_action_slots)``; the score of slot ``j`` is the sum of
``values[i, offset + j]`` over the active binary features ``i``. The flat
parameter index of ``(i, j)`` is ``i * max_action_slots + j`` (C order).

Planner and reflector share one feature layout. In shared mode a single
matrix serves both roles, the reflector reading its slots at an offset past
the planner's slots, and a per-role flag feature is switched on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .core import STEP_LIMIT, StateText, Trajectory, Vocab

PLANNER, REFLECTOR, SHARED = "planner", "reflector", "shared"
ROLES = (PLANNER, REFLECTOR, SHARED)
REWARD_BUCKETS = 4


class PolicyConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    indices: tuple[int, ...]

    @cached_property
    def array(self) -> np.ndarray:
        return np.array(self.indices, dtype=np.intp)

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class FeatureLayout:
    """Index ranges of the binary feature banks.

    ``[0, V)`` task tokens, ``[V, 2V)`` reflection tokens, ``[2V, 3V)`` the
    last ``window`` history tokens; trajectory features add ``[3V, 4V)``
    action tokens taken, ``[4V, 5V)`` final observation tokens, then reward
    buckets, the termination flag and the two role flags.
    """

    vocab: Vocab
    window: int = 16
    shared: bool = False

    @property
    def V(self) -> int:
        return len(self.vocab)

    @property
    def reward_offset(self) -> int:
        return 5 * self.V

    @property
    def terminated_offset(self) -> int:
        return self.reward_offset + REWARD_BUCKETS

    @property
    def role_offset(self) -> int:
        return self.terminated_offset + 2

    @property
    def feature_dim(self) -> int:
        return self.role_offset + 2

    def bank(self, name: str) -> range:
        start = {"task": 0, "reflection": 1, "history": 2, "actions": 3, "observation": 4}[name] * self.V
        return range(start, start + self.V)


def featurize_state(state: StateText, layout: FeatureLayout) -> FeatureVector:
    V = layout.V
    active = set(state.task_tokens)
    active.update(V + t for t in state.reflection_tokens)
    if layout.window > 0:
        active.update(2 * V + t for t in state.history_tokens[-layout.window:])
    if layout.shared:
        active.add(layout.role_offset)
    return FeatureVector(tuple(sorted(active)))


def reward_bucket(reward: float) -> int:
    return min(int(reward * REWARD_BUCKETS), REWARD_BUCKETS - 1)


def featurize_trajectory(traj: Trajectory, layout: FeatureLayout) -> FeatureVector:
    V = layout.V
    vocab = layout.vocab
    active = set(traj.steps[0].state.task_tokens)
    for step in traj.steps:
        a = step.action
        if a.action_kind in vocab:
            active.add(3 * V + vocab.id(a.action_kind))
        active.update(3 * V + t for t in a.action_args)
    active.update(4 * V + t for t in traj.steps[-1].observation)
    active.add(layout.reward_offset + reward_bucket(traj.terminal_reward))
    active.add(layout.terminated_offset + int(traj.terminated_by == STEP_LIMIT))
    if layout.shared:
        active.add(layout.role_offset + 1)
    return FeatureVector(tuple(sorted(active)))


@dataclass
class ParamVector:
    values: np.ndarray  # (feature_dim, max_action_slots)
    role: str
    seed: int = 0

    def __post_init__(self):
        if self.role not in ROLES:
            raise PolicyConfigError(f"unknown role {self.role!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise PolicyConfigError("values must be a (feature_dim, max_action_slots) matrix")

    @classmethod
    def init(cls, feature_dim: int, max_action_slots: int, role: str, seed: int, scale: float = 0.01) -> "ParamVector":
        rng = np.random.default_rng([seed, ROLES.index(role)])
        return cls(scale * rng.standard_normal((feature_dim, max_action_slots)), role, seed)

    @property
    def feature_dim(self) -> int:
        return self.values.shape[0]

    @property
    def max_action_slots(self) -> int:
        return self.values.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.role, self.seed)

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return (self.role, self.seed) == (other.role, other.seed) and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class ActionDistribution:
    probs: np.ndarray = field(compare=False)
    temperature: float


@dataclass(frozen=True)
class SparseGrad:
    """Gradient nonzero only on rows ``indices`` and columns ``offset:offset+len(row)``.

    Every active row carries the same vector ``row``.
    """

    indices: np.ndarray
    offset: int
    row: np.ndarray

    def add_to(self, dense: np.ndarray, scale: float = 1.0) -> None:
        cols = slice(self.offset, self.offset + len(self.row))
        dense[self.indices, cols] += scale * self.row

    def to_dense(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape)
        self.add_to(out)
        return out


def _check_slots(params: ParamVector, table_size: int, offset: int) -> None:
    if table_size < 1 or offset + table_size > params.max_action_slots:
        raise PolicyConfigError(
            f"table of {table_size} at offset {offset} exceeds {params.max_action_slots} action slots"
        )


def action_scores(params: ParamVector, features: FeatureVector, table_size: int, offset: int = 0) -> np.ndarray:
    _check_slots(params, table_size, offset)
    return params.values[features.array, offset:offset + table_size].sum(axis=0)


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max()
    return shifted - np.log(np.exp(shifted).sum())


def distribution(params: ParamVector, features: FeatureVector, table_size: int,
                 temperature: float = 1.0, offset: int = 0) -> ActionDistribution:
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    scores = action_scores(params, features, table_size, offset)
    if temperature == 0:
        probs = np.zeros(table_size)
        probs[int(np.argmax(scores))] = 1.0  # argmax takes the lowest index on ties
    else:
        probs = np.exp(_log_softmax(scores / temperature))
    return ActionDistribution(probs, temperature)


def sample(params: ParamVector, features: FeatureVector, table_size: int, temperature: float,
           rng: np.random.Generator, offset: int = 0) -> tuple[int, float]:
    """Draw a slot; the log-prob is under the tempered distribution (0 when greedy)."""
    scores = action_scores(params, features, table_size, offset)
    if temperature == 0:
        return int(np.argmax(scores)), 0.0
    logp = _log_softmax(scores / temperature)
    idx = int(rng.choice(table_size, p=np.exp(logp)))
    return idx, float(logp[idx])


def logprob_of(params: ParamVector, features: FeatureVector, table_size: int, index: int, offset: int = 0) -> float:
    if not 0 <= index < table_size:
        raise IndexError(f"action {index} outside table of {table_size}")
    return float(_log_softmax(action_scores(params, features, table_size, offset))[index])


def logprob_and_grad(params: ParamVector, features: FeatureVector, table_size: int, index: int,
                     offset: int = 0) -> tuple[float, SparseGrad]:
    if not 0 <= index < table_size:
        raise IndexError(f"action {index} outside table of {table_size}")
    logp = _log_softmax(action_scores(params, features, table_size, offset))
    row = -np.exp(logp)
    row[index] += 1.0
    return float(logp[index]), SparseGrad(features.array, offset, row)


def grad_logprob(params: ParamVector, features: FeatureVector, table_size: int, index: int,
                 offset: int = 0) -> SparseGrad:
    return logprob_and_grad(params, features, table_size, index, offset)[1]


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(params: ParamVector, path: str | Path) -> None:
    lines = [
        f"role {params.role}",
        f"feature_dim {params.feature_dim}",
        f"max_action_slots {params.max_action_slots}",
        f"seed {params.seed}",
    ]
    lines.extend(repr(float(v)) for v in params.flat)
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path: str | Path) -> ParamVector:
    lines = Path(path).read_text().splitlines()
    header = dict(line.split(" ", 1) for line in lines[:4])
    fd, slots = int(header["feature_dim"]), int(header["max_action_slots"])
    values = np.array([float(x) for x in lines[4:]], dtype=np.float64)
    if values.size != fd * slots:
        raise PolicyConfigError(f"{path}: expected {fd * slots} values, found {values.size}")
    return ParamVector(values.reshape(fd, slots), header["role"], int(header["seed"]))

