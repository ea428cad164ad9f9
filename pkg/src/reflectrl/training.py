"""Imitation and off-policy clipped policy-gradient training of planner and reflector.

Both phases act on linear-softmax policies (see :mod:`reflectrl.policy`).
Gradients are exact; every update is plain gradient descent on a minibatch
mean. The planner receives the full trial reward at every step of the trial;
the reflector receives the reward change between the trial it reflected on
and the next one, scaled by ``alpha``.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import TrialSequence, trial_rewards
from .envs import Environment, TaskInstance, run_trial
from .expert_data import PlannerExample, ReflectorExample, build_il_datasets, collect_expert_trials
from .metrics import aggregate_metrics
from .policy import (
    PLANNER,
    REFLECTOR,
    SHARED,
    FeatureLayout,
    FeatureVector,
    ParamVector,
    featurize_state,
    featurize_trajectory,
    logprob_and_grad,
    logprob_of,
    sample,
)

log = logging.getLogger(__name__)


class TrainingConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    K: int = 10
    lambda_planner: float = 1.0
    lambda_reflector: float = 1.0
    alpha: float = 1.0
    epsilon: float = 0.2
    learning_rate: float = 0.1
    il_epochs: int = 3
    rl_iterations: int = 10
    rl_epochs_per_iteration: int = 3
    buffer_capacity: int = 10000
    batch_size: int = 32
    explore_temperature: float = 1.0
    eval_temperature: float = 0.0
    shared_params: bool = False
    history_window: int = 16
    seed: int = 0

    def __post_init__(self):
        checks = [
            (self.K >= 1, "K must be >= 1"),
            (self.lambda_planner >= 0 and self.lambda_reflector >= 0, "lambda must be >= 0"),
            (self.alpha > 0, "alpha must be > 0"),
            (0 < self.epsilon < 1, "epsilon must lie in (0, 1)"),
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (self.il_epochs >= 0 and self.rl_iterations >= 0 and self.rl_epochs_per_iteration >= 0,
             "epoch and iteration counts must be >= 0"),
            (self.buffer_capacity >= 1 and self.batch_size >= 1, "buffer_capacity and batch_size must be >= 1"),
            (self.explore_temperature >= 0 and self.eval_temperature >= 0, "temperatures must be >= 0"),
            (self.history_window >= 0, "history_window must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise TrainingConfigError(msg)


@dataclass(frozen=True)
class Ablations:
    freeze_planner: bool = False
    freeze_reflector: bool = False
    disable_reflection: bool = False


# -- agents -----------------------------------------------------------------

@dataclass
class Agent:
    """Planner and reflector parameters; one matrix serves both in shared mode."""

    planner: ParamVector
    reflector: ParamVector
    layout: FeatureLayout
    table_size: int
    alphabet_size: int

    @property
    def shared(self) -> bool:
        return self.planner is self.reflector

    @property
    def reflector_offset(self) -> int:
        return self.table_size if self.shared else 0

    @classmethod
    def init(cls, env: Environment, config: TrainingConfig) -> "Agent":
        layout = FeatureLayout(env.vocab, config.history_window, config.shared_params)
        n, m = env.table_size, len(env.alphabet)
        if config.shared_params:
            p = ParamVector.init(layout.feature_dim, n + m, SHARED, config.seed)
            return cls(p, p, layout, n, m)
        return cls(ParamVector.init(layout.feature_dim, n, PLANNER, config.seed),
                   ParamVector.init(layout.feature_dim, m, REFLECTOR, config.seed), layout, n, m)

    def copy(self) -> "Agent":
        if self.shared:
            p = self.planner.copy()
            return Agent(p, p, self.layout, self.table_size, self.alphabet_size)
        return Agent(self.planner.copy(), self.reflector.copy(), self.layout, self.table_size, self.alphabet_size)


@dataclass(frozen=True)
class LabeledExample:
    """Featurized imitation target, common to planner and reflector data."""

    features: FeatureVector
    label: int
    size: int


def prepare_planner_examples(examples: Iterable[PlannerExample], layout: FeatureLayout) -> list[LabeledExample]:
    return [LabeledExample(featurize_state(e.state, layout), e.action_id, e.table_size) for e in examples]


def prepare_reflector_examples(examples: Iterable[ReflectorExample], layout: FeatureLayout) -> list[LabeledExample]:
    out = []
    for e in examples:
        feats = e.traj_features
        if layout.shared and layout.role_offset + 1 not in feats.indices:
            feats = FeatureVector(tuple(sorted(feats.indices + (layout.role_offset + 1,))))
        out.append(LabeledExample(feats, e.reflection_index, e.alphabet_size))
    return out


# -- replay -----------------------------------------------------------------

@dataclass(frozen=True)
class PlannerRecord:
    features: FeatureVector
    action_id: int
    table_size: int
    behavior_logprob: float
    trajectory_return: float

    def __post_init__(self):
        if not self.behavior_logprob <= 0:
            raise ValueError("behavior_logprob must be <= 0")

    @property
    def index(self) -> int:
        return self.action_id

    @property
    def size(self) -> int:
        return self.table_size

    @property
    def reward(self) -> float:
        return self.trajectory_return


@dataclass(frozen=True)
class ReflectorRecord:
    traj_features: FeatureVector
    reflection_index: int
    alphabet_size: int
    behavior_logprob: float
    shaped_reward: float

    @property
    def features(self) -> FeatureVector:
        return self.traj_features

    @property
    def index(self) -> int:
        return self.reflection_index

    @property
    def size(self) -> int:
        return self.alphabet_size

    @property
    def reward(self) -> float:
        return self.shaped_reward


class ReplayBuffer:
    """Bounded FIFO store; the oldest record is evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.inserted = 0
        self._records: deque = deque(maxlen=capacity)

    def add(self, record) -> None:
        self._records.append(record)
        self.inserted += 1

    def extend(self, records: Iterable) -> None:
        for r in records:
            self.add(r)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __getitem__(self, i):
        return self._records[i]

    def records(self) -> list:
        return list(self._records)


@dataclass
class Buffers:
    planner: ReplayBuffer
    reflector: ReplayBuffer

    @classmethod
    def create(cls, capacity: int) -> "Buffers":
        return cls(ReplayBuffer(capacity), ReplayBuffer(capacity))


# -- objectives -------------------------------------------------------------

def shape_rewards(rewards: Sequence[float], alpha: float) -> tuple[list[float], list[float]]:
    """Planner returns are the trial rewards; reflector rewards are alpha-scaled deltas."""
    if not rewards:
        raise ValueError("need at least one trial reward")
    planner = [float(r) for r in rewards]
    reflector = [alpha * (rewards[k + 1] - rewards[k]) for k in range(len(rewards) - 1)]
    return planner, reflector


def importance_weight(new_logprob: float, behavior_logprob: float, epsilon: float) -> float:
    ratio = math.exp(new_logprob - behavior_logprob)
    return min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)


def il_loss_and_grad(params: ParamVector, batch: Sequence[LabeledExample], offset: int = 0) -> tuple[float, np.ndarray]:
    """Mean cross-entropy against one-hot expert labels, and its gradient."""
    grad = np.zeros_like(params.values)
    if not batch:
        return 0.0, grad
    total = 0.0
    for ex in batch:
        logp, g = logprob_and_grad(params, ex.features, ex.size, ex.label, offset)
        total -= logp
        g.add_to(grad, -1.0)
    grad /= len(batch)
    return total / len(batch), grad


def il_step(params: ParamVector, batch: Sequence[LabeledExample], learning_rate: float,
            offset: int = 0) -> tuple[ParamVector, float]:
    if not batch:
        raise ValueError("il_step needs a nonempty batch")
    loss, grad = il_loss_and_grad(params, batch, offset)
    out = params.copy()
    out.values -= learning_rate * grad
    return out, loss


@dataclass
class SurrogateStats:
    weights: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    saturated: int = 0


def rl_grad(params: ParamVector, batch: Sequence, epsilon: float, offset: int = 0,
            stats: SurrogateStats | None = None) -> tuple[np.ndarray, float]:
    """Gradient and value of the mean clipped surrogate ``-clip(ratio) * R``.

    Inside the clip interval the gradient is the exact derivative. Outside it,
    a record whose descent step would push the ratio further out contributes
    nothing; one whose step pulls the ratio back keeps the clipped weight.
    """
    if not batch:
        raise ValueError("rl_grad needs a nonempty batch")
    grad = np.zeros_like(params.values)
    lo, hi = 1.0 - epsilon, 1.0 + epsilon
    total = 0.0
    for rec in batch:
        logp, g = logprob_and_grad(params, rec.features, rec.size, rec.index, offset)
        ratio = math.exp(logp - rec.behavior_logprob)
        w = min(max(ratio, lo), hi)
        assert lo <= w <= hi
        R = rec.reward
        total -= w * R
        if lo <= ratio <= hi:
            coef = -ratio * R
        elif (ratio > hi and R > 0) or (ratio < lo and R < 0):
            coef = 0.0
            if stats is not None:
                stats.saturated += 1
        else:
            coef = -w * R
        if coef:
            g.add_to(grad, coef)
        if stats is not None:
            stats.weights.append(w)
            stats.ratios.append(ratio)
    grad /= len(batch)
    return grad, total / len(batch)


def rl_grad_planner(params: ParamVector, batch: Sequence[PlannerRecord], epsilon: float,
                    offset: int = 0) -> tuple[np.ndarray, float]:
    return rl_grad(params, batch, epsilon, offset)


def rl_grad_reflector(params: ParamVector, batch: Sequence[ReflectorRecord], epsilon: float,
                      offset: int = 0) -> tuple[np.ndarray, float]:
    return rl_grad(params, batch, epsilon, offset)


@dataclass(frozen=True)
class UpdateInfo:
    surrogate: float
    il_loss: float
    rl_grad_norm: float
    reg_grad_norm: float


def augmented_gradient(params: ParamVector, rl_batch: Sequence, il_batch: Sequence[LabeledExample], lam: float,
                       epsilon: float, offset: int = 0,
                       stats: SurrogateStats | None = None) -> tuple[np.ndarray, UpdateInfo]:
    """``rl_grad + lam * il_grad``; the IL term is zero for an empty IL batch."""
    g_rl, surrogate = rl_grad(params, rl_batch, epsilon, offset, stats)
    il_loss, g_il = il_loss_and_grad(params, il_batch, offset)
    reg = lam * g_il
    info = UpdateInfo(surrogate, il_loss, float(np.linalg.norm(g_rl)), float(np.linalg.norm(reg)))
    return g_rl + reg, info


def augmented_loss(params: ParamVector, rl_batch: Sequence, il_batch: Sequence[LabeledExample], lam: float,
                   epsilon: float, offset: int = 0) -> float:
    """Value of the augmented objective whose gradient :func:`augmented_gradient` returns."""
    _, surrogate = rl_grad(params, rl_batch, epsilon, offset)
    il = il_loss_and_grad(params, il_batch, offset)[0] if il_batch else 0.0
    return surrogate + lam * il


def augmented_update(params: ParamVector, rl_batch: Sequence, il_batch: Sequence[LabeledExample], lam: float,
                     epsilon: float, learning_rate: float, offset: int = 0) -> tuple[ParamVector, UpdateInfo]:
    grad, info = augmented_gradient(params, rl_batch, il_batch, lam, epsilon, offset)
    out = params.copy()
    out.values -= learning_rate * grad
    return out, info


# -- rollouts ---------------------------------------------------------------

def rollout(agent: Agent, env: Environment, task: TaskInstance, K: int, temperature: float,
            rng: np.random.Generator, reflect: bool = True) -> TrialSequence:
    """Up to K trials; reflections after failed trials; stop at the first evaluator pass.

    Behavior log-probs are always recorded at temperature 1.
    """
    layout = agent.layout
    n = agent.table_size

    def choose(state, table):
        feats = featurize_state(state, layout)
        idx, _ = sample(agent.planner, feats, n, temperature, rng)
        return table.action(idx), logprob_of(agent.planner, feats, n, idx)

    trials, reflections = [], []
    solved_at = None
    for k in range(K):
        traj = run_trial(env, task, reflections, k, choose)
        trials.append(traj)
        if env.evaluator_pass(task, traj):
            solved_at = k
            break
        if reflect and k < K - 1:
            feats = featurize_trajectory(traj, layout)
            off = agent.reflector_offset
            idx, _ = sample(agent.reflector, feats, agent.alphabet_size, temperature, rng, off)
            logp = logprob_of(agent.reflector, feats, agent.alphabet_size, idx, off)
            reflections.append(env.reflection_at(idx, logp, k))
    return TrialSequence(task.task_id, tuple(trials), tuple(reflections), solved_at, reflective=reflect)


def push_sequence(buffers: Buffers, seq: TrialSequence, alpha: float, env: Environment, layout: FeatureLayout) -> None:
    r_plan, r_refl = shape_rewards(trial_rewards(seq), alpha)
    n = env.table_size
    for traj, R in zip(seq.trials, r_plan):
        for step in traj.steps:
            buffers.planner.add(PlannerRecord(featurize_state(step.state, layout), step.action.action_id, n,
                                              step.behavior_logprob, R))
    for f, R in zip(seq.reflections, r_refl):
        feats = featurize_trajectory(seq.trials[f.produced_after_trial], layout)
        buffers.reflector.add(ReflectorRecord(feats, env.reflection_index(f), len(env.alphabet),
                                              f.behavior_logprob, R))


# -- phases -----------------------------------------------------------------

HISTORY_COLUMNS = ("phase", "iteration", "planner_loss", "reflector_loss", "eval_IR", "eval_FR", "eval_AR")
TRACE_COLUMNS = ("iteration", "role", "updates", "rl_grad_norm", "reg_grad_norm", "max_weight", "min_weight")


@dataclass
class EvalResult:
    sequences: list[TrialSequence]
    IR: float
    FR: float
    AR: float

    @property
    def reward_matrix(self) -> list[list[float]]:
        return [trial_rewards(s) for s in self.sequences]


def evaluate(agent: Agent, env: Environment, tasks: Sequence[TaskInstance], K: int, temperature: float,
             seed: int = 0, reflect: bool = True, stream: int = 0) -> EvalResult:
    seqs = [rollout(agent, env, t, K, temperature, np.random.default_rng([seed, 13, stream, i]), reflect)
            for i, t in enumerate(tasks)]
    ir, fr, ar = aggregate_metrics([trial_rewards(s) for s in seqs], K)
    return EvalResult(seqs, ir, fr, ar)


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_il(agent: Agent, planner_data: Sequence[LabeledExample], reflector_data: Sequence[LabeledExample],
             config: TrainingConfig, ablations: Ablations = Ablations()) -> list[dict]:
    """Supervised epochs on the expert datasets; updates ``agent`` in place."""
    rows = []
    for epoch in range(config.il_epochs):
        rng = np.random.default_rng([config.seed, 21, epoch])
        losses = {}
        for role, data, frozen in ((PLANNER, planner_data, ablations.freeze_planner),
                                   (REFLECTOR, reflector_data, ablations.freeze_reflector)):
            if frozen or not data:
                losses[role] = float("nan")
                continue
            offset = agent.reflector_offset if role == REFLECTOR else 0
            batch_losses = []
            for idx in _minibatches(len(data), config.batch_size, rng):
                params = agent.planner if role == PLANNER else agent.reflector
                new, loss = il_step(params, [data[i] for i in idx], config.learning_rate, offset)
                params.values[...] = new.values
                batch_losses.append(loss)
            losses[role] = float(np.mean(batch_losses))
        rows.append({"phase": "il", "iteration": epoch, "planner_loss": losses[PLANNER],
                     "reflector_loss": losses[REFLECTOR]})
    return rows


def train_rl_iteration(agent: Agent, env: Environment, train_tasks: Sequence[TaskInstance], buffers: Buffers,
                       planner_il: Sequence[LabeledExample], reflector_il: Sequence[LabeledExample],
                       config: TrainingConfig, iteration: int, ablations: Ablations = Ablations()) -> tuple[dict, list[dict]]:
    """One exploration sweep over the training tasks followed by replayed updates."""
    reflect = not ablations.disable_reflection
    for i, task in enumerate(train_tasks):
        rng = np.random.default_rng([config.seed, 11, iteration, i])
        seq = rollout(agent, env, task, config.K, config.explore_temperature, rng, reflect)
        push_sequence(buffers, seq, config.alpha, env, agent.layout)

    rng = np.random.default_rng([config.seed, 31, iteration])
    losses, trace = {}, []
    for role, buffer, il_data, lam, frozen in (
        (PLANNER, buffers.planner, planner_il, config.lambda_planner, ablations.freeze_planner),
        (REFLECTOR, buffers.reflector, reflector_il, config.lambda_reflector, ablations.freeze_reflector),
    ):
        if frozen or len(buffer) == 0:
            losses[role] = float("nan")
            continue
        offset = agent.reflector_offset if role == REFLECTOR else 0
        params = agent.planner if role == PLANNER else agent.reflector
        records = buffer.records()
        surrogates, rl_norms, reg_norms = [], [], []
        weights_lo, weights_hi = math.inf, -math.inf
        for _ in range(config.rl_epochs_per_iteration):
            for idx in _minibatches(len(records), config.batch_size, rng):
                rl_batch = [records[j] for j in idx]
                il_batch = []
                if il_data and lam > 0:
                    il_batch = [il_data[j] for j in rng.integers(len(il_data), size=config.batch_size)]
                stats = SurrogateStats()
                grad, info = augmented_gradient(params, rl_batch, il_batch, lam, config.epsilon, offset, stats)
                params.values -= config.learning_rate * grad
                surrogates.append(info.surrogate)
                rl_norms.append(info.rl_grad_norm)
                reg_norms.append(info.reg_grad_norm)
                weights_lo = min(weights_lo, min(stats.weights))
                weights_hi = max(weights_hi, max(stats.weights))
        losses[role] = float(np.mean(surrogates)) if surrogates else float("nan")
        trace.append({"iteration": iteration, "role": role, "updates": len(rl_norms),
                      "rl_grad_norm": float(np.mean(rl_norms)) if rl_norms else 0.0,
                      "reg_grad_norm": float(np.max(reg_norms)) if reg_norms else 0.0,
                      "max_weight": weights_hi, "min_weight": weights_lo})
    row = {"phase": "rl", "iteration": iteration, "planner_loss": losses[PLANNER], "reflector_loss": losses[REFLECTOR]}
    return row, trace


@dataclass
class RunResult:
    agent: Agent
    history: list[dict]
    grad_trace: list[dict]
    il_agent: Agent | None = None
    expert_sequences: list[TrialSequence] = field(default_factory=list)
    planner_il: list[PlannerExample] = field(default_factory=list)
    reflector_il: list[ReflectorExample] = field(default_factory=list)
    final_eval: EvalResult | None = None


def run_practical_framework(env: Environment, train_tasks: Sequence[TaskInstance], eval_tasks: Sequence[TaskInstance],
                            config: TrainingConfig, ablations: Ablations = Ablations(),
                            agent: Agent | None = None) -> RunResult:
    """Expert collection, imitation, then ``rl_iterations`` explore-and-update rounds."""
    if not train_tasks or not eval_tasks:
        raise ValueError("train and eval task sets must be nonempty")
    if ablations.freeze_planner and ablations.freeze_reflector and config.rl_iterations > 0:
        raise TrainingConfigError("freezing both planner and reflector leaves nothing to train")
    reflect = not ablations.disable_reflection
    expert = collect_expert_trials(env, train_tasks, config.K, env.config.expert_error_rate, config.seed)
    agent = agent or Agent.init(env, config)
    planner_raw, reflector_raw = build_il_datasets(expert, env, agent.layout)
    planner_il = prepare_planner_examples(planner_raw, agent.layout)
    reflector_il = prepare_reflector_examples(reflector_raw, agent.layout)

    history = train_il(agent, planner_il, reflector_il, config, ablations)
    result = evaluate(agent, env, eval_tasks, config.K, config.eval_temperature, config.seed, reflect, stream=0)
    eval_row = {"eval_IR": result.IR, "eval_FR": result.FR, "eval_AR": result.AR}
    if history:
        history[-1].update(eval_row)
    else:
        history.append({"phase": "il", "iteration": 0, "planner_loss": float("nan"),
                        "reflector_loss": float("nan"), **eval_row})
    il_agent = agent.copy()

    buffers = Buffers.create(config.buffer_capacity)
    trace = []
    for it in range(config.rl_iterations):
        row, tr = train_rl_iteration(agent, env, train_tasks, buffers, planner_il, reflector_il, config, it, ablations)
        result = evaluate(agent, env, eval_tasks, config.K, config.eval_temperature, config.seed, reflect, stream=it + 1)
        row.update({"eval_IR": result.IR, "eval_FR": result.FR, "eval_AR": result.AR})
        history.append(row)
        trace.extend(tr)
        log.info("rl iteration %d: IR %.1f FR %.1f AR %.1f", it, result.IR, result.FR, result.AR)
    return RunResult(agent, history, trace, il_agent, expert, planner_raw, reflector_raw, result)
