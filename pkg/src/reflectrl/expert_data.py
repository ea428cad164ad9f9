"""Scripted-expert rollouts filtered into imitation datasets."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import StateText, TrialSequence, trial_rewards
from .envs import Environment, EnvConfig, TaskInstance, run_trial
from .policy import FeatureLayout, FeatureVector, featurize_trajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlannerExample:
    state: StateText
    action_id: int
    table_size: int
    task_id: str = ""  # provenance: the passing trajectory it came from
    trial_index: int = 0

    def __post_init__(self):
        if not 0 <= self.action_id < self.table_size:
            raise ValueError("action_id outside table")


@dataclass(frozen=True)
class ReflectorExample:
    traj_features: FeatureVector
    reflection_index: int
    alphabet_size: int
    observed_improvement: float

    def __post_init__(self):
        if not self.observed_improvement > 0:
            raise ValueError("reflector examples need a strictly positive improvement")
        if not 0 <= self.reflection_index < self.alphabet_size:
            raise ValueError("reflection_index outside alphabet")


def collect_task(env: Environment, task: TaskInstance, K: int, error_rate: float,
                 rng: np.random.Generator) -> TrialSequence:
    trials, reflections = [], []
    solved_at = None
    for k in range(K):
        traj = run_trial(env, task, reflections, k,
                         lambda state, table: env.expert_action(task, state, error_rate, rng))
        trials.append(traj)
        if env.evaluator_pass(task, traj):
            solved_at = k
            break
        if k < K - 1:
            reflections.append(env.expert_reflection(task, traj))
    return TrialSequence(task.task_id, tuple(trials), tuple(reflections), solved_at)


def collect_expert_trials(env: Environment, tasks: Sequence[TaskInstance], K: int, error_rate: float,
                          seed: int) -> list[TrialSequence]:
    """Expert trial sequences, one independent rng stream per task."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return [collect_task(env, task, K, error_rate, np.random.default_rng([seed, 7, i]))
            for i, task in enumerate(tasks)]


def build_il_datasets(sequences: Iterable[TrialSequence], env: Environment,
                      layout: FeatureLayout) -> tuple[list[PlannerExample], list[ReflectorExample]]:
    planner: list[PlannerExample] = []
    reflector: list[ReflectorExample] = []
    n = env.table_size
    for seq in sequences:
        for traj in seq.trials:
            # collection stops at the first evaluator pass, so only the solving trial passed
            if traj.trial_index == seq.solved_at:
                planner.extend(PlannerExample(s.state, s.action.action_id, n, seq.task_id, traj.trial_index)
                               for s in traj.steps)
        rewards = trial_rewards(seq)
        for k, f in enumerate(seq.reflections):
            gain = rewards[k + 1] - rewards[k]
            if gain > 0:
                reflector.append(ReflectorExample(featurize_trajectory(seq.trials[k], layout),
                                                  env.reflection_index(f), len(env.alphabet), gain))
    if not planner:
        log.warning("planner imitation dataset is empty (no evaluator-passing expert trajectories)")
    if not reflector:
        log.warning("reflector imitation dataset is empty (no reflection improved a retry)")
    return planner, reflector


def dataset_stats(planner: Sequence[PlannerExample], reflector: Sequence[ReflectorExample],
                  env_kind: str = "") -> dict[str, int | str]:
    return {
        "env": env_kind,
        "planner_examples": len(planner),
        "planner_trajectories": len({(e.task_id, e.trial_index) for e in planner}),
        "reflector_examples": len(reflector),
    }


# -- persistence ------------------------------------------------------------

def _ids(seq) -> str:
    return ",".join(map(str, seq))


def _parse(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",")) if text else ()


def manifest_line(config: EnvConfig, seed: int, error_rate: float, K: int) -> str:
    return (f"# manifest env_kind={config.env_kind} size={config.size} step_limit={config.step_limit} "
            f"ambiguity_rate={config.ambiguity_rate} env_seed={config.seed} seed={seed} "
            f"error_rate={error_rate} K={K}")


def write_planner_examples(path: str | Path, examples: Sequence[PlannerExample], manifest: str) -> None:
    lines = [manifest]
    for e in examples:
        s = e.state
        lines.append("\t".join((e.task_id, str(e.trial_index), _ids(s.task_tokens), _ids(s.reflection_tokens),
                                _ids(s.history_tokens), _ids(s.trail), str(e.action_id), str(e.table_size))))
    Path(path).write_text("\n".join(lines) + "\n")


def read_planner_examples(path: str | Path) -> list[PlannerExample]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        task_id, trial, task, refl, hist, trail, action, size = line.split("\t")
        out.append(PlannerExample(StateText(_parse(task), _parse(refl), _parse(hist), _parse(trail)),
                                  int(action), int(size), task_id, int(trial)))
    return out


def write_reflector_examples(path: str | Path, examples: Sequence[ReflectorExample], manifest: str) -> None:
    lines = [manifest]
    lines += ["\t".join((_ids(e.traj_features.indices), str(e.reflection_index), str(e.alphabet_size),
                         repr(e.observed_improvement))) for e in examples]
    Path(path).write_text("\n".join(lines) + "\n")


def read_reflector_examples(path: str | Path) -> list[ReflectorExample]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        feats, idx, size, gain = line.split("\t")
        out.append(ReflectorExample(FeatureVector(_parse(feats)), int(idx), int(size), float(gain)))
    return out
