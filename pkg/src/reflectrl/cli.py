"""Experiment runner: flat config files, five phase subcommands, CSV outputs.

Every subcommand reads ``--config`` (flat ``key = value`` lines), writes the
fully resolved config to ``<out>/config.resolved`` and a manifest holding
sha256 hashes of its inputs and outputs, so a run directory documents how
to reproduce itself. Phases hand over through files in the run directory:

    collect   -> planner_il.tsv, reflector_il.tsv, expert.log, dataset_stats.csv
    train-il  -> il/planner.ckpt, il/reflector.ckpt, history.csv
    train-rl  -> rl/planner.ckpt, rl/reflector.ckpt, history.csv, grad_trace.csv
    evaluate  -> metrics.csv, rewards.csv, trajectories.log
    report    -> report.csv, lambda_sweep.csv (over several run directories)
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import format_trajectory, trial_rewards
from .envs import EnvConfig, EnvConfigError, Environment, TaskInstance, make_env
from .expert_data import (
    build_il_datasets,
    collect_expert_trials,
    dataset_stats,
    manifest_line,
    read_planner_examples,
    read_reflector_examples,
    write_planner_examples,
    write_reflector_examples,
)
from .policy import SHARED, PolicyConfigError, load_checkpoint, save_checkpoint
from .training import (
    HISTORY_COLUMNS,
    TRACE_COLUMNS,
    Ablations,
    Agent,
    Buffers,
    TrainingConfig,
    TrainingConfigError,
    evaluate,
    prepare_planner_examples,
    prepare_reflector_examples,
    train_il,
    train_rl_iteration,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
METRICS_HEADER = ("run", "task_count", "K", "IR", "FR", "AR")
SWEEP_HEADER = ("lambda", "IR", "FR", "AR")
STATS_HEADER = ("env", "planner_examples", "planner_trajectories", "reflector_examples")

PLANNER_DATA, REFLECTOR_DATA = "planner_il.tsv", "reflector_il.tsv"
IL_DIR, RL_DIR = "il", "rl"


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    train_tasks: int = 200
    eval_tasks: int = 100
    freeze_planner: bool = False
    freeze_reflector: bool = False
    disable_reflection: bool = False
    output_dir: str = "runs/default"
    run_name: str = ""  # empty: the output directory's name

    def __post_init__(self):
        if self.train_tasks < 1 or self.eval_tasks < 1:
            raise ConfigError("train_tasks and eval_tasks must be >= 1")

    def validate(self) -> "ExperimentConfig":
        """Cross-key checks, run once every key is known."""
        if self.freeze_planner and self.freeze_reflector and self.training.rl_iterations > 0:
            raise ConfigError("freeze_planner and freeze_reflector together leave nothing to train")
        return self

    @property
    def ablations(self) -> Ablations:
        return Ablations(self.freeze_planner, self.freeze_reflector, self.disable_reflection)

    @property
    def name(self) -> str:
        return self.run_name or Path(self.output_dir).name

    @property
    def out(self) -> Path:
        return Path(self.output_dir)


# -- config files -----------------------------------------------------------

# flat key -> (section, field); env_seed avoids clashing with the training seed
_ENV_KEYS = {("env_seed" if f.name == "seed" else f.name): f.name for f in fields(EnvConfig)}
_TRAINING_KEYS = {f.name: f.name for f in fields(TrainingConfig)}
_TOP_KEYS = {f.name: f.name for f in fields(ExperimentConfig) if f.name not in ("env", "training")}


def _field_types(cls) -> dict[str, str]:
    return {f.name: f.type if isinstance(f.type, str) else f.type.__name__ for f in fields(cls)}


_TYPES = {**{k: _field_types(EnvConfig)[v] for k, v in _ENV_KEYS.items()},
          **{k: _field_types(TrainingConfig)[v] for k, v in _TRAINING_KEYS.items()},
          **{k: _field_types(ExperimentConfig)[v] for k, v in _TOP_KEYS.items()}}


def _convert(raw: str, kind: str):
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def _apply(cfg: ExperimentConfig, key: str, value) -> ExperimentConfig:
    if key in _ENV_KEYS:
        env = replace(cfg.env, **{_ENV_KEYS[key]: value})
        env.resolved()  # validate now so the error points at this key
        return replace(cfg, env=env)
    if key in _TRAINING_KEYS:
        return replace(cfg, training=replace(cfg.training, **{key: value}))
    return replace(cfg, **{key: value})


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment; later keys override earlier ones."""
    cfg = ExperimentConfig()
    seen: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{where}: unknown key {key!r}")
        try:
            cfg = _apply(cfg, key, _convert(value, _TYPES[key]))
        except (ValueError, TypeError) as exc:  # config errors subclass ValueError
            raise ConfigError(f"{where}: key {key!r}: {exc}") from None
        seen[key] = where
    try:
        return cfg.validate()
    except ConfigError as exc:
        involved = [k for k in seen if k in ("freeze_planner", "freeze_reflector", "rl_iterations")]
        where = seen[involved[-1]] if involved else source
        raise ConfigError(f"{where}: key {involved[-1] if involved else '-'!r}: {exc}") from None


def parse_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(path))


def render_config(cfg: ExperimentConfig) -> str:
    """Every key with its resolved value, in a form :func:`parse_config_text` reads back."""
    env = cfg.env.resolved()
    lines = [f"{k} = {getattr(env, v)}" for k, v in _ENV_KEYS.items()]
    lines += [f"{k} = {getattr(cfg.training, v)}" for k, v in _TRAINING_KEYS.items()]
    lines += [f"{k} = {getattr(cfg, v)}" for k, v in _TOP_KEYS.items()]
    return "\n".join(lines) + "\n"


def with_overrides(cfg: ExperimentConfig, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    if seed is not None:
        cfg = replace(cfg, training=replace(cfg.training, seed=seed))
    if out is not None:
        cfg = replace(cfg, output_dir=out)
    return cfg.validate()


# -- shared plumbing --------------------------------------------------------

def make_tasks(env: Environment, n_train: int, n_eval: int, seed: int) -> tuple[list[TaskInstance], list[TaskInstance]]:
    """One task stream per seed: the first ``n_train`` tasks train, the rest are held out."""
    tasks = env.generate_tasks(n_train + n_eval, np.random.default_rng(seed))
    return tasks[:n_train], tasks[n_train:]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(cfg: ExperimentConfig, command: str, inputs: Sequence[Path], outputs: Sequence[Path]) -> None:
    out = cfg.out
    resolved = out / "config.resolved"
    lines = [f"command = {command}", f"seed = {cfg.training.seed}", f"config_sha256 = {_sha256(resolved)}"]
    lines += [f"input {p.relative_to(out) if p.is_relative_to(out) else p} = {_sha256(p)}" for p in inputs]
    lines += [f"output {p.relative_to(out)} = {_sha256(p)}" for p in outputs]
    (out / f"manifest.{command}.txt").write_text("\n".join(lines) + "\n")


def _start(cfg: ExperimentConfig) -> Environment:
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "config.resolved").write_text(render_config(cfg))
    return make_env(cfg.env)


def _require(path: Path) -> Path:
    if not path.is_file():
        raise DataError(f"missing input {path}; run the earlier phase first")
    return path


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[dict | Sequence]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row.get(h, "")) for h in header] if isinstance(row, dict) else [_fmt(v) for v in row])


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _read_csv(path: Path) -> list[dict]:
    with _require(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _load_il_data(cfg: ExperimentConfig, agent: Agent):
    try:
        planner = read_planner_examples(_require(cfg.out / PLANNER_DATA))
        reflector = read_reflector_examples(_require(cfg.out / REFLECTOR_DATA))
    except (ValueError, IndexError) as exc:
        raise DataError(f"corrupt imitation dataset: {exc}") from None
    if any(e.table_size != agent.table_size for e in planner):
        raise DataError("planner dataset was collected for a different action table")
    if any(e.alphabet_size != agent.alphabet_size or max(e.traj_features.indices, default=0) >= agent.layout.feature_dim
           for e in reflector):
        raise DataError("reflector dataset does not match this environment's feature layout")
    return prepare_planner_examples(planner, agent.layout), prepare_reflector_examples(reflector, agent.layout)


def _save_agent(agent: Agent, directory: Path) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / "planner.ckpt", directory / "reflector.ckpt"]
    save_checkpoint(agent.planner, paths[0])
    save_checkpoint(agent.reflector, paths[1])  # shared mode writes the same matrix twice
    return paths


def _load_agent(env: Environment, cfg: ExperimentConfig, directory: Path) -> Agent:
    template = Agent.init(env, cfg.training)
    try:
        planner = load_checkpoint(_require(directory / "planner.ckpt"))
        reflector = planner if planner.role == SHARED else load_checkpoint(_require(directory / "reflector.ckpt"))
    except (ValueError, KeyError, IndexError) as exc:
        raise DataError(f"corrupt checkpoint in {directory}: {exc}") from None
    for got, want in ((planner, template.planner), (reflector, template.reflector)):
        if got.role != want.role or got.values.shape != want.values.shape:
            raise DataError(f"checkpoint in {directory} does not fit this config ({got.role} {got.values.shape}, "
                            f"expected {want.role} {want.values.shape})")
    return Agent(planner, reflector, template.layout, template.table_size, template.alphabet_size)


def _eval_row(result) -> dict:
    return {"eval_IR": result.IR, "eval_FR": result.FR, "eval_AR": result.AR}


# -- subcommands ------------------------------------------------------------

def cmd_collect(cfg: ExperimentConfig) -> dict:
    env = _start(cfg)
    train, _ = make_tasks(env, cfg.train_tasks, cfg.eval_tasks, cfg.training.seed)
    layout = Agent.init(env, cfg.training).layout
    seqs = collect_expert_trials(env, train, cfg.training.K, env.config.expert_error_rate, cfg.training.seed)
    planner, reflector = build_il_datasets(seqs, env, layout)
    header = manifest_line(env.config, cfg.training.seed, env.config.expert_error_rate, cfg.training.K)
    out = cfg.out
    write_planner_examples(out / PLANNER_DATA, planner, header)
    write_reflector_examples(out / REFLECTOR_DATA, reflector, header)
    (out / "expert.log").write_text("".join(line + "\n" for s in seqs for t in s.trials for line in format_trajectory(t)))
    stats = dataset_stats(planner, reflector, env.kind)
    _write_csv(out / "dataset_stats.csv", STATS_HEADER, [stats])
    _write_manifest(cfg, "collect", [], [out / n for n in (PLANNER_DATA, REFLECTOR_DATA, "expert.log", "dataset_stats.csv")])
    return stats


def cmd_train_il(cfg: ExperimentConfig) -> list[dict]:
    env = _start(cfg)
    _, eval_tasks = make_tasks(env, cfg.train_tasks, cfg.eval_tasks, cfg.training.seed)
    agent = Agent.init(env, cfg.training)
    planner_il, reflector_il = _load_il_data(cfg, agent)
    history = train_il(agent, planner_il, reflector_il, cfg.training, cfg.ablations)
    result = evaluate(agent, env, eval_tasks, cfg.training.K, cfg.training.eval_temperature, cfg.training.seed,
                      not cfg.disable_reflection, stream=0)
    if not history:
        history = [{"phase": "il", "iteration": 0, "planner_loss": math.nan, "reflector_loss": math.nan}]
    history[-1].update(_eval_row(result))
    ckpts = _save_agent(agent, cfg.out / IL_DIR)
    _write_csv(cfg.out / "history.csv", HISTORY_COLUMNS, history)
    _write_manifest(cfg, "train-il", [cfg.out / PLANNER_DATA, cfg.out / REFLECTOR_DATA],
                    ckpts + [cfg.out / "history.csv"])
    return history


def cmd_train_rl(cfg: ExperimentConfig) -> list[dict]:
    env = _start(cfg)
    train, eval_tasks = make_tasks(env, cfg.train_tasks, cfg.eval_tasks, cfg.training.seed)
    agent = _load_agent(env, cfg, cfg.out / IL_DIR)
    planner_il, reflector_il = _load_il_data(cfg, agent)
    history = [row for row in _read_csv(cfg.out / "history.csv") if row["phase"] == "il"]
    buffers = Buffers.create(cfg.training.buffer_capacity)
    trace = []
    for it in range(cfg.training.rl_iterations):
        row, tr = train_rl_iteration(agent, env, train, buffers, planner_il, reflector_il, cfg.training, it,
                                     cfg.ablations)
        result = evaluate(agent, env, eval_tasks, cfg.training.K, cfg.training.eval_temperature, cfg.training.seed,
                          not cfg.disable_reflection, stream=it + 1)
        row.update(_eval_row(result))
        history.append(row)
        trace.extend(tr)
        log.info("rl iteration %d: IR %.1f FR %.1f AR %.1f", it, result.IR, result.FR, result.AR)
    inputs = [cfg.out / IL_DIR / "planner.ckpt", cfg.out / IL_DIR / "reflector.ckpt",
              cfg.out / PLANNER_DATA, cfg.out / REFLECTOR_DATA]
    ckpts = _save_agent(agent, cfg.out / RL_DIR)
    _write_csv(cfg.out / "history.csv", HISTORY_COLUMNS, history)
    _write_csv(cfg.out / "grad_trace.csv", TRACE_COLUMNS, trace)
    _write_manifest(cfg, "train-rl", inputs, ckpts + [cfg.out / "history.csv", cfg.out / "grad_trace.csv"])
    return history


def cmd_evaluate(cfg: ExperimentConfig, checkpoint: str | Path | None = None) -> dict:
    """Greedy K-trial rollouts from a checkpoint directory (default: the latest phase)."""
    env = _start(cfg)
    _, eval_tasks = make_tasks(env, cfg.train_tasks, cfg.eval_tasks, cfg.training.seed)
    if checkpoint is None:
        checkpoint = cfg.out / (RL_DIR if (cfg.out / RL_DIR / "planner.ckpt").is_file() else IL_DIR)
    checkpoint = Path(checkpoint)
    agent = _load_agent(env, cfg, checkpoint)
    K = cfg.training.K
    result = evaluate(agent, env, eval_tasks, K, cfg.training.eval_temperature, cfg.training.seed,
                      not cfg.disable_reflection, stream=0)
    out = cfg.out
    rows = [(s.task_id, k, r) for s in result.sequences for k, r in enumerate(trial_rewards(s))]
    _write_csv(out / "rewards.csv", ("task_id", "trial", "reward"), rows)
    metrics = {"run": cfg.name, "task_count": len(eval_tasks), "K": K, "IR": result.IR, "FR": result.FR, "AR": result.AR}
    _write_csv(out / "metrics.csv", METRICS_HEADER, [metrics])
    (out / "trajectories.log").write_text(
        "".join(line + "\n" for s in result.sequences for t in s.trials for line in format_trajectory(t)))
    _write_manifest(cfg, "evaluate", [checkpoint / "planner.ckpt", checkpoint / "reflector.ckpt"],
                    [out / "rewards.csv", out / "metrics.csv", out / "trajectories.log"])
    return metrics


def read_rewards(path: str | Path) -> list[list[float]]:
    """Per-task reward lists from an evaluate ``rewards.csv``, in file order."""
    tasks: dict[str, list[float]] = {}
    for row in _read_csv(Path(path)):
        tasks.setdefault(row["task_id"], []).append(float(row["reward"]))
    return list(tasks.values())


def cmd_report(run_dirs: Sequence[str | Path], out: str | Path) -> list[dict]:
    """Join runs' metrics into one comparison table plus a (lambda, IR, FR, AR) sweep view."""
    rows, sweep = [], []
    for d in map(Path, run_dirs):
        metrics = _read_csv(d / "metrics.csv")
        if len(metrics) != 1 or tuple(metrics[0]) != METRICS_HEADER:
            raise DataError(f"{d / 'metrics.csv'} is not a single-run metrics file")
        cfg = parse_config(_require(d / "config.resolved"))
        m = metrics[0]
        rows.append(m)
        sweep.append({"lambda": cfg.training.lambda_planner, "IR": m["IR"], "FR": m["FR"], "AR": m["AR"]})
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "report.csv", METRICS_HEADER, rows)
    sweep.sort(key=lambda r: r["lambda"])
    _write_csv(out / "lambda_sweep.csv", SWEEP_HEADER, sweep)
    return rows


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="run directory (overrides output_dir)")
    parser = argparse.ArgumentParser(prog="reflectrl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("collect", "train-il", "train-rl"):
        sub.add_parser(name, parents=[common])
    ev = sub.add_parser("evaluate", parents=[common])
    ev.add_argument("--checkpoint", help="checkpoint directory (default: rl/ if present, else il/)")
    rep = sub.add_parser("report")
    rep.add_argument("runs", nargs="+", help="run directories holding metrics.csv")
    rep.add_argument("--out", required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            cmd_report(args.runs, args.out)
            return EXIT_OK
        cfg = with_overrides(parse_config(args.config), args.seed, args.out)
        if args.command == "collect":
            print(cmd_collect(cfg))
        elif args.command == "train-il":
            print(cmd_train_il(cfg)[-1])
        elif args.command == "train-rl":
            history = cmd_train_rl(cfg)
            print(history[-1])
        else:
            print(cmd_evaluate(cfg, args.checkpoint))
    except (ConfigError, EnvConfigError, TrainingConfigError, PolicyConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
