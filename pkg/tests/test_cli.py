import csv
from dataclasses import replace

import numpy as np
import pytest

from reflectrl import cli
from reflectrl.metrics import aggregate_metrics
from reflectrl.envs import make_env
from reflectrl.training import run_practical_framework

SMALL = """
env_kind = graphqa
train_tasks = 30
eval_tasks = 15
K = 3
rl_iterations = 1
rl_epochs_per_iteration = 1
"""


def run_pipeline(out, text=SMALL, *extra):
    cfg_path = out.parent / f"{out.name}.cfg"
    cfg_path.write_text(text)
    for cmd in ("collect", "train-il", "train-rl", "evaluate"):
        assert cli.main([cmd, "--config", str(cfg_path), "--out", str(out), *extra]) == 0
    return cfg_path


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "small"
    cfg_path = run_pipeline(out)
    return out, cfg_path


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- config parsing ---------------------------------------------------------

def test_empty_config_is_all_defaults():
    assert cli.parse_config_text("") == cli.ExperimentConfig()
    assert cli.parse_config_text("# only a comment\n\n") == cli.ExperimentConfig()
    assert cli.parse_config(None) == cli.ExperimentConfig()


def test_keys_reach_their_section():
    cfg = cli.parse_config_text("epsilon = 0.2\nenv_kind = setquery\nenv_seed = 4\nseed = 9  # trailing\nfreeze_reflector = true")
    assert cfg.training.epsilon == 0.2 and cfg.training.seed == 9
    assert cfg.env.env_kind == "setquery" and cfg.env.seed == 4
    assert cfg.freeze_reflector and cfg.ablations.freeze_reflector


@pytest.mark.parametrize("text, line, key", [
    ("epsilon = 1.5", 1, "epsilon"),
    ("\nK = ten", 2, "K"),
    ("K = 3\nbogus = 1", 2, "bogus"),
    ("expert_error_rate = 2", 1, "expert_error_rate"),
    ("freeze_planner = true\nK = 2\nfreeze_reflector = true", 3, "freeze_reflector"),
])
def test_parse_errors_name_line_and_key(text, line, key):
    with pytest.raises(cli.ConfigError) as err:
        cli.parse_config_text(text, "x.cfg")
    assert f"x.cfg:{line}" in str(err.value) and key in str(err.value)


def test_missing_equals_is_an_error():
    with pytest.raises(cli.ConfigError, match="x.cfg:1"):
        cli.parse_config_text("epsilon 0.2", "x.cfg")


def test_both_freezes_are_fine_without_rl():
    cfg = cli.parse_config_text("freeze_planner = true\nfreeze_reflector = true\nrl_iterations = 0")
    assert cfg.freeze_planner and cfg.freeze_reflector


def test_render_round_trips():
    cfg = cli.parse_config_text("env_kind = gridhouse\nlambda_planner = 2.0\nK = 4\nrun_name = abc\nshared_params = true")
    text = cli.render_config(cfg)
    again = cli.parse_config_text(text)
    assert cli.render_config(again) == text
    assert again.training == cfg.training and again.run_name == "abc"


def test_overrides_replace_seed_and_output():
    cfg = cli.with_overrides(cli.ExperimentConfig(), seed=5, out="elsewhere")
    assert cfg.training.seed == 5 and cfg.output_dir == "elsewhere" and cfg.name == "elsewhere"


# -- exit codes -------------------------------------------------------------

def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("epsilon = 1.5\n")
    assert cli.main(["collect", "--config", str(bad), "--out", str(tmp_path / "r")]) == 2
    assert "bad.cfg:1" in capsys.readouterr().err
    assert cli.main(["collect", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_missing_inputs_exit_3(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL)
    assert cli.main(["train-il", "--config", str(cfg), "--out", str(tmp_path / "empty")]) == 3
    assert cli.main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "empty")]) == 3
    assert cli.main(["report", str(tmp_path / "empty"), "--out", str(tmp_path / "rep")]) == 3


# -- pipeline ---------------------------------------------------------------

def test_pipeline_writes_every_artifact(run):
    out, _ = run
    for name in ("planner_il.tsv", "reflector_il.tsv", "expert.log", "dataset_stats.csv", "il/planner.ckpt",
                 "il/reflector.ckpt", "rl/planner.ckpt", "rl/reflector.ckpt", "history.csv", "grad_trace.csv",
                 "rewards.csv", "metrics.csv", "trajectories.log", "config.resolved"):
        assert (out / name).is_file(), name
    for cmd in ("collect", "train-il", "train-rl", "evaluate"):
        text = (out / f"manifest.{cmd}.txt").read_text()
        assert "sha256" in text or len(text.split()) > 2
    assert (out / "metrics.csv").read_text().splitlines()[0] == "run,task_count,K,IR,FR,AR"
    phases = [row["phase"] for row in read(out / "history.csv")]
    assert phases.count("rl") == 1 and phases[0] == "il"


def test_metrics_agree_with_the_reward_file(run):
    out, _ = run
    m = read(out / "metrics.csv")[0]
    rewards = cli.read_rewards(out / "rewards.csv")
    assert len(rewards) == int(m["task_count"]) == 15
    ir, fr, ar = aggregate_metrics(rewards, int(m["K"]))
    assert (float(m["IR"]), float(m["FR"]), float(m["AR"])) == pytest.approx((ir, fr, ar), abs=1e-9)


def test_evaluate_twice_gives_identical_bytes(run, tmp_path):
    out, cfg_path = run
    before = {n: (out / n).read_bytes() for n in ("rewards.csv", "metrics.csv", "trajectories.log")}
    assert cli.main(["evaluate", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert before == {n: (out / n).read_bytes() for n in before}


def test_pipeline_matches_in_process_training(run):
    out, cfg_path = run
    cfg = cli.with_overrides(cli.parse_config(cfg_path), out=str(out))
    env = make_env(cfg.env)
    train, ev = cli.make_tasks(env, cfg.train_tasks, cfg.eval_tasks, cfg.training.seed)
    res = run_practical_framework(env, train, ev, cfg.training, cfg.ablations)
    agent = cli._load_agent(env, cfg, out / "rl")
    assert np.array_equal(agent.planner.values, res.agent.planner.values)
    assert np.array_equal(agent.reflector.values, res.agent.reflector.values)


def test_disable_reflection_reports_equal_metrics(run):
    out, cfg_path = run
    cfg = replace(cli.with_overrides(cli.parse_config(cfg_path), out=str(out)), disable_reflection=True,
                  run_name="react")
    m = cli.cmd_evaluate(cfg, out / "il")
    assert m["IR"] == m["FR"] == m["AR"]
    cli.cmd_evaluate(cli.with_overrides(cli.parse_config(cfg_path), out=str(out)))  # restore outputs


def test_k1_gives_fr_equal_ir(run, tmp_path):
    out, cfg_path = run
    cfg = cli.with_overrides(cli.parse_config(cfg_path), out=str(tmp_path))
    cfg = replace(cfg, training=replace(cfg.training, K=1))
    m = cli.cmd_evaluate(cfg, out / "il")
    assert m["IR"] == m["FR"] == m["AR"]


def test_report_builds_a_lambda_sweep(tmp_path):
    runs = []
    for lam in (2.0, 0.0):
        out = tmp_path / f"lam{lam}"
        run_pipeline(out, SMALL + f"lambda_planner = {lam}\nlambda_reflector = {lam}\n")
        runs.append(out)
    assert cli.main(["report", *map(str, runs), "--out", str(tmp_path / "rep")]) == 0
    report = read(tmp_path / "rep" / "report.csv")
    assert [r["run"] for r in report] == ["lam2.0", "lam0.0"]
    sweep = read(tmp_path / "rep" / "lambda_sweep.csv")
    assert list(sweep[0]) == ["lambda", "IR", "FR", "AR"]
    assert [float(r["lambda"]) for r in sweep] == [0.0, 2.0]
    trace = read(runs[1] / "grad_trace.csv")
    assert trace and all(float(r["reg_grad_norm"]) == 0.0 for r in trace)
