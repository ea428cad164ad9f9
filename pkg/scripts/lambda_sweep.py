"""Regularizer sweep: run the full pipeline for each lambda and write a comparison report.

    python3 scripts/lambda_sweep.py --env graphqa --out runs/sweep
"""

import argparse
from dataclasses import replace
from pathlib import Path

from reflectrl import cli
from reflectrl.envs import EnvConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--env", default="graphqa", choices=["graphqa", "gridhouse", "setquery"])
    parser.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 1.0, 2.0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/sweep")
    args = parser.parse_args()

    base = cli.ExperimentConfig(env=EnvConfig(args.env))
    runs = []
    for lam in args.lambdas:
        training = replace(base.training, seed=args.seed, lambda_planner=lam, lambda_reflector=lam)
        cfg = replace(base, training=training, output_dir=str(Path(args.out) / f"lambda_{lam}")).validate()
        cli.cmd_collect(cfg)
        cli.cmd_train_il(cfg)
        cli.cmd_train_rl(cfg)
        print(lam, cli.cmd_evaluate(cfg))
        runs.append(cfg.out)
    cli.cmd_report(runs, Path(args.out) / "report")
    print((Path(args.out) / "report" / "lambda_sweep.csv").read_text(), end="")


if __name__ == "__main__":
    main()
