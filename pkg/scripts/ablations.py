"""Which component's training matters: joint vs frozen planner vs frozen reflector vs no reflection.

    python3 scripts/ablations.py --env graphqa --seeds 0 1 2
"""

import argparse

from reflectrl import cli
from reflectrl.envs import EnvConfig, make_env
from reflectrl.training import Ablations, TrainingConfig, run_practical_framework

ARMS = {
    "joint": Ablations(),
    "frozen-planner": Ablations(freeze_planner=True),
    "frozen-reflector": Ablations(freeze_reflector=True),
    "no-reflection": Ablations(disable_reflection=True),
}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--env", default="graphqa", choices=["graphqa", "gridhouse", "setquery"])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--train-tasks", type=int, default=200)
    parser.add_argument("--eval-tasks", type=int, default=100)
    args = parser.parse_args()

    env = make_env(EnvConfig(args.env))
    print("seed,arm,IL_AR,IR,FR,AR,FR_minus_IR")
    for seed in args.seeds:
        train, ev = cli.make_tasks(env, args.train_tasks, args.eval_tasks, seed)
        for name, ablations in ARMS.items():
            res = run_practical_framework(env, train, ev, TrainingConfig(seed=seed), ablations)
            il = [row for row in res.history if row["phase"] == "il"][-1]
            last = res.history[-1]
            print(f"{seed},{name},{il['eval_AR']:.1f},{last['eval_IR']:.1f},{last['eval_FR']:.1f},"
                  f"{last['eval_AR']:.1f},{last['eval_FR'] - last['eval_IR']:.1f}", flush=True)


if __name__ == "__main__":
    main()
