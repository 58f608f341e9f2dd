"""Command-line entry points: collect, train, tasks, bench, run, serve."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import bench, flowmodel, planner, pushsim
from .imgrid import Dataset, load_dataset, save_dataset


def _load_predictor(spec: str, kappa: int = flowmodel.DEFAULT_KAPPA):
    if spec == "oracle":
        return flowmodel.OraclePredictor(kappa=kappa)
    return flowmodel.LearnedPredictor(flowmodel.load_params(spec))


def _cmd_collect(args) -> int:
    ds = bench.collect_random(args.episodes, args.steps, args.seed,
                              width=args.grid, height=args.grid)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} episodes x {args.steps} steps ({args.grid}x{args.grid}) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    ds = load_dataset(args.data)
    cfg_dict = {}
    if args.config:
        with open(args.config) as fh:
            cfg_dict = json.load(fh)
    if args.updates is not None:
        cfg_dict["updates"] = args.updates
    if args.lr is not None:
        cfg_dict["lr"] = args.lr
    cfg = flowmodel.TrainConfig.from_dict(cfg_dict)
    params = flowmodel.ModelParams.initialize(
        seed=cfg.seed, channels=args.channels, kappa=ds.kappa)
    params, curve = flowmodel.train(params, ds, cfg)
    flowmodel.save_params(params, args.out)
    print(f"trained {cfg.updates} updates; loss {curve[0]:.5f} -> {curve[-1]:.5f}; "
          f"checkpoint at {args.out}")
    return 0


def _cmd_tasks(args) -> int:
    tasks = bench.make_task_suite(grid=args.grid, base_seed=args.seed)
    bench.save_tasks(tasks, args.out, grid=args.grid)
    print(f"wrote {len(tasks)} tasks to {args.out}")
    return 0


def _cmd_bench(args) -> int:
    if args.tasks == "default":
        tasks = bench.make_task_suite(grid=args.grid)
    else:
        tasks = bench.load_tasks(args.tasks)
    predictor = _load_predictor(args.model)
    plan_cfg = planner.PlanConfig()
    methods = bench.standard_methods(predictor, plan_cfg)
    report = bench.evaluate(methods, tasks, base_seed=args.seed, plan_cfg=plan_cfg)
    bench.write_report(report, args.report)
    sys.stdout.write(report.to_text())
    return 0


def _cmd_run(args) -> int:
    with open(args.scene) as fh:
        scene = json.load(fh)
    env = pushsim.scene_from_config(scene)
    goal = planner.GoalSpec.parse(args.goal)
    predictor = _load_predictor(args.model)
    log = planner.run_mpc_episode(env, predictor, goal, planner.PlanConfig(),
                                  args.steps, np.random.default_rng(args.seed))
    summary = log.summary()
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.out:
        rec = log.to_episode_record()
        save_dataset(Dataset((rec,), env.height, env.width,
                             flowmodel.DEFAULT_KAPPA, args.seed), args.out)
        with open(args.out + ".summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        print(f"episode log written to {args.out}")
    return 0


def _cmd_serve(args) -> int:
    from . import service
    service.serve(port=args.port, model=args.model, grid=args.grid, seed=args.seed)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pixelpush",
                                     description="pixel-goal pushing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="collect random-push episodes")
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--steps", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_collect)

    p = sub.add_parser("train", help="train the flow model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--updates", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--channels", type=int, default=flowmodel.DEFAULT_CHANNELS)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("tasks", help="write the default task suite")
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_tasks)

    p = sub.add_parser("bench", help="evaluate all methods on a task suite")
    p.add_argument("--model", default="oracle", help="'oracle' or checkpoint path")
    p.add_argument("--tasks", default="default")
    p.add_argument("--report", required=True)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("run", help="run one MPC episode on a scene")
    p.add_argument("--model", default="oracle")
    p.add_argument("--scene", required=True, help="scene config JSON")
    p.add_argument("--goal", required=True, help='"xd,yd->xg,yg[;...]"')
    p.add_argument("--steps", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the episode log container here")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("serve", help="start the interactive planning service")
    p.add_argument("--port", type=int, default=8642)
    p.add_argument("--model", default="oracle")
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_serve)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
