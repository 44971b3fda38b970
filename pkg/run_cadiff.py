#!/usr/bin/env python3

import logging
import sys
from argparse import ArgumentParser, Namespace
from pathlib import Path

import numpy
from pydantic import TypeAdapter

from cadiff import (
    SuiteReport,
    Trajectory,
    VerifySuite,
    ablation_study,
    evaluate,
    latest_checkpoint,
    parse_config_file,
    parse_grid_file,
    read_mdp,
    run_suite,
    sweep,
    train,
    verify_mdp,
)
from cadiff.errors import ConfigError
from cadiff.run_config import parse_run_config
from config import CHECKPOINT_DIR, EXIT_CONFIG_ERROR, EXIT_VERIFICATION_FAILURE, VERIFY_SUITES

logger = logging.getLogger("cadiff")


def load_config(args: Namespace, **overrides):
    if args.config:
        return parse_config_file(Path(args.config), **overrides)
    return parse_run_config("", **overrides)


def write_output(path: str | None, payload: str) -> None:
    if path is None:
        print(payload)
        return
    with open(path, "w", encoding="utf-8") as f:
        f.write(payload)
    logger.info("wrote %s", path)


def run_train(args: Namespace) -> int:
    ablations = [flag.strip() for flag in args.ablate.split(",") if flag.strip()] if args.ablate else None
    cfg = load_config(
        args, seed=args.seed, ablations=ablations, run_dir=args.run_dir, total_steps=args.total_steps
    )
    run_dir = train(cfg)
    logger.info("run finished in %s", run_dir)
    return 0


def run_eval(args: Namespace) -> int:
    checkpoint = Path(args.ckpt)
    if (checkpoint / CHECKPOINT_DIR).is_dir():
        checkpoint = latest_checkpoint(checkpoint)
    trajectory = Trajectory() if args.trajectory else None
    report = evaluate(checkpoint, None, args.episodes, numpy.random.default_rng(args.seed), trajectory)
    if trajectory is not None:
        trajectory.dump(Path(args.trajectory))
    write_output(args.output, report.model_dump_json(indent=2))
    return 0


def run_verify(args: Namespace) -> int:
    if args.mdp:
        reports = verify_mdp(read_mdp(Path(args.mdp)))
    else:
        suites = VERIFY_SUITES if args.suite == "all" else [args.suite]
        reports = [
            run_suite(VerifySuite(name), args.jobs, args.instances, args.seed, args.full) for name in suites
        ]
    write_output(args.output, TypeAdapter(list[SuiteReport]).dump_json(reports, indent=2).decode("utf-8"))

    failed = [report for report in reports if not report.passed]
    for report in failed:
        seeds = sorted({violation.seed for violation in report.violations})
        logger.error("suite %s violated on seeds %s", report.suite.value, seeds)
    return EXIT_VERIFICATION_FAILURE if failed else 0


def run_sweep(args: Namespace) -> int:
    base = load_config(args, run_dir=args.run_dir)
    report = sweep(base, parse_grid_file(Path(args.grid)), args.jobs)
    write_output(args.output, report.model_dump_json(indent=2))
    return 0


def run_ablate(args: Namespace) -> int:
    base = load_config(args, run_dir=args.run_dir)
    seeds = [base.seed + offset for offset in range(args.seeds)]
    report = ablation_study(base, seeds, args.jobs)
    write_output(args.output, report.model_dump_json(indent=2))
    return 0


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(description="Train, evaluate and verify causal-state denoising agents.")
    parser.add_argument(
        "--log-level",
        help="Set the logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)",
        default="INFO",
        type=str.upper,
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train_parser = commands.add_parser("train", help="Train an agent from a run config file")
    train_parser.add_argument("-c", "--config", help="Path to the run config file", default=None)
    train_parser.add_argument("-s", "--seed", help="Override the config seed", type=int, default=None)
    train_parser.add_argument(
        "--ablate", help="Comma-separated features to disable (no_bisim,no_reward_denoise,no_obs_denoise)"
    )
    train_parser.add_argument("--total-steps", help="Override the number of environment steps", type=int)
    train_parser.add_argument("--run-dir", help="Override the output directory", default=None)
    train_parser.set_defaults(handler=run_train)

    eval_parser = commands.add_parser("eval", help="Roll out the deterministic policy of a checkpoint")
    eval_parser.add_argument("--ckpt", help="Checkpoint directory or run directory (latest checkpoint)", required=True)
    eval_parser.add_argument("-n", "--episodes", help="Number of evaluation episodes", type=int, default=10)
    eval_parser.add_argument("-s", "--seed", help="Seed of the evaluation episodes", type=int, default=0)
    eval_parser.add_argument("-o", "--output", help="Path to the output JSON file (default: stdout)")
    eval_parser.add_argument("-t", "--trajectory", help="Path to a CSV file receiving every evaluation step")
    eval_parser.set_defaults(handler=run_eval)

    verify_parser = commands.add_parser("verify", help="Run the randomized oracle suites")
    verify_parser.add_argument("--suite", help="Suite to run", default="all", choices=VERIFY_SUITES + ["all"])
    verify_parser.add_argument("--mdp", help="Run every bisimulation check on an MDP table file instead")
    verify_parser.add_argument("--instances", help="Override the number of seeded instances", type=int)
    verify_parser.add_argument("-s", "--seed", help="First instance seed", type=int, default=0)
    verify_parser.add_argument("--full", help="Include the trained mixture-denoising check", action="store_true")
    verify_parser.add_argument("-o", "--output", help="Path to the output JSON report (default: stdout)")
    verify_parser.set_defaults(handler=run_verify)

    sweep_parser = commands.add_parser("sweep", help="Train over a noise scale x noise intensity grid")
    sweep_parser.add_argument("-c", "--config", help="Path to the base run config file", default=None)
    sweep_parser.add_argument("-g", "--grid", help="Path to the sweep grid file", required=True)
    sweep_parser.add_argument("--run-dir", help="Override the output directory", default=None)
    sweep_parser.add_argument("-o", "--output", help="Path to the output JSON table (default: stdout)")
    sweep_parser.set_defaults(handler=run_sweep)

    ablate_parser = commands.add_parser("ablate", help="Compare single-feature ablations on paired seeds")
    ablate_parser.add_argument("-c", "--config", help="Path to the base run config file", default=None)
    ablate_parser.add_argument("--seeds", help="Number of paired seeds", type=int, default=5)
    ablate_parser.add_argument("--run-dir", help="Override the output directory", default=None)
    ablate_parser.add_argument("-o", "--output", help="Path to the output JSON report (default: stdout)")
    ablate_parser.set_defaults(handler=run_ablate)

    for sub in (verify_parser, sweep_parser, ablate_parser):
        sub.add_argument(
            "-j",
            "--jobs",
            help="Number of parallel jobs (default: 1)",
            type=int,
            default=1,
        )
    return parser


def main() -> None:
    args = build_parser().parse_args()
    logging.basicConfig(level=args.log_level)
    try:
        status = args.handler(args)
    except ConfigError as e:
        logger.error("configuration error: %s", e)
        status = EXIT_CONFIG_ERROR
    sys.exit(status)


if __name__ == "__main__":
    main()
