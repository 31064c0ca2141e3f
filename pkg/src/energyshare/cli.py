"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

import argparse
import logging
import os
import sys

from . import checkpoint
from .agents import TrainingDivergedError
from .config import ConfigError, load_config
from .env import MODES, critical_rate
from .harness import METRIC_COLUMNS, SWEEP_COLUMNS, SWEEPS, evaluate, to_csv

log = logging.getLogger("energyshare")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; that code is reserved for runtime failures
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides 'out')")
    common.add_argument("--seed", type=int, help="master seed (overrides 'seed')")
    common.add_argument("--workers", type=int, help="parallel jobs for sweeps")
    common.add_argument("--model", choices=MODES, help="controller to train or evaluate")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="energyshare",
                     description="Energy-sharing controllers for energy-harvesting sensor networks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("critical-rate", parents=[common],
                   help="print the largest sustainable total data rate")
    sub.add_parser("train", parents=[common], help="train one controller and save a checkpoint")
    ev = sub.add_parser("evaluate", parents=[common], help="evaluate a saved checkpoint")
    ev.add_argument("--checkpoint", metavar="DIR",
                    help="checkpoint directory (default: <out>/checkpoint)")
    sw = sub.add_parser("sweep", parents=[common], help="run a comparison sweep")
    sw.add_argument("--kind", choices=tuple(SWEEPS), help="sweep to run (overrides 'sweep.kind')")
    return parser


def _resolve(args):
    overrides = {}
    if args.out is not None:
        overrides["out"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
        overrides["sweep.seeds"] = [args.seed]
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.model is not None:
        overrides["model"] = args.model
    if getattr(args, "kind", None) is not None:
        overrides["sweep.kind"] = args.kind
    if getattr(args, "checkpoint", None) is not None:
        overrides["evaluate.checkpoint"] = args.checkpoint
    return load_config(args.config, overrides=overrides)


def _prepare_out(cfg, name):
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, f"{name}_config.yaml")
    cfg.save(path)
    return path


def cmd_critical_rate(cfg):
    print(f"{critical_rate(cfg.env_config()):.4f}")
    return EXIT_OK


def cmd_train(cfg):
    env = cfg.env_config()
    agent = cfg.make_agent()
    _prepare_out(cfg, "train")
    log_path = os.path.join(cfg.out, "training_log.csv")
    ckpt = os.path.join(cfg.out, "checkpoint")
    try:
        agent.fit(env)
    except TrainingDivergedError as exc:
        exc.log.to_csv(log_path)
        print(f"error: {exc}; partial log in {log_path}", file=sys.stderr)
        return EXIT_RUNTIME
    agent.training_log_.to_csv(log_path)
    checkpoint.save_agent(agent, ckpt)
    log.info("trained %s for %d episodes; checkpoint in %s", cfg.model, len(agent.training_log_), ckpt)
    return EXIT_OK


def cmd_evaluate(cfg):
    env = cfg.env_config()
    path = cfg["evaluate"]["checkpoint"] or os.path.join(cfg.out, "checkpoint")
    try:
        agent = checkpoint.load_agent(path, env)
    except checkpoint.CheckpointMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: cannot load checkpoint {path}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    ev = cfg["evaluate"]
    metrics = evaluate(env, agent, ev["horizon"], ev["burn_in"], cfg.eval_seeds(), ev["gamma"])
    _prepare_out(cfg, "evaluate")
    to_csv(metrics.rows(), METRIC_COLUMNS, os.path.join(cfg.out, "metrics.csv"))
    log.info("loss %.2f%%, average queue %.3f", metrics.data_loss_pct, metrics.avg_queue_length)
    return EXIT_OK


def cmd_sweep(cfg):
    spec = cfg.experiment_spec()
    kind = cfg["sweep"]["kind"]
    _prepare_out(cfg, f"sweep_{kind}")
    rows = SWEEPS[kind](spec)
    path = os.path.join(cfg.out, f"sweep_{kind}.csv")
    to_csv(rows, SWEEP_COLUMNS, path)
    failed = [r for r in rows if r["status"] == "error"]
    for r in failed:
        log.warning("cell %s/%s seed %s failed: %s", r["lambda_data"], r["model"], r["seed"], r["error"])
    if not any(r["status"] == "ok" for r in rows):
        print(f"error: every cell of the {kind} sweep failed; see {path}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


COMMANDS = {"critical-rate": cmd_critical_rate, "train": cmd_train,
            "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _resolve(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
