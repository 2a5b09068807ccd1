"""Command-line entry point: ``armreach <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 partial failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import harness
from .config import ConfigError, RunConfig
from .evaluation import rollouts
from .training import AgentFormatError, TrainedAgent
from .trajectory import write_trajectory

OK, CONFIG_ERROR, PARTIAL = 0, 2, 3

log = logging.getLogger("armreach")


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return RunConfig.load(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def cmd_train(args) -> int:
    run = _load_config(args.config)
    if args.seed is not None:
        run = dataclasses.replace(run, grid=dataclasses.replace(run.grid, seed=args.seed))

    def progress(e: dict) -> None:
        log.info("%s: %s (%.1f s)", e["cell"], e["status"], e["wall_time"])

    manifest = harness.train_grid(run, args.out, args.workers, args.paper_scale, progress)
    failed = harness.grid_failed(harness.scaled(run, args.paper_scale), manifest)
    if failed:
        log.error("%d cell(s) failed: %s", len(failed), ", ".join(failed))
        return PARTIAL
    return OK


def cmd_evaluate(args) -> int:
    _, skipped = harness.evaluate_run(args.run_dir, args.n_rollouts, lambda c: log.info("evaluated %s", c))
    return PARTIAL if skipped else OK


def cmd_report(args) -> int:
    _, written = harness.report_run(args.run_dir)
    for p in written:
        print(p)
    return OK


def cmd_rollout(args) -> int:
    agent = TrainedAgent.load(args.agent)
    (traj,) = rollouts(agent, 1, seed=args.seed)
    csv_path, side = write_trajectory(traj, args.out, agent.env_config.with_(mode="eval").to_dict())
    print(f"{csv_path} ({'success' if traj.success else 'no success'}, MT {traj.mt:.2f} s)")
    return OK


def cmd_validate(args) -> int:
    run = _load_config(args.config)
    print(f"ok: {len(run.grid.cells())} cells")
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="armreach", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the grid (resumable)")
    t.add_argument("--config", help="flat key = value config file (defaults if omitted)")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--seed", type=int, help="override grid.seed")
    t.add_argument("--workers", type=int, default=1)
    t.add_argument("--paper-scale", action="store_true", help=f"{harness.SCALE_UP_FACTOR}x optimizer iterations")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score every trained agent")
    e.add_argument("run_dir")
    e.add_argument("--n-rollouts", type=int, default=1000)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="write the results table and plots")
    r.add_argument("run_dir")
    r.set_defaults(func=cmd_report)

    o = sub.add_parser("rollout", help="dump one evaluation episode of an agent")
    o.add_argument("agent", help="agent file")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", required=True, help="trajectory CSV path (sidecar JSON beside it)")
    o.set_defaults(func=cmd_rollout)

    c = sub.add_parser("validate-config", help="parse and check a config file")
    c.add_argument("config")
    c.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    except (harness.RunError, AgentFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return PARTIAL


if __name__ == "__main__":
    sys.exit(main())
