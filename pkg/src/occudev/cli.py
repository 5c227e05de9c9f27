"""Command line interface: occudev <experiment> --config cfg.json [...]."""

from __future__ import annotations

import argparse
import sys

from occudev.config import EXPERIMENTS, ConfigError, ExperimentConfig
from occudev.harness import EXIT_CONFIG, dump_json, replay_sample, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="occudev",
        description="Monte Carlo checks of the occupation-time arcsine law "
        "and its curvature deviation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True, help="path to the JSON config")
        sp.add_argument("--seed", type=int, default=None, help="override master_seed")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: config, then OCCUDEV_THREADS)")
        sp.add_argument("--out", default=None, help="override output_dir")
    rp = sub.add_parser("replay", help="re-run one replication and print it as JSON")
    rp.add_argument("--config", required=True, help="path to the JSON config")
    rp.add_argument("--replicate", type=int, required=True, help="replicate index")
    rp.add_argument("--t-index", type=int, default=0,
                    help="index into t_grid (default 0)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ExperimentConfig.from_file(args.config)
        if args.command == "replay":
            sample = replay_sample(config, args.replicate, args.t_index)
            sys.stdout.write(dump_json(sample.to_dict()) + "\n")
            return 0
        if config.experiment != args.command:
            raise ConfigError(
                f"config is for experiment {config.experiment!r}, "
                f"but {args.command!r} was requested"
            )
        config = config.with_overrides(
            master_seed=args.seed, threads=args.threads, output_dir=args.out
        )
        return run_experiment(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
