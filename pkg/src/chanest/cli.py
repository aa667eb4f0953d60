"""Command-line entry point.

Exit codes: 0 success, 1 I/O or other failure, 2 configuration or
argument error, 3 container format error, 4 numerical failure.
"""
import argparse
import logging
import sys

from .errors import ConfigError, ContainerFormatError, InvalidArgumentError, NumericalError
from .io import OUTPUT_ENV, load_config
from .pipeline import run_characterize, run_estimate, run_pipeline, run_synth

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERICAL = 0, 1, 2, 3, 4


def build_parser():
    parser = argparse.ArgumentParser(
        prog="chanest",
        description="Synthesize, estimate and characterize MIMO channel measurements.",
        epilog=f"Output root: --out, else the config's output.dir, else ${OUTPUT_ENV}, else ./chanest-out.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="campaign configuration (YAML)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")

    p = sub.add_parser("synth", help="write one container per position plus a truth manifest")
    common(p)
    p.add_argument("--seed-override", type=int, help="replace the scenario seed")

    p = sub.add_parser("estimate", help="extract SMC paths and fit DMC models")
    common(p)
    p.add_argument("containers", nargs="*", help="containers (default: <out>/containers/*.chtn)")
    p.add_argument("--k-max", type=int, help="maximum number of DMC delay processes")
    p.add_argument("--stop-db", type=float, help="SMC stop threshold relative to the first path (dB, <= 0)")

    p = sub.add_parser("characterize", help="build report tables and plot data from estimates")
    common(p)

    p = sub.add_parser("pipeline", help="synth, estimate and characterize in one go")
    common(p)
    p.add_argument("--seed-override", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--stop-db", type=float)
    return parser


def _check_args(args):
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    if getattr(args, "k_max", None) is not None and args.k_max < 1:
        raise ConfigError("--k-max must be >= 1")
    if getattr(args, "stop_db", None) is not None and args.stop_db > 0:
        raise ConfigError("--stop-db must be <= 0")
    if getattr(args, "seed_override", None) is not None and args.seed_override < 0:
        raise ConfigError("--seed-override must be >= 0")


def run(args):
    _check_args(args)
    cfg = load_config(args.config)
    out = cfg.resolve_output(args.out)
    if args.command == "synth":
        run_synth(cfg, out, args.seed_override, args.jobs)
    elif args.command == "estimate":
        containers = args.containers if args.containers else None
        run_estimate(cfg, out, containers, args.jobs, args.k_max, args.stop_db)
    elif args.command == "characterize":
        run_characterize(cfg, out, args.jobs)
    else:
        run_pipeline(cfg, out, args.seed_override, args.jobs, args.k_max, args.stop_db)
    return out


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors, which matches the config code
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except ContainerFormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
