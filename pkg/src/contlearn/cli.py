"""Command-line entry point.

Commands: run, report, plot, convert, gradcheck. Exit codes:
    0  success
    2  configuration error (bad config file, unknown component, bad flags)
    3  data/format error (unreadable or malformed dataset/artifact files)
    4  numeric error (NaN losses, failed gradient checks)
    5  internal error (anything else)
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config, resolve_config
from .errors import (
    ConfigError,
    ContlearnError,
    DataError,
    FormatError,
    NumericError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_INTERNAL = 5


def _cmd_run(args) -> int:
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
    if args.out:
        raw["out_dir"] = args.out
    if args.threads is not None:
        raw["threads"] = args.threads
    if args.precision:
        raw["precision"] = args.precision
    if args.seeds:
        try:
            raw["seeds"] = [int(tok) for tok in args.seeds.split(",") if tok]
        except ValueError as exc:
            raise ConfigError(f"--seeds must be comma-separated integers: {exc}") from exc
    cfg = resolve_config(raw)
    from .runner import cmd_run

    cmd_run(cfg)
    return EXIT_OK


def _cmd_report(args) -> int:
    from .report import cmd_report

    text = cmd_report(args.run_dirs, args.out)
    print(text, end="")
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .plots import cmd_plot

    for path in cmd_plot(args.run_dirs, args.out):
        print(path)
    return EXIT_OK


def _cmd_convert(args) -> int:
    from .data import load_cifar100, load_raw_rgb_dump, write_tensor_archive

    if (args.cifar is None) == (args.raw is None):
        raise ConfigError("convert needs exactly one of --cifar or --raw")
    ds = load_cifar100(args.cifar) if args.cifar else load_raw_rgb_dump(args.raw)
    write_tensor_archive(args.out, ds)
    print(f"wrote {args.out} ({len(ds)} samples)")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .gradcheck import REL_TOL, run_suite

    results = run_suite(draws=args.draws, corrupt=args.corrupt, log=print)
    bad = sorted(name for name, err in results.items() if err >= REL_TOL)
    if bad:
        print(f"FAILED components: {', '.join(bad)}")
        raise NumericError(f"gradient check failed for: {', '.join(bad)}")
    print(f"all {len(results)} components below {REL_TOL:g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contlearn",
        description="Task-incremental continual-learning experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a config: all seeds, artifacts, summary")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override config out_dir")
    p.add_argument("--threads", type=int, help="parallel seeds (1 = bit-reproducible)")
    p.add_argument("--precision", choices=["f32", "f64"])
    p.add_argument("--seeds", help="override seed list, e.g. 1,2,3")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("report", help="tabulate ACC/BWT across run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True, help="output text file (CSV written beside it)")
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("plot", help="emit ACC/BWT-over-time SVG charts")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True, help="output directory for SVG files")
    p.set_defaults(fn=_cmd_plot)

    p = sub.add_parser("convert", help="convert raw inputs to a tensor archive")
    p.add_argument("--cifar", help="CIFAR-100 binary file")
    p.add_argument("--raw", help="raw RGB dump directory (images.raw/labels.bin/shape.json)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_convert)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer and loss")
    p.add_argument("--draws", type=int, default=20)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)  # fault-injection fixture
    p.set_defaults(fn=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, DataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ContlearnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - safety net
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
