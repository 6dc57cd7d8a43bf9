"""Command-line entry: ``report <kind> --in PATH [--in PATH2] --out PATH.png``."""

from __future__ import annotations

import argparse
import sys

from .plots import (
    SchemaError,
    plot_alpha_sweep,
    plot_attention,
    plot_level_f1,
    plot_losses,
    plot_taxonomy,
)

KINDS = {
    "losses": plot_losses,
    "level-f1": plot_level_f1,
    "taxonomy": plot_taxonomy,
    "alpha-sweep": plot_alpha_sweep,
    "attention": plot_attention,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="report", description="Render figures from run outputs")
    parser.add_argument("kind", choices=sorted(KINDS))
    parser.add_argument("--in", dest="inputs", action="append", required=True,
                        help="input file (repeat for figures that take two)")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--title", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if len(args.inputs) != 1:
        print(f"error: {args.kind} takes exactly one --in file", file=sys.stderr)
        return 2
    try:
        KINDS[args.kind](args.inputs[0], args.out, title=args.title)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
