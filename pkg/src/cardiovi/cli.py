"""Command-line entry point: ``cardiovi <verb> [--config FILE] [--seed N] [--out DIR] [--set a.b=v ...]``.

Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .errors import ConfigurationError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _parser():
    parser = argparse.ArgumentParser(prog="cardiovi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    helps = {
        "recover": "synthetic ground-truth recovery (both stages)",
        "compare-manifold": "stage one on the isomap manifold vs raw 3D positions",
        "embed": "isomap embedding of the endocardium",
        "simulate": "one forward ECG simulation",
        "plot": "render SVG figures from a run directory",
    }
    for verb, text in helps.items():
        p = sub.add_parser(verb, help=text)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output (for plot: run) directory")
        p.add_argument("--set", action="append", default=[], metavar="PATH=VALUE", help="dotted-path override, e.g. stage1.budget=80")
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.verb == "plot":
            from .plots import emit_plots

            if args.out is None:
                raise ConfigurationError("plot needs --out <run directory>")
            for path in emit_plots(args.out):
                print(path)
            return EXIT_OK
        from .experiments import RUNNERS

        cfg = load_config(args.config, args.set, seed=args.seed, out=args.out)
        result = RUNNERS[args.verb](cfg)
        if isinstance(result, dict):
            scalars = {k: v for k, v in result.items() if not isinstance(v, list)}
            print(json.dumps(scalars, indent=2, sort_keys=True))
        print(f"wrote {cfg.out}")
        return EXIT_OK
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:  # any other failure is a runtime error with context
        print(f"runtime error during {args.verb}: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
