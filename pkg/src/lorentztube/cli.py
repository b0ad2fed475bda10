"""Command-line entry points.

    lorentztube validate   --spec FILE --out DIR [--seed N] [--workers K]
    lorentztube orbit      --spec FILE --out DIR [--seed N]
    lorentztube recurrence --spec FILE --out DIR [--seed N] [--workers K]
    lorentztube schmidt    --spec FILE --out DIR [--seed N] [--workers K]
    lorentztube plotdata   --from DIR --out DIR

The subcommand must match the experiment kind declared in the spec file.
Worker count changes scheduling only, never output content; data files are
byte-identical across reruns with the same seed.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .specio import SpecError, parse_spec, replay_plot_data, run


def _add_common(sub, workers=True):
    sub.add_argument("--spec", required=True, help="path to the spec JSON file")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the spec's master seed")
    if workers:
        sub.add_argument("--workers", type=int, default=1,
                         help="worker threads (content-neutral)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lorentztube",
                                     description="quenched random Lorentz tube simulator")
    subs = parser.add_subparsers(dest="command", required=True)
    for name in ("validate", "orbit", "recurrence", "schmidt"):
        _add_common(subs.add_parser(name), workers=(name != "orbit"))
    plot = subs.add_parser("plotdata")
    plot.add_argument("--from", dest="run_dir", required=True,
                      help="directory of a finished recurrence run")
    plot.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "plotdata":
        return replay_plot_data(args.run_dir, args.out)
    try:
        spec = parse_spec(Path(args.spec).read_text())
    except (OSError, SpecError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    if args.command == "validate":
        # validation is a pre-flight check and runs on specs of any kind
        spec = replace(spec, kind="validate")
    elif spec.kind != args.command:
        print(f"error: spec declares kind {spec.kind!r} but the "
              f"{args.command!r} subcommand was invoked", file=sys.stderr)
        return 2
    out = args.out or spec.out
    if out is None:
        print("error: no output directory (pass --out or set experiment.out)",
              file=sys.stderr)
        return 2
    workers = getattr(args, "workers", 1)
    return run(spec, out, seed=args.seed, workers=workers)


if __name__ == "__main__":
    sys.exit(main())
