"""Command-line front door: generate, extract, composite, evaluate.

Exit codes: 0 success, 2 usage error (bad flags or unparseable config),
3 I/O error (missing or unwritable files), 4 validation failure (inconsistent
or mismatched data).
"""

import argparse
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_VALIDATION = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refmatte",
        description="Refractive-flow matting toolkit: synthetic dataset "
        "generation, Gray-code matte extraction, compositing and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="render a synthetic matte dataset")
    gen.add_argument("--config", required=True, help="pipeline config file")
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument("--count", type=int, default=10, help="number of samples")
    gen.add_argument("--seed", type=int, default=0, help="dataset seed")
    gen.add_argument("--jobs", type=int, default=1, help="parallel workers")

    ext = sub.add_parser("extract", help="decode a capture stack into a matte")
    ext.add_argument("--capture", required=True, help="capture directory (stack.ini)")
    ext.add_argument("--out", required=True, help="output matte directory")

    comp = sub.add_parser("composite", help="composite a matte onto a background")
    comp.add_argument("--matte", required=True, help="matte directory")
    comp.add_argument("--background", required=True, help="new background image")
    comp.add_argument("--out", required=True, help="output PNG path")

    ev = sub.add_parser("evaluate", help="score predicted mattes against a dataset")
    ev.add_argument("--pred", required=True, help="directory of predicted mattes")
    ev.add_argument("--gt", required=True, help="generated dataset directory")
    ev.add_argument("--out", required=True, help="CSV report path")
    return parser


def _cmd_generate(args) -> int:
    from .fileio import read_pipeline_config
    from .pipeline import generate_dataset

    try:
        config = read_pipeline_config(args.config)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: invalid config: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.count < 0 or args.jobs < 1:
        print("error: --count must be >= 0 and --jobs >= 1", file=sys.stderr)
        return EXIT_USAGE
    manifest = generate_dataset(config, args.out, args.count, args.seed, args.jobs)
    print(f"generated {len(manifest)} samples under {args.out}")
    return EXIT_OK


def _cmd_extract(args) -> int:
    from .pipeline import extract_capture

    matte = extract_capture(args.capture, args.out)
    bad = int(((matte.mask > 0) & ~matte.flow.valid).sum())
    print(f"extracted matte to {args.out} ({bad} undecodable in-mask pixels)")
    return EXIT_OK


def _cmd_composite(args) -> int:
    from .pipeline import composite_matte

    composite_matte(args.matte, args.background, args.out)
    print(f"wrote composite {args.out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    from .pipeline import REPORT_FIELDS, evaluate_dataset

    rows = evaluate_dataset(args.pred, args.gt, args.out)
    for name in ("aggregate", "background"):
        rep = rows[name]
        summary = ", ".join(f"{k}={getattr(rep, k):.4g}" for k in REPORT_FIELDS)
        print(f"{name}: {summary}")
    print(f"wrote report {args.out}")
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "extract": _cmd_extract,
    "composite": _cmd_composite,
    "evaluate": _cmd_evaluate,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (FileNotFoundError, PermissionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
