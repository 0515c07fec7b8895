"""poolattn command-line driver.

Subcommands: flops, bench, equivalence, gradcheck, train-demo, coverage,
attn. Reports are UTF-8 JSON, newline-terminated, written to stdout and
optionally mirrored to --out. Exit codes: 0 success, 1 verification
failure, 2 usage/format error, 3 resource limit exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness, ops
from .errors import (ComparisonError, ConfigurationError, DimensionError, DptFormatError,
                     LabelError, NonFiniteError, PoolSizeError, ResourceLimitError,
                     TrainingDivergenceError)
from .pooling import parse_spec
from .version import __version__

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_RESOURCE = 3

_USAGE_ERRORS = (ConfigurationError, DimensionError, PoolSizeError, DptFormatError,
                 LabelError, ComparisonError)


def _emit(report: dict, out: str | None) -> None:
    text = json.dumps(report, indent=2) + "\n"
    sys.stdout.write(text)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _spatial(args, parser: argparse.ArgumentParser) -> tuple[int, int]:
    if args.hw is not None:
        return args.hw, args.hw
    if args.height is not None and args.width is not None:
        return args.height, args.width
    parser.error("provide --hw or both --height and --width")


def _add_shape_flags(p: argparse.ArgumentParser, chat_default_half: bool = False) -> None:
    p.add_argument("--c", type=int, default=64, help="input channels (default 64)")
    p.add_argument("--chat", type=int, default=None,
                   help="query/key channels (default: same as --c)")
    p.add_argument("--hw", type=int, default=None, help="square spatial size")
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--spec-k", default="paper-even",
                   help="key pyramid: preset name or comma list (default paper-even)")
    p.add_argument("--spec-v", default="paper-odd",
                   help="value pyramid: preset name or comma list (default paper-odd)")
    p.add_argument("--dtype", choices=["f32", "f64"], default="f32")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poolattn",
                                     description="pooled-attention verification harness")
    parser.add_argument("--version", action="version", version=f"poolattn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flops", help="closed-form cost reports and the reduction ratio")
    _add_shape_flags(p)
    p.add_argument("--include-softmax", action="store_true",
                   help="include softmax terms in the reduction ratio")
    p.add_argument("--out", default=None, help="also write the JSON report here")

    p = sub.add_parser("bench", help="wall-time comparison of baseline vs pooled attention")
    _add_shape_flags(p)
    p.add_argument("--reps", type=int, default=5, help="timed repetitions (minimum 5)")
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--serial", action="store_true",
                   help="force the index-ascending reference matmul path")
    p.add_argument("--mem-limit", type=int, default=None,
                   help="abort (exit 3) if the baseline map exceeds this many bytes")
    p.add_argument("--out", default=None)

    p = sub.add_parser("equivalence",
                       help="full-resolution oracle and gate-closed identity suites")
    p.add_argument("--seeds", type=int, default=50)
    p.add_argument("--sizes", default="3,5", help="comma list of square sizes")
    p.add_argument("--channels", default="2,4", help="comma list paired with --sizes")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--inject-failure", action="store_true",
                   help="test mode: run the oracle with a mismatched pyramid to prove "
                        "the driver detects failures")
    p.add_argument("--out", default=None)

    p = sub.add_parser("gradcheck", help="finite-difference checks of the backward passes")
    p.add_argument("--kind", required=True,
                   choices=["nonlocal", "spa", "cpa", "network", "all"])
    p.add_argument("--c", type=int, default=4)
    p.add_argument("--chat", type=int, default=None)
    p.add_argument("--hw", type=int, default=6)
    p.add_argument("--spec", default="1,2",
                   help="pyramid sizes for the spa kinds (comma list or preset)")
    p.add_argument("--spec-even", default=None,
                   help="even pyramid for mixed mode (the --spec list is then the odd one)")
    p.add_argument("--mode", default=None,
                   help="spa: only-odd/only-even/mixed; cpa: subtract/square")
    p.add_argument("--with-proj", action="store_true", help="cpa: include projections")
    p.add_argument("--size", type=int, default=8, help="network: image size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", default=None)

    p = sub.add_parser("train-demo", help="train the toy two-branch network")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--poly-power", type=float, default=None,
                   help="enable poly lr decay with this power (paper value 0.9)")
    p.add_argument("--count", type=int, default=4, help="synthetic samples")
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--spa-mode", choices=["only-odd", "only-even", "mixed"],
                   default="only-odd")
    p.add_argument("--spec", default="toy-odd")
    p.add_argument("--cpa-mode", choices=["subtract", "square"], default="subtract")
    p.add_argument("--out", default=None)

    p = sub.add_parser("coverage", help="pyramid bin-boundary histograms")
    p.add_argument("--specs", required=True,
                   help="comma list of presets and/or size lists, "
                        "e.g. paper-even,paper-odd or 1,3,5")
    p.add_argument("--hw", type=int, required=True, help="spatial extent")
    p.add_argument("--out", default=None)

    p = sub.add_parser("attn", help="run one module on a DPT/JSON tensor file")
    p.add_argument("--input", required=True)
    p.add_argument("--module", required=True, choices=["nonlocal", "spa", "cpa"])
    p.add_argument("--out-tensor", required=True)
    p.add_argument("--out-attn", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chat", type=int, default=None)
    p.add_argument("--spec-k", default="paper-even")
    p.add_argument("--spec-v", default="paper-odd")
    p.add_argument("--cpa-mode", choices=["subtract", "square"], default="subtract")
    p.add_argument("--with-proj", action="store_true")
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=1.0)
    return parser


def _parse_spec_groups(text: str) -> list:
    """Split a --specs value into specs: presets stand alone, digit runs group."""
    specs = []
    pending: list[str] = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if token.lstrip("-").isdigit():
            pending.append(token)
        else:
            if pending:
                specs.append(parse_spec(",".join(pending)))
                pending = []
            specs.append(parse_spec(token))
    if pending:
        specs.append(parse_spec(",".join(pending)))
    if not specs:
        raise ConfigurationError(f"--specs {text!r} names no pyramids")
    return specs


def _run(args, parser: argparse.ArgumentParser) -> int:
    if args.command == "flops":
        h, w = _spatial(args, parser)
        report = harness.flops_report(args.c, args.chat or args.c, h, w,
                                      parse_spec(args.spec_k), parse_spec(args.spec_v),
                                      args.dtype, args.include_softmax)
        for warning in report["warnings"]:
            print(f"warning: {warning}", file=sys.stderr)
        _emit(report, args.out)
        return EXIT_OK

    if args.command == "bench":
        h, w = _spatial(args, parser)
        report = harness.bench_report(args.c, args.chat or args.c, h, w,
                                      parse_spec(args.spec_k), parse_spec(args.spec_v),
                                      args.dtype, args.reps, args.warmup, args.seed,
                                      args.serial, args.mem_limit)
        _emit(report, args.out)
        return EXIT_OK

    if args.command == "equivalence":
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
        channels = [int(s) for s in args.channels.split(",") if s.strip()]
        if not sizes or not channels:
            raise ConfigurationError("--sizes and --channels need at least one entry")
        report = harness.equivalence_report(args.seeds, sizes, channels, args.tol,
                                            args.inject_failure)
        _emit(report, args.out)
        if not report["all_passed"]:
            failing = next(c for c in report["cases"] if not c["passed"])
            print(f"equivalence failed: seed={failing['seed']} size={failing['size']} "
                  f"channels={failing['channels']} max_abs_diff={failing['max_abs_diff']}",
                  file=sys.stderr)
            return EXIT_VERIFY
        return EXIT_OK

    if args.command == "gradcheck":
        config: dict = {}
        if args.kind in ("nonlocal", "spa", "cpa"):
            config = {"c": args.c, "h": args.hw, "w": args.hw}
            if args.chat is not None:
                config["chat"] = args.chat
        if args.kind == "spa":
            spec = parse_spec(args.spec)
            mode = args.mode or "only-odd"
            config["mode"] = mode
            if mode == "only-even":
                config["even"] = spec.sizes
            else:
                config["odd"] = spec.sizes
            if args.spec_even is not None:
                config["even"] = parse_spec(args.spec_even).sizes
        elif args.kind == "cpa":
            config["mode"] = args.mode or "subtract"
            config["with_proj"] = args.with_proj
        elif args.kind == "network":
            config = {"size": args.size, "odd": parse_spec(args.spec).sizes}
        report = harness.gradcheck_report(args.kind, config, args.seed, args.h, args.tol)
        _emit(report, args.out)
        return EXIT_OK if report["all_passed"] else EXIT_VERIFY

    if args.command == "train-demo":
        report = harness.train_demo_report(args.seed, args.size, args.steps, args.lr,
                                           args.momentum, args.poly_power, args.count,
                                           args.batch, args.spa_mode, args.spec,
                                           args.cpa_mode)
        _emit(report, args.out)
        return EXIT_OK

    if args.command == "coverage":
        report = harness.coverage_report(_parse_spec_groups(args.specs), args.hw)
        _emit(report, args.out)
        return EXIT_OK

    if args.command == "attn":
        report = harness.attn_report(args.input, args.module, args.out_tensor,
                                     args.out_attn, args.seed, args.chat,
                                     parse_spec(args.spec_k), parse_spec(args.spec_v),
                                     args.cpa_mode, args.with_proj, args.lam, args.mu)
        _emit(report, None)
        return EXIT_OK

    parser.error(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cap = harness.thread_cap()  # validated here; applied at import in __init__
        if cap is not None and args.command == "bench":
            print(f"thread cap: {cap}", file=sys.stderr)
        if getattr(args, "serial", False):
            ops.set_serial_matmul(True)
        return _run(args, parser)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ResourceLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (TrainingDivergenceError, NonFiniteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
