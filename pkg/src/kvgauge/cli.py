"""Command line entry point.

Subcommands: ``synth`` (generate a synthetic trace directory), ``run``
(one policy, one record), ``sweep`` (fixed-budget ratio sweep) and
``overlap`` (per-head synthetic-vs-ground-truth attention analysis).
Exits 0 on success, 1 with a one-line diagnostic otherwise.
"""

from __future__ import annotations

import argparse
import json
import sys

from .harness import (
    overlap_analysis,
    run_policy,
    sweep,
    write_csv,
    write_overlap_csv,
)
from .policies import GVoteConfig, POLICY_NAMES
from .synth import SynthSpec, generate_synth
from .traceio import TraceError, load_trace, save_trace


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kvgauge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic trace directory")
    p_synth.add_argument("--spec", required=True, help="JSON file with SynthSpec fields")
    p_synth.add_argument("--out", required=True, help="output trace directory")

    p_run = sub.add_parser("run", help="run one policy over a trace")
    p_run.add_argument("--trace", required=True)
    p_run.add_argument("--policy", required=True, choices=POLICY_NAMES)
    p_run.add_argument("--p-nuc", type=float, default=0.95)
    p_run.add_argument("--samples", type=int, default=8)
    p_run.add_argument("--n-future", type=int, default=64)
    p_run.add_argument("--sink", type=int, default=4,
                       help="sink rows excluded from the Gaussian fit (gvote) or kept (streamllm)")
    p_run.add_argument("--ratio", type=float, default=None, help="budget ratio for fixed-budget policies")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--obs-window", type=int, default=16)
    p_run.add_argument("--no-include-current", action="store_true",
                       help="gvote: union only the synthetic candidate sets")
    p_run.add_argument("--out", required=True, help="output CSV")

    p_sweep = sub.add_parser("sweep", help="sweep budget ratios for a fixed-budget policy")
    p_sweep.add_argument("--trace", required=True)
    p_sweep.add_argument("--policy", required=True, choices=POLICY_NAMES)
    p_sweep.add_argument("--ratios", required=True, help="comma-separated, e.g. 0.1,0.2,0.3")
    p_sweep.add_argument("--sink", type=int, default=4)
    p_sweep.add_argument("--obs-window", type=int, default=16)
    p_sweep.add_argument("--out", required=True)

    p_ov = sub.add_parser("overlap", help="synthetic-query overlap analysis per layer/head")
    p_ov.add_argument("--trace", required=True)
    p_ov.add_argument("--samples", type=int, required=True)
    p_ov.add_argument("--p-nuc", type=float, default=0.95)
    p_ov.add_argument("--n-future", type=int, default=64)
    p_ov.add_argument("--sink", type=int, default=4)
    p_ov.add_argument("--seed", type=int, default=0)
    p_ov.add_argument("--out", required=True)
    return parser


def _cmd_synth(args: argparse.Namespace) -> None:
    with open(args.spec) as fh:
        data = json.load(fh)
    spec = SynthSpec(**data)
    save_trace(generate_synth(spec), args.out)
    print(f"wrote synthetic trace to {args.out}")


def _cmd_run(args: argparse.Namespace) -> None:
    trace = load_trace(args.trace)
    gvote = GVoteConfig(
        p_nuc=args.p_nuc,
        samples=args.samples,
        n_f=args.n_future,
        n_s=args.sink,
        seed=args.seed,
        include_current=not args.no_include_current,
    )
    record = run_policy(
        trace,
        args.policy,
        gvote=gvote,
        ratio=args.ratio,
        n_sink=args.sink,
        obs_window=args.obs_window,
    )
    write_csv([record], args.out)
    print(
        f"{args.policy}: usage={record.usage_ratio:.4f} overlap={record.attention_overlap:.4f} "
        f"pearson={record.pearson_r:.4f} cosine={record.output_cosine:.4f} -> {args.out}"
    )


def _cmd_sweep(args: argparse.Namespace) -> None:
    trace = load_trace(args.trace)
    ratios = [float(tok) for tok in args.ratios.split(",") if tok.strip()]
    records = sweep(trace, args.policy, ratios, n_sink=args.sink, obs_window=args.obs_window)
    write_csv(records, args.out)
    print(f"{len(records)} records -> {args.out}")


def _cmd_overlap(args: argparse.Namespace) -> None:
    trace = load_trace(args.trace)
    records = overlap_analysis(
        trace, args.samples, p_nuc=args.p_nuc, n_f=args.n_future, n_s=args.sink, seed=args.seed
    )
    write_overlap_csv(records, args.out)
    mean = lambda xs: sum(xs) / len(xs)
    print(
        f"{len(records)} rows -> {args.out} | mean overlap={mean([r.overlap for r in records]):.4f} "
        f"mean usage={mean([r.usage for r in records]):.4f} "
        f"mean pearson={mean([r.pearson_r for r in records]):.4f}"
    )


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "overlap": _cmd_overlap,
    }
    try:
        handlers[args.command](args)
    except (TraceError, ValueError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"kvgauge {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
