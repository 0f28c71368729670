"""Command line wrapper: `kvexport --model ID --prompt "..." --out DIR`."""

from __future__ import annotations

import argparse
import sys

from .export import ExportConfig, UnsupportedArchitectureError, export_trace


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="kvexport", description=__doc__)
    parser.add_argument("--model", required=True, help="Hugging Face model id or local path")
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--prompt", help="prompt text (tokenized with the model's tokenizer)")
    group.add_argument("--token-ids", help="comma-separated token ids, bypassing the tokenizer")
    parser.add_argument("--n-gt", type=int, default=4, help="greedy continuation steps to record")
    parser.add_argument("--layers", help="comma-separated layer indices to export (default: all)")
    parser.add_argument("--out", required=True, help="output trace directory")
    args = parser.parse_args(argv)

    cfg = ExportConfig(
        model=args.model,
        prompt=args.prompt,
        token_ids=[int(t) for t in args.token_ids.split(",")] if args.token_ids else None,
        n_gt=args.n_gt,
        layers=[int(l) for l in args.layers.split(",")] if args.layers else None,
        out_dir=args.out,
    )
    try:
        out = export_trace(cfg)
    except (UnsupportedArchitectureError, ValueError, OSError, RuntimeError) as exc:
        print(f"kvexport: {exc}", file=sys.stderr)
        return 1
    print(f"wrote trace to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
