"""Command line entry point: embed a query or topics file to EMB1."""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .errors import ExportError
from .export import DEFAULT_MODEL, EmbedJob, embed_file, embed_topics


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="embed",
        description="Embed text rows and write a float32 matrix with sidecar ids.")
    p.add_argument("--input", required=True, help="input file to embed")
    p.add_argument("--format", choices=("tsv", "jsonl"), default="tsv",
                   help="row layout of --input (ignored with --topics)")
    p.add_argument("--model", default=DEFAULT_MODEL,
                   help=f"encoder name (default: {DEFAULT_MODEL})")
    p.add_argument("--batch-size", type=int, default=32, metavar="N",
                   help="texts encoded per batch (default: 32)")
    p.add_argument("--out-matrix", required=True, help="output matrix path")
    p.add_argument("--out-ids", required=True, help="output ids path, one per row")
    p.add_argument("--topics", action="store_true",
                   help="treat --input as topics JSONL and embed each field instance")
    p.add_argument("--no-normalize", dest="normalize", action="store_false",
                   help="keep raw encoder vectors instead of unit-normalizing rows")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = EmbedJob(
            input_path=args.input,
            out_matrix=args.out_matrix,
            out_ids=args.out_ids,
            format=args.format,
            model_name=args.model,
            batch_size=args.batch_size,
            normalize=args.normalize,
        )
        count = embed_topics(job) if args.topics else embed_file(job)
    except (ExportError, OSError) as e:
        print(f"embed: error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {count} rows to {args.out_matrix} (ids: {args.out_ids})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
