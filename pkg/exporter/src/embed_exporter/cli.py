"""Command line wrapper around the exporter."""

from __future__ import annotations

import argparse
import logging
import sys

from .exporter import ExportError, ExportJob, export


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Embed molecule descriptions with a pretrained text encoder "
                    "and write the molfuse embedding file format",
    )
    parser.add_argument("--manifest", required=True,
                        help="description manifest (JSONL with cid + description)")
    parser.add_argument("--model", required=True,
                        help="HuggingFace model identifier or local model directory")
    parser.add_argument("--out", required=True, help="output embedding file")
    parser.add_argument("--batch-size", type=int, default=16)
    args = parser.parse_args(argv)

    try:
        result = export(ExportJob(args.manifest, args.model, args.out, args.batch_size))
    except ExportError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(f"{result.n_records} records -> {args.out} "
          f"(extraction={result.extraction}, {len(result.truncated_cids)} truncated)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
