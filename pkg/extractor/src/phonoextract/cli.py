"""CLI: extract embeddings from a prepped audio tree into a dataset directory."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .encoders import ExtractionConfig
from .pipeline import ExtractionError, build_dataset

log = logging.getLogger("phonoextract")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phonoextract",
        description="Extract paired acoustic/text embeddings from phoneme recordings",
    )
    parser.add_argument("--in", dest="in_dir", required=True, help="prepped audio tree")
    parser.add_argument("--out", dest="out_dir", required=True, help="dataset directory")
    parser.add_argument("--config", default=None, help="JSON extraction config")
    parser.add_argument(
        "--backend", default=None, choices=("lite", "transformers"), help="override backend"
    )
    return parser


def main(argv=None) -> int:
    if not logging.getLogger().handlers:
        logging.basicConfig(
            level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
        )
    args = build_parser().parse_args(argv)

    try:
        if args.config:
            with open(args.config, encoding="utf-8") as f:
                config = ExtractionConfig.from_dict(json.load(f))
        else:
            config = ExtractionConfig()
        if args.backend:
            config.backend = args.backend
            config.validate()
        summary = build_dataset(args.in_dir, args.out_dir, config)
    except (ExtractionError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2
    print(
        f"wrote {summary.records} records (da={summary.da}, dt={summary.dt}, "
        f"{summary.skipped} skipped) to {summary.out_dir}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
