"""Command-line entry point: smoe-export --model --image --out."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .capture import CaptureSpec, export_activations
from .errors import ExporterError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smoe-export",
        description="Capture per-scale CNN activation snapshots for the smoe tools.",
    )
    parser.add_argument("--model", required=True,
                        choices=["resnet50", "vgg", "densenet"],
                        help="architecture to capture from")
    parser.add_argument("--image", required=True, help="input image path")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--weights", default="pretrained",
                        choices=["pretrained", "random"],
                        help="weight source (default: pretrained, falling back "
                             "to random if the zoo is unreachable)")
    return parser


def main(argv: list[str]) -> int:
    level = os.environ.get("SMOE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        spec = CaptureSpec(
            model=args.model,
            image_path=args.image,
            out_dir=args.out,
            weights=args.weights,
        )
        result = export_activations(spec)
    except (ExporterError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(result.manifest_path)
    return 0


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
