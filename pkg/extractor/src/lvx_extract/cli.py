"""Command-line entry point.

    lvx-extract --model resnet18 --inputs manifest.json \
        --perturb gaussian:0.1 --seed 7 --out embeddings.jsonl

    lvx-extract --tree tree.json --support-manifest images.json \
        --out support.jsonl --tree-out tree-with-support.json

The inputs manifest is a JSON list of {"path", "id", "label"?} objects;
the support manifest maps node labels to image path lists.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .extract import (ExtractionError, ExtractionSpec, ImageInput, extract,
                      extract_support)
from .perturb import parse_perturbation


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lvx-extract", description=__doc__)
    p.add_argument("--model", default="resnet18")
    p.add_argument("--weights", default="default",
                   choices=["default", "none"],
                   help="'default' loads pretrained weights, 'none' uses a "
                        "seeded random initialization")
    p.add_argument("--inputs", help="JSON manifest of images to embed")
    p.add_argument("--perturb", default="none",
                   help="none | gaussian:SIGMA | cutout:N_HOLES")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--tree", help="tree JSON for support-set extraction")
    p.add_argument("--support-manifest",
                   help="JSON mapping node labels to image path lists")
    p.add_argument("--tree-out",
                   help="where to write the tree with filled support arrays")
    return p


def _read_inputs(path: str) -> list[ImageInput]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ValueError("inputs manifest must be a JSON list")
    return [ImageInput(path=r["path"], id=str(r["id"]), label=r.get("label"))
            for r in raw]


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        perturbation = parse_perturbation(args.perturb)
        spec = ExtractionSpec(model=args.model, weights=args.weights,
                              perturbation=perturbation, seed=args.seed,
                              out=args.out)
        if args.tree:
            if not args.support_manifest or not args.tree_out:
                raise ValueError("--tree requires --support-manifest and "
                                 "--tree-out")
            count, warnings = extract_support(args.tree,
                                              args.support_manifest, spec,
                                              args.tree_out)
            print(f"wrote {count} embeddings to {args.out}; "
                  f"{len(warnings)} warnings")
            return 0
        if not args.inputs:
            raise ValueError("either --inputs or --tree is required")
        spec.inputs = _read_inputs(args.inputs)
        count = extract(spec)
        print(f"wrote {count} embeddings to {args.out}")
        return 0
    except (ExtractionError, ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
