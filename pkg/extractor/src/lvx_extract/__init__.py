"""Embedding extraction for the lvx engine.

Produces the UTF-8 JSONL interchange files ({"id", "label", "vector"}
plus a leading "__meta__" record) that the engine's embedding store
loads, with optional seeded input perturbations applied before feature
extraction.
"""

from .extract import ExtractionSpec, ImageInput, extract, extract_support
from .perturb import Perturbation, parse_perturbation

__all__ = [
    "ExtractionSpec",
    "ImageInput",
    "Perturbation",
    "extract",
    "extract_support",
    "parse_perturbation",
]
