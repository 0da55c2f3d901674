"""Feature extraction from pretrained torchvision models.

Images are loaded, optionally perturbed (seeded), preprocessed with the
standard ImageNet pipeline, and passed through the model with its
classification head replaced by identity, yielding the pooled
pre-classifier ("penultimate") feature vector.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
from PIL import Image

from .perturb import Perturbation, apply_perturbation

logger = logging.getLogger(__name__)

META_ID = "__meta__"
MAX_SUPPORT_IMAGES = 30  # advisory upper bound on per-node support sets

_IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
_IMAGENET_STD = np.array([0.229, 0.224, 0.225])


class ExtractionError(Exception):
    pass


@dataclass
class ImageInput:
    path: str
    id: str
    label: Optional[str] = None


@dataclass
class ExtractionSpec:
    model: str = "resnet18"
    weights: str = "none"            # "none" (random init) or "default"
    layer: str = "penultimate"
    inputs: list[ImageInput] = field(default_factory=list)
    perturbation: Perturbation = field(default_factory=Perturbation)
    seed: int = 0
    out: str = "embeddings.jsonl"


def _load_model(spec: ExtractionSpec) -> tuple[torch.nn.Module, str]:
    """Instantiate the model and swap its classification head for
    identity; returns the model and the name of the replaced head."""
    import torchvision.models as models

    factory = getattr(models, spec.model, None)
    if factory is None or not callable(factory):
        raise ExtractionError(f"unknown torchvision model {spec.model!r}")
    # seeding covers random initialization when no checkpoint is used
    torch.manual_seed(spec.seed)
    try:
        weights = "DEFAULT" if spec.weights == "default" else None
        model = factory(weights=weights)
    except Exception as e:
        raise ExtractionError(f"failed to load model {spec.model!r}: {e}") \
            from e
    for head in ("fc", "classifier", "head", "heads"):
        if hasattr(model, head):
            setattr(model, head, torch.nn.Identity())
            model.eval()
            return model, head
    raise ExtractionError(
        f"cannot find the classification head of {spec.model!r}")


def _image_rng(seed: int, image_id: str) -> np.random.Generator:
    """Per-image generator derived from the run seed and the image id,
    so output is reproducible regardless of batching."""
    digest = hashlib.sha256(f"{seed}:{image_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def _load_image(path: str) -> np.ndarray:
    """Image as float HxWx3 in [0, 1], resized with the standard
    ImageNet resize-then-center-crop."""
    with Image.open(path) as img:
        img = img.convert("RGB")
        img = img.resize((256, 256), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    off = (256 - 224) // 2
    return arr[off:off + 224, off:off + 224]


def _features(model: torch.nn.Module, image: np.ndarray) -> np.ndarray:
    norm = (image - _IMAGENET_MEAN) / _IMAGENET_STD
    tensor = torch.from_numpy(norm.transpose(2, 0, 1)[None]).float()
    with torch.no_grad():
        feats = model(tensor)
    return feats.reshape(-1).numpy()


def _format_vector(feats: np.ndarray) -> list[float]:
    # float32 precision rendered as shortest round-trip decimals
    return [float(np.float32(v)) for v in feats]


def extract(spec: ExtractionSpec) -> int:
    """Extract embeddings for ``spec.inputs`` into ``spec.out``.

    Writes one "__meta__" header record followed by one embedding line
    per readable input, in input order. Returns the number of embedding
    lines written; unreadable images are skipped and logged.
    """
    model, head = _load_model(spec)
    rows = []
    dim = None
    for inp in spec.inputs:
        try:
            image = _load_image(inp.path)
        except (OSError, ValueError) as e:
            logger.warning("skipping unreadable image %s (%s): %s",
                           inp.path, inp.id, e)
            continue
        image = apply_perturbation(image, spec.perturbation,
                                   _image_rng(spec.seed, inp.id))
        vec = _format_vector(_features(model, image))
        if dim is None:
            dim = len(vec)
        rows.append({"id": inp.id, "label": inp.label, "vector": vec})

    meta = {
        "id": META_ID,
        "model": spec.model,
        "layer": f"{spec.layer} (replaced head: {head})",
        "perturbation": spec.perturbation.describe(),
        "seed": spec.seed,
        "dim": dim if dim is not None else 0,
    }
    with open(spec.out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta) + "\n")
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return len(rows)


# ---------------------------------------------------------------------------
# Support-set extraction
# ---------------------------------------------------------------------------

def _walk_nodes(obj: dict, depth: int = 0):
    yield obj, depth
    for child in obj.get("children", []):
        yield from _walk_nodes(child, depth + 1)


def extract_support(tree_path: str, manifest_path: str,
                    spec: ExtractionSpec,
                    tree_out: str) -> tuple[int, list[str]]:
    """Fill a tree's per-node support sets from an image manifest.

    The manifest maps node labels to image path lists. Embeddings are
    written to ``spec.out`` (ids ``<label>:<k>``), the tree with filled
    "support" arrays to ``tree_out``. Returns (embedding count,
    warnings); nodes with zero images or more than 30 are reported as
    warnings, the former stay unroutable until supplied.
    """
    with open(tree_path, "r", encoding="utf-8") as fh:
        tree = json.load(fh)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)

    warnings: list[str] = []
    inputs: list[ImageInput] = []
    node_ids: dict[int, list[str]] = {}
    for idx, (node, depth) in enumerate(_walk_nodes(tree)):
        if depth == 0:
            continue
        label = node["name"]
        paths = manifest.get(label, [])
        if not paths:
            warnings.append(f"node {label!r} has no images; it will be "
                            "unroutable until support is supplied")
            continue
        if len(paths) > MAX_SUPPORT_IMAGES:
            warnings.append(f"node {label!r} has {len(paths)} images, "
                            f"more than the advisory bound of "
                            f"{MAX_SUPPORT_IMAGES}")
        ids = [f"{label}:{k}" for k in range(len(paths))]
        node_ids[idx] = ids
        inputs.extend(ImageInput(path=p, id=i, label=label)
                      for p, i in zip(paths, ids))

    run = ExtractionSpec(model=spec.model, weights=spec.weights,
                         layer=spec.layer, inputs=inputs,
                         perturbation=spec.perturbation, seed=spec.seed,
                         out=spec.out)
    count = extract(run)

    for idx, (node, depth) in enumerate(_walk_nodes(tree)):
        if idx in node_ids:
            node["support"] = node_ids[idx]
    with open(tree_out, "w", encoding="utf-8") as fh:
        json.dump(tree, fh, indent=2)
        fh.write("\n")
    for w in warnings:
        logger.warning("%s", w)
    return count, warnings
