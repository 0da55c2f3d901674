"""Embedding storage and the stabilized log distance.

The pairwise distance is d(q, p) = -log((||q-p||^2 + 1) / (||q-p||^2 + eps)),
which is negative everywhere, approaches log(eps) as q -> p, and rises
toward 0 as the points separate. The point-to-set distance is the minimum
of the pairwise distances to a node's support embeddings.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

META_ID = "__meta__"


class EmbeddingError(Exception):
    pass


@dataclass
class DistanceConfig:
    epsilon: float = 1e-6

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError("epsilon must lie in (0, 1)")


@dataclass
class EmbeddingVector:
    id: str
    vector: np.ndarray
    label: Optional[str] = None


@dataclass
class SupportSet:
    node_id: int
    members: list[EmbeddingVector]

    def __post_init__(self):
        if not self.members:
            raise EmbeddingError(
                f"support set for node {self.node_id} is empty")


class EmbeddingStore:
    """Id-keyed collection of same-dimension, finite embedding vectors."""

    def __init__(self):
        self._by_id: dict[str, EmbeddingVector] = {}
        self.dim: Optional[int] = None

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, emb_id: str) -> bool:
        return emb_id in self._by_id

    def get(self, emb_id: str) -> EmbeddingVector:
        try:
            return self._by_id[emb_id]
        except KeyError:
            raise EmbeddingError(f"unknown embedding id {emb_id!r}") from None

    def add(self, emb: EmbeddingVector) -> None:
        vec = np.asarray(emb.vector, dtype=np.float64)
        if vec.ndim != 1 or vec.size < 1:
            raise EmbeddingError(f"embedding {emb.id!r} is not a 1-d vector")
        if not np.all(np.isfinite(vec)):
            raise EmbeddingError(f"embedding {emb.id!r} has non-finite values")
        if self.dim is None:
            self.dim = int(vec.size)
        elif vec.size != self.dim:
            raise EmbeddingError(
                f"embedding {emb.id!r} has dimension {vec.size}, "
                f"store dimension is {self.dim}")
        if emb.id in self._by_id:
            raise EmbeddingError(f"duplicate embedding id {emb.id!r}")
        self._by_id[emb.id] = EmbeddingVector(emb.id, vec, emb.label)

    def items(self) -> Iterable[EmbeddingVector]:
        return self._by_id.values()


def load_embeddings(path: str) -> EmbeddingStore:
    """Load the JSONL interchange format.

    One object per line: {"id": str, "label": str|null, "vector": [...]}.
    Lines whose id is ``__meta__`` are producer metadata and are skipped.
    Errors name the offending 1-based line number.
    """
    store = EmbeddingStore()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise EmbeddingError(
                    f"line {lineno}: malformed JSON ({e.msg})") from e
            if not isinstance(obj, dict) or "id" not in obj:
                raise EmbeddingError(f"line {lineno}: missing 'id'")
            if obj["id"] == META_ID:
                continue
            if "vector" not in obj or not isinstance(obj["vector"], list):
                raise EmbeddingError(f"line {lineno}: missing 'vector' array")
            try:
                store.add(EmbeddingVector(
                    id=str(obj["id"]),
                    vector=np.asarray(obj["vector"], dtype=np.float64),
                    label=obj.get("label"),
                ))
            except EmbeddingError as e:
                raise EmbeddingError(f"line {lineno}: {e}") from e
    return store


def write_embeddings(path: str, embeddings: Iterable[EmbeddingVector],
                     meta: Optional[dict] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"id": META_ID, **meta}) + "\n")
        for emb in embeddings:
            fh.write(json.dumps({
                "id": emb.id,
                "label": emb.label,
                "vector": [float(x) for x in emb.vector],
            }) + "\n")


def pair_distance(q: EmbeddingVector, p: EmbeddingVector,
                  cfg: DistanceConfig) -> float:
    """Stabilized log distance between two embeddings.

    Lies in (log eps, 0); strictly increasing in the squared Euclidean
    distance, so nearest-neighbor order matches raw distance order.
    """
    qv, pv = q.vector, p.vector
    if qv.shape != pv.shape:
        raise EmbeddingError(
            f"dimension mismatch: {qv.shape[0]} vs {pv.shape[0]}")
    diff = qv - pv
    d2 = float(np.dot(diff, diff))
    return -math.log((d2 + 1.0) / (d2 + cfg.epsilon))


def set_distance(q: EmbeddingVector, support: SupportSet,
                 cfg: DistanceConfig) -> float:
    """Point-to-set distance: minimum pairwise distance to the support."""
    return min(pair_distance(q, p, cfg) for p in support.members)
