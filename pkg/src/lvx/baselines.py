"""Non-learned comparison explainers: Random, Constant, and Subtree."""

from __future__ import annotations

import random
from collections import Counter
from enum import Enum
from typing import Sequence

from .embeddings import DistanceConfig, EmbeddingStore, EmbeddingVector
from .routing import RoutingConfig, rank_nodes
from .tree import AttributeTree, ExplanationTree, merge_paths


class BaselineError(Exception):
    pass


class BaselineKind(Enum):
    RANDOM = "random"
    CONSTANT = "constant"
    SUBTREE = "subtree"


def random_baseline(t: AttributeTree, n_nodes: int = 5,
                    seed: int = 0) -> ExplanationTree:
    """Uniformly samples ``n_nodes`` distinct non-root nodes and merges
    their root paths; deterministic per seed."""
    candidates = [nid for nid in t.preorder() if nid != t.root_id]
    if n_nodes > len(candidates):
        raise BaselineError(
            f"n_nodes={n_nodes} exceeds the {len(candidates)} non-root nodes")
    rng = random.Random(seed)
    chosen = rng.sample(candidates, n_nodes)
    return merge_paths(t, chosen, selected=chosen)


def constant_baseline(category: str,
                      initial_trees: dict[str, AttributeTree]) -> ExplanationTree:
    """The category's initial template tree, identical for every sample."""
    if category not in initial_trees:
        raise BaselineError(f"no initial tree for category {category!r}")
    t = initial_trees[category]
    return merge_paths(t, list(t.nodes), selected=[])


def subtree_baseline(category: str,
                     held_out: Sequence[EmbeddingVector],
                     trees: dict[str, AttributeTree], store: EmbeddingStore,
                     route_cfg: RoutingConfig,
                     dist_cfg: DistanceConfig) -> ExplanationTree:
    """Most common subtree: routes the held-out samples of the category,
    ranks nodes by selection frequency, and merges the paths of the top-k
    most visited (frequency ties broken by preorder)."""
    if not held_out:
        raise BaselineError(f"empty held-out set for category {category!r}")
    if category not in trees:
        raise BaselineError(f"no tree for category {category!r}")
    t = trees[category]
    freq: Counter[int] = Counter()
    for q in held_out:
        ranked = rank_nodes(q, t, store, dist_cfg)
        if route_cfg.k > len(ranked):
            raise BaselineError(
                f"k={route_cfg.k} exceeds the {len(ranked)} supported nodes "
                f"of {category!r}")
        freq.update(nid for nid, _ in ranked[:route_cfg.k])
    pre = t.preorder_index()
    top = sorted(freq, key=lambda n: (-freq[n], pre[n]))[:route_cfg.k]
    return merge_paths(t, top, selected=top)
