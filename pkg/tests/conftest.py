import random

import numpy as np
import pytest

from lvx.embeddings import (DistanceConfig, EmbeddingStore, EmbeddingVector)
from lvx.tree import AttributeTree, NodeKind, TreeNode, parse_tree

FOUR_KIND_JSON = """
{"name": "dog", "kind": "root", "children": [
  {"name": "Concepts", "kind": "Concepts"},
  {"name": "Substances", "kind": "Substances"},
  {"name": "Attributes", "kind": "Attributes"},
  {"name": "Environments", "kind": "Environments"}
]}
"""


def make_tree(spec) -> AttributeTree:
    """Build a tree from nested (label, [children]) pairs."""

    def walk(item, depth, nodes, counter):
        label, kids = item if isinstance(item, tuple) else (item, [])
        nid = counter[0]
        counter[0] += 1
        kind = NodeKind.ROOT if depth == 0 else NodeKind.LEAF
        nodes[nid] = TreeNode(id=nid, label=label, kind=kind)
        for k in kids:
            nodes[nid].children.append(walk(k, depth + 1, nodes, counter))
        return nid

    nodes: dict[int, TreeNode] = {}
    root = walk(spec, 0, nodes, [0])
    return AttributeTree(category=nodes[root].label, nodes=nodes, root_id=root)


def random_tree(rng: random.Random, max_nodes: int, alphabet="ABCDE") -> AttributeTree:
    """Random ordered labeled tree with 1..max_nodes nodes.

    A small label alphabet keeps cross-tree label overlap likely, which
    exercises the interesting branches of the metrics.
    """
    n = rng.randint(1, max_nodes)
    nodes = {0: TreeNode(id=0, label=rng.choice(alphabet), kind=NodeKind.ROOT)}
    for nid in range(1, n):
        parent = rng.randrange(nid)
        label = rng.choice(alphabet)
        # duplicate sibling labels are invalid; retry with suffixes
        siblings = {nodes[c].label for c in nodes[parent].children}
        while label in siblings:
            label += rng.choice(alphabet)
        nodes[nid] = TreeNode(id=nid, label=label, kind=NodeKind.LEAF)
        nodes[parent].children.append(nid)
    return AttributeTree(category=nodes[0].label, nodes=nodes, root_id=0)


@pytest.fixture
def four_kind_tree() -> AttributeTree:
    return parse_tree(FOUR_KIND_JSON)


def store_from_vectors(vectors: dict[str, list[float]],
                       labels: dict[str, str] | None = None) -> EmbeddingStore:
    store = EmbeddingStore()
    for eid, vec in vectors.items():
        label = (labels or {}).get(eid)
        store.add(EmbeddingVector(id=eid, vector=np.asarray(vec, float), label=label))
    return store


@pytest.fixture
def dist_cfg() -> DistanceConfig:
    return DistanceConfig(epsilon=1e-6)
