"""Test-stage routing: nearest-node selection and path merging.

Given a test embedding and the model's predicted category, the k nodes
with the smallest point-to-set distance are selected from the category's
tree and their root paths merged into a sample-specific explanation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .embeddings import DistanceConfig, EmbeddingStore, EmbeddingVector, set_distance
from .refine import node_support
from .tree import AttributeTree, ExplanationTree, NodeKind, TreeNode, merge_paths


class RoutingError(Exception):
    pass


@dataclass
class RoutingConfig:
    k: int = 5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class MultiLabelPrediction:
    finding_flags: list[int] = field(default_factory=list)


def rank_nodes(q: EmbeddingVector, t: AttributeTree, store: EmbeddingStore,
               dist_cfg: DistanceConfig) -> list[tuple[int, float]]:
    """All supported non-root nodes ordered by ascending distance
    (preorder breaks ties). Returns (node id, distance) pairs."""
    scored = []
    for pre_idx, nid in enumerate(t.preorder()):
        if nid == t.root_id:
            continue
        support = node_support(t, nid, store)
        if support is None:
            continue
        scored.append((set_distance(q, support, dist_cfg), pre_idx, nid))
    scored.sort()
    return [(nid, d) for d, _, nid in scored]


def explain(q: EmbeddingVector, predicted: str,
            trees: dict[str, AttributeTree], store: EmbeddingStore,
            route_cfg: RoutingConfig,
            dist_cfg: DistanceConfig) -> ExplanationTree:
    """Explanation subtree for one test sample.

    ``selected_nodes`` is recorded in ascending distance order.
    """
    if predicted not in trees:
        raise RoutingError(f"no tree for predicted category {predicted!r}")
    t = trees[predicted]
    ranked = rank_nodes(q, t, store, dist_cfg)
    if route_cfg.k > len(ranked):
        raise RoutingError(
            f"k={route_cfg.k} exceeds the {len(ranked)} supported nodes "
            f"of {predicted!r}")
    chosen = [nid for nid, _ in ranked[:route_cfg.k]]
    return merge_paths(t, chosen, source_sample=q.id, selected=chosen)


NO_FINDINGS_LABEL = "No Findings"
HAS_FINDINGS_LABEL = "has Findings"


def explain_multilabel(q: EmbeddingVector, prediction: MultiLabelPrediction,
                       finding_trees: list[tuple[str, AttributeTree]],
                       store: EmbeddingStore, route_cfg: RoutingConfig,
                       dist_cfg: DistanceConfig) -> ExplanationTree:
    """Multi-label composition: a single-node "No Findings" tree when all
    flags are zero, otherwise a "has Findings" root whose children are the
    per-positive-finding explanations, in finding order."""
    flags = prediction.finding_flags
    if len(flags) != len(finding_trees):
        raise RoutingError(
            f"{len(flags)} flags for {len(finding_trees)} finding trees")
    if not any(flags):
        root = TreeNode(id=0, label=NO_FINDINGS_LABEL, kind=NodeKind.ROOT)
        return ExplanationTree(category=NO_FINDINGS_LABEL, nodes={0: root},
                               root_id=0, source_sample=q.id)

    nodes: dict[int, TreeNode] = {
        0: TreeNode(id=0, label=HAS_FINDINGS_LABEL, kind=NodeKind.ROOT)}
    selected: list[int] = []
    next_id = 1
    trees_by_name = dict(finding_trees)
    for flag, (name, _) in zip(flags, finding_trees):
        if not flag:
            continue
        sub = explain(q, name, trees_by_name, store, route_cfg, dist_cfg)
        remap: dict[int, int] = {}
        for old in sub.preorder():
            src = sub.nodes[old]
            remap[old] = next_id
            nodes[next_id] = TreeNode(
                id=next_id, label=src.label,
                kind=src.kind if src.kind != NodeKind.ROOT else NodeKind.LEAF,
                support_ref=list(src.support_ref) if src.support_ref else None)
            next_id += 1
        for old in sub.preorder():
            nodes[remap[old]].children = [remap[c]
                                          for c in sub.nodes[old].children]
        nodes[0].children.append(remap[sub.root_id])
        selected.extend(remap[s] for s in sub.selected_nodes)
    return ExplanationTree(category=HAS_FINDINGS_LABEL, nodes=nodes,
                           root_id=0, source_sample=q.id,
                           selected_nodes=selected)
