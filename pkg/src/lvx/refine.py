"""Category-tree refinement against the model's embedding space.

Each iteration assigns every training embedding to its nearest supported
tree node, counts visits, prunes rarely-visited structure, grows the most
visited nodes by querying the language model, and renames attribute
labels shared across categories via a contrastive prompt.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

from .embeddings import (DistanceConfig, EmbeddingStore, EmbeddingVector,
                         SupportSet, set_distance)
from .llm import (LlmClient, PromptKind, RequestKey,
                  UnparsableResponseError, parse_attribute_response,
                  render_prompt)
from .tree import AttributeTree, NodeKind, TreeNode

logger = logging.getLogger(__name__)


class RefinementError(Exception):
    pass


@dataclass
class RefinementConfig:
    t_max: int = 5
    prune_count: int = 1
    grow_count: int = 1
    k_support: int = 5
    discriminate: bool = True

    def __post_init__(self):
        if self.t_max < 0 or self.prune_count < 0 or self.grow_count < 0:
            raise ValueError("t_max, prune_count and grow_count must be >= 0")


@dataclass
class AssignmentTable:
    """Per-sample nearest node and per-node visit counts for one category."""

    assignments: dict[str, tuple[int, float]] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)

    def total(self) -> int:
        return sum(self.counts.values())


class SupportSource(Protocol):
    """Supplies support embeddings for newly grown attribute nodes."""

    def fetch(self, category: str, label: str, k: int) -> list[EmbeddingVector]:
        ...


class NullSupportSource:
    """Grown nodes receive no supports (they stay unroutable)."""

    def fetch(self, category: str, label: str, k: int) -> list[EmbeddingVector]:
        return []


class FileSupportSource:
    """Serves pre-extracted support embeddings from a label-keyed manifest.

    ``mapping`` is {label: [embedding ids]}; the ids refer to a store
    loaded from the support-embedding JSONL produced by the extractor.
    """

    def __init__(self, store: EmbeddingStore, mapping: dict[str, list[str]]):
        self._store = store
        self._mapping = mapping

    def fetch(self, category: str, label: str, k: int) -> list[EmbeddingVector]:
        ids = self._mapping.get(f"{category}/{label}") or self._mapping.get(label) or []
        return [self._store.get(i) for i in ids[:k]]


def node_support(t: AttributeTree, node_id: int,
                 store: EmbeddingStore) -> Optional[SupportSet]:
    refs = t.nodes[node_id].support_ref
    if not refs:
        return None
    return SupportSet(node_id=node_id, members=[store.get(r) for r in refs])


def assign_sample(q: EmbeddingVector, t: AttributeTree,
                  store: EmbeddingStore,
                  cfg: DistanceConfig) -> tuple[int, float]:
    """Nearest supported non-root node for one embedding.

    Ties in distance are broken toward the smaller preorder index.
    Returns (node id, distance).
    """
    best: Optional[tuple[float, int]] = None
    best_id = -1
    for pre_idx, nid in enumerate(t.preorder()):
        if nid == t.root_id:
            continue
        support = node_support(t, nid, store)
        if support is None:
            continue
        d = set_distance(q, support, cfg)
        if best is None or d < best[0]:
            best = (d, pre_idx)
            best_id = nid
    if best is None:
        raise RefinementError(
            f"tree for {t.category!r} has no supported nodes")
    return best_id, best[0]


def count_visits(samples: Sequence[tuple[EmbeddingVector, str]],
                 trees: dict[str, AttributeTree], store: EmbeddingStore,
                 cfg: DistanceConfig) -> dict[str, AssignmentTable]:
    """Visit counts per category; independent of sample order."""
    unknown = sorted({cat for _, cat in samples if cat not in trees})
    if unknown:
        raise RefinementError(f"no tree for categories: {', '.join(unknown)}")
    tables = {cat: AssignmentTable(counts={nid: 0 for nid in t.nodes})
              for cat, t in trees.items()}
    for q, cat in samples:
        nid, dist = assign_sample(q, trees[cat], store, cfg)
        tables[cat].assignments[q.id] = (nid, dist)
        tables[cat].counts[nid] += 1
    return tables


def _subtree_sums(t: AttributeTree, counts: dict[int, int]) -> dict[int, int]:
    sums: dict[int, int] = {}

    def rec(nid: int) -> int:
        s = counts.get(nid, 0) + sum(rec(c) for c in t.nodes[nid].children)
        sums[nid] = s
        return s

    rec(t.root_id)
    return sums


def _drop_subtree(t: AttributeTree, victim: int) -> AttributeTree:
    doomed = t.subtree_ids(victim)
    nodes = {}
    for nid, node in t.nodes.items():
        if nid in doomed:
            continue
        nodes[nid] = TreeNode(
            id=nid, label=node.label, kind=node.kind,
            children=[c for c in node.children if c not in doomed],
            support_ref=list(node.support_ref) if node.support_ref else None)
    return AttributeTree(category=t.category, nodes=nodes, root_id=t.root_id,
                         version=t.version)


def prune(t: AttributeTree, table: AssignmentTable,
          cfg: RefinementConfig) -> AttributeTree:
    """Drop zero-visit leaves, then the ``prune_count`` least-visited
    non-root subtrees.

    A node's effective count is its subtree sum, so an unvisited interior
    node sheltering a popular leaf is never removed. Among equal sums the
    smallest subtree (then earliest preorder) goes first. Node ids are
    preserved. Pruning a root-only tree is a no-op.
    """
    # zero-visit leaves, to a fixed point (a pruned leaf may expose an
    # unvisited parent)
    changed = True
    while changed:
        changed = False
        for nid in t.preorder():
            node = t.nodes[nid]
            if nid != t.root_id and not node.children \
                    and table.counts.get(nid, 0) == 0:
                t = _drop_subtree(t, nid)
                changed = True
                break

    for _ in range(cfg.prune_count):
        candidates = [nid for nid in t.preorder() if nid != t.root_id]
        if not candidates:
            break
        sums = _subtree_sums(t, table.counts)
        pre = t.preorder_index()
        victim = min(candidates,
                     key=lambda n: (sums[n], len(t.subtree_ids(n)), pre[n]))
        t = _drop_subtree(t, victim)
    return t


def build_grow_prompt(t: AttributeTree, node_id: int, class_name: str) -> str:
    """Growth inquiry for one node; the root is never grown."""
    if node_id == t.root_id:
        raise RefinementError("the root node is not a grow candidate")
    return render_prompt(PromptKind.GROW,
                         {"node": t.nodes[node_id].label,
                          "class_name": class_name})


def build_discriminate_prompt(label: str, class_name: str,
                              other_class: str) -> str:
    return render_prompt(PromptKind.DISCRIMINATE,
                         {"node": label, "class_name": class_name,
                          "other_class": other_class})


def _attach_children(t: AttributeTree, parent_id: int,
                     fragment: AttributeTree, support_source: SupportSource,
                     store: EmbeddingStore, k_support: int) -> AttributeTree:
    """Graft the fragment's children (or the fragment itself, when its top
    label differs from the target node) under ``parent_id``."""
    frag_root = fragment.nodes[fragment.root_id]
    if frag_root.label.lower() == t.nodes[parent_id].label.lower():
        graft_tops = frag_root.children
    else:
        graft_tops = [fragment.root_id]

    nodes = {nid: TreeNode(id=n.id, label=n.label, kind=n.kind,
                           children=list(n.children),
                           support_ref=list(n.support_ref) if n.support_ref else None)
             for nid, n in t.nodes.items()}
    next_id = max(nodes) + 1
    sibling_labels = {nodes[c].label for c in nodes[parent_id].children}

    def graft(fid: int, new_parent: int) -> None:
        nonlocal next_id
        src = fragment.nodes[fid]
        kind = src.kind if src.kind != NodeKind.ROOT else NodeKind.LEAF
        nid = next_id
        next_id += 1
        members = support_source.fetch(t.category, src.label, k_support)
        refs = []
        for emb in members:
            if emb.id not in store:
                store.add(emb)
            refs.append(emb.id)
        nodes[nid] = TreeNode(id=nid, label=src.label, kind=kind,
                              support_ref=refs or None)
        nodes[new_parent].children.append(nid)
        for c in src.children:
            graft(c, nid)

    for fid in graft_tops:
        label = fragment.nodes[fid].label
        if label in sibling_labels:
            logger.info("grow: dropping duplicate sibling %r under %r",
                        label, t.nodes[parent_id].label)
            continue
        sibling_labels.add(label)
        graft(fid, parent_id)
    return AttributeTree(category=t.category, nodes=nodes, root_id=t.root_id,
                         version=t.version)


def grow(t: AttributeTree, table: AssignmentTable, llm: LlmClient,
         support_source: SupportSource, store: EmbeddingStore,
         cfg: RefinementConfig, iteration: int = 0) -> AttributeTree:
    """Attach LLM-proposed child attributes to the most visited nodes.

    An unparsable response skips that node's growth (logged) rather than
    aborting the run. The version counter is incremented once.
    """
    pre = t.preorder_index()
    ranked = sorted(
        (nid for nid in t.nodes if nid != t.root_id),
        key=lambda n: (-table.counts.get(n, 0), pre[n]))
    for nid in ranked[:cfg.grow_count]:
        key = RequestKey(kind=PromptKind.GROW.value, category=t.category,
                         node=t.nodes[nid].label, iteration=iteration)
        prompt = build_grow_prompt(t, nid, t.category)
        response = llm.complete(key, prompt)
        try:
            fragment = parse_attribute_response(response)
        except UnparsableResponseError as e:
            logger.warning("grow: skipping node %r of %r: %s",
                           t.nodes[nid].label, t.category, e)
            continue
        t = _attach_children(t, nid, fragment, support_source, store,
                             cfg.k_support)
    return AttributeTree(category=t.category, nodes=t.nodes,
                         root_id=t.root_id, version=t.version + 1)


def discriminate(trees: dict[str, AttributeTree], llm: LlmClient,
                 iteration: int = 0) -> dict[str, AttributeTree]:
    """Rename attribute labels shared by multiple categories using the
    contrastive prompt; the response's first line becomes the new label."""
    by_label: dict[str, list[str]] = {}
    for cat in sorted(trees):
        t = trees[cat]
        for nid, node in t.nodes.items():
            if nid != t.root_id:
                by_label.setdefault(node.label, []).append(cat)
    out = dict(trees)
    for label in sorted(by_label):
        cats = sorted(set(by_label[label]))
        if len(cats) < 2:
            continue
        for i, cat in enumerate(cats):
            other = cats[(i + 1) % len(cats)]
            key = RequestKey(kind=PromptKind.DISCRIMINATE.value, category=cat,
                             node=label, iteration=iteration)
            prompt = build_discriminate_prompt(label, cat, other)
            new_label = llm.complete(key, prompt).strip().splitlines()
            new_label = new_label[0].strip() if new_label else ""
            if not new_label or new_label == label:
                continue
            out[cat] = _rename_label(out[cat], label, new_label)
    return out


def _rename_label(t: AttributeTree, old: str, new: str) -> AttributeTree:
    nodes = {}
    parents = t.parent_map()
    for nid, node in t.nodes.items():
        label = node.label
        if label == old and nid != t.root_id:
            siblings = {t.nodes[c].label
                        for c in t.nodes[parents[nid]].children if c != nid}
            if new not in siblings:
                label = new
        nodes[nid] = TreeNode(id=nid, label=label, kind=node.kind,
                              children=list(node.children),
                              support_ref=list(node.support_ref)
                              if node.support_ref else None)
    return AttributeTree(category=t.category, nodes=nodes, root_id=t.root_id,
                         version=t.version)


def refine(trees: dict[str, AttributeTree],
           samples: Sequence[tuple[EmbeddingVector, str]],
           store: EmbeddingStore, llm: LlmClient,
           support_source: SupportSource, cfg: RefinementConfig,
           dist_cfg: DistanceConfig) -> dict[str, AttributeTree]:
    """Run ``t_max`` iterations of count -> prune -> grow (-> discriminate).

    Deterministic given a fixed transcript, seed, and the tie rules of
    :func:`assign_sample` and :func:`prune`.
    """
    trees = dict(trees)
    for it in range(cfg.t_max):
        tables = count_visits(samples, trees, store, dist_cfg)
        for cat in sorted(trees):
            t = prune(trees[cat], tables[cat], cfg)
            t = grow(t, tables[cat], llm, support_source, store, cfg,
                     iteration=it)
            trees[cat] = t
        if cfg.discriminate:
            trees = discriminate(trees, llm, iteration=it)
    return trees
