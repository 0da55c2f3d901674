"""Attribute-tree data model.

Rooted, labeled, ordered trees whose root is a category name and whose
nodes carry textual visual attributes. Trees are treated as immutable:
every transformation builds a new tree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from itertools import product
from typing import Iterable, Optional


class TreeError(Exception):
    """Base class for tree parsing/validation failures."""


class TreeParseError(TreeError):
    """Malformed JSON input; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class TreeValidationError(TreeError):
    """Structurally valid JSON that violates the tree schema.

    ``path`` names the offending location, e.g. ``/children/1/name``.
    """

    def __init__(self, message: str, path: str):
        super().__init__(f"{message} at {path}")
        self.path = path


class NodeKind(Enum):
    ROOT = "root"
    CONCEPTS = "Concepts"
    SUBSTANCES = "Substances"
    ATTRIBUTES = "Attributes"
    ENVIRONMENTS = "Environments"
    LEAF = "leaf"


_KIND_BY_LOWER = {k.value.lower(): k for k in NodeKind}


@dataclass
class TreeNode:
    id: int
    label: str
    kind: NodeKind
    children: list[int] = field(default_factory=list)
    support_ref: Optional[list[str]] = None


@dataclass
class AttributeTree:
    """A category's attribute tree. ``nodes`` maps node id to node."""

    category: str
    nodes: dict[int, TreeNode]
    root_id: int
    version: int = 0

    def node(self, node_id: int) -> TreeNode:
        return self.nodes[node_id]

    def __len__(self) -> int:
        return len(self.nodes)

    def preorder(self) -> list[int]:
        """Node ids in depth-first, sibling-order traversal from the root."""
        out: list[int] = []
        stack = [self.root_id]
        while stack:
            nid = stack.pop()
            out.append(nid)
            stack.extend(reversed(self.nodes[nid].children))
        return out

    def preorder_index(self) -> dict[int, int]:
        return {nid: i for i, nid in enumerate(self.preorder())}

    def parent_map(self) -> dict[int, int]:
        """Child id -> parent id (root absent)."""
        parents: dict[int, int] = {}
        for nid, node in self.nodes.items():
            for c in node.children:
                parents[c] = nid
        return parents

    def depth(self, node_id: int) -> int:
        parents = self.parent_map()
        d = 0
        while node_id in parents:
            node_id = parents[node_id]
            d += 1
        return d

    def subtree_ids(self, node_id: int) -> set[int]:
        out: set[int] = set()
        stack = [node_id]
        while stack:
            nid = stack.pop()
            out.add(nid)
            stack.extend(self.nodes[nid].children)
        return out

    def labels(self) -> set[str]:
        return {n.label for n in self.nodes.values()}

    def supported_ids(self) -> list[int]:
        """Non-root nodes carrying a nonempty support set, in preorder."""
        return [
            nid
            for nid in self.preorder()
            if nid != self.root_id and self.nodes[nid].support_ref
        ]


@dataclass
class ExplanationTree(AttributeTree):
    """Per-sample explanation: a root-path union over selected nodes."""

    source_sample: str = ""
    selected_nodes: list[int] = field(default_factory=list)


def _canonical_kind(raw: str, path: str) -> NodeKind:
    kind = _KIND_BY_LOWER.get(raw.strip().lower())
    if kind is None:
        raise TreeValidationError(f"unknown kind {raw!r}", path)
    return kind


def _walk(obj: object, path: str, depth: int, nodes: dict[int, TreeNode],
          counter: list[int]) -> int:
    if not isinstance(obj, dict):
        raise TreeValidationError("node must be a JSON object", path)
    if "name" not in obj:
        raise TreeValidationError("missing required key 'name'", path)
    label = obj["name"]
    if not isinstance(label, str) or not label.strip():
        raise TreeValidationError("empty label", path + "/name")
    label = label.strip()

    raw_kind = obj.get("kind")
    if raw_kind is not None:
        kind = _canonical_kind(str(raw_kind), path + "/kind")
    else:
        kind = NodeKind.ROOT if depth == 0 else NodeKind.LEAF
    if depth == 0 and kind != NodeKind.ROOT:
        raise TreeValidationError("top-level node must have kind 'root'",
                                  path + "/kind")
    if depth > 0 and kind == NodeKind.ROOT:
        raise TreeValidationError("non-root node declared kind 'root'",
                                  path + "/kind")

    support = obj.get("support")
    if support is not None:
        if not isinstance(support, list) or not all(
                isinstance(s, str) for s in support):
            raise TreeValidationError("'support' must be a list of strings",
                                      path + "/support")
        support = list(support)

    nid = counter[0]
    counter[0] += 1
    node = TreeNode(id=nid, label=label, kind=kind, support_ref=support)
    nodes[nid] = node

    children = obj.get("children", [])
    if not isinstance(children, list):
        raise TreeValidationError("'children' must be an array",
                                  path + "/children")
    seen_labels: set[str] = set()
    for i, child in enumerate(children):
        cid = _walk(child, f"{path}/children/{i}", depth + 1, nodes, counter)
        clabel = nodes[cid].label
        if clabel in seen_labels:
            raise TreeValidationError(f"duplicate sibling label {clabel!r}",
                                      f"{path}/children/{i}")
        seen_labels.add(clabel)
        node.children.append(cid)
    return nid


def parse_tree(json_text: str) -> AttributeTree:
    """Parse nested-JSON attribute text into a validated tree.

    Ids are assigned in preorder; child order is preserved from the input
    arrays. Raises :class:`TreeParseError` for malformed JSON and
    :class:`TreeValidationError` for schema violations.
    """
    try:
        obj = json.loads(json_text)
    except json.JSONDecodeError as e:
        raise TreeParseError(e.msg, e.pos) from e
    nodes: dict[int, TreeNode] = {}
    root_id = _walk(obj, "", 0, nodes, [0])
    return AttributeTree(category=nodes[root_id].label, nodes=nodes,
                         root_id=root_id)


def tree_to_obj(t: AttributeTree, node_id: Optional[int] = None) -> dict:
    """Nested-object form of a (sub)tree, matching the ingest schema."""
    nid = t.root_id if node_id is None else node_id
    node = t.nodes[nid]
    out: dict = {"name": node.label, "kind": node.kind.value}
    if node.support_ref:
        out["support"] = list(node.support_ref)
    if node.children:
        out["children"] = [tree_to_obj(t, c) for c in node.children]
    return out


def serialize_tree(t: AttributeTree) -> str:
    """JSON text that round-trips through :func:`parse_tree`."""
    return json.dumps(tree_to_obj(t), indent=2)


def build_tree(category: str, nodes: dict[int, TreeNode], root_id: int,
               version: int = 0) -> AttributeTree:
    """Validate and construct a tree from explicit parts.

    Used by operations that rewrite trees; re-checks the structural
    invariants (single root, acyclicity, |E| = |V| - 1, label rules).
    """
    return parse_tree_obj_checked(category, nodes, root_id, version)


def parse_tree_obj_checked(category: str, nodes: dict[int, TreeNode],
                           root_id: int, version: int) -> AttributeTree:
    if root_id not in nodes:
        raise TreeValidationError("root id missing from node map", "/")
    seen: set[int] = set()
    stack = [root_id]
    while stack:
        nid = stack.pop()
        if nid in seen:
            raise TreeValidationError("cycle or duplicate child detected",
                                      f"/node/{nid}")
        seen.add(nid)
        node = nodes[nid]
        if not node.label.strip():
            raise TreeValidationError("empty label", f"/node/{nid}")
        labels = [nodes[c].label for c in node.children]
        if len(set(labels)) != len(labels):
            raise TreeValidationError("duplicate sibling label",
                                      f"/node/{nid}")
        stack.extend(node.children)
    if seen != set(nodes):
        raise TreeValidationError("unreachable nodes present", "/")
    if nodes[root_id].label != category:
        raise TreeValidationError("root label must equal category", "/name")
    return AttributeTree(category=category, nodes=nodes, root_id=root_id,
                         version=version)


def _renumber(t: AttributeTree, keep: set[int]) -> tuple[dict[int, TreeNode], int, dict[int, int]]:
    """Rebuild ``keep`` as fresh preorder-numbered nodes. Returns
    (nodes, root_id, old->new id map)."""
    mapping: dict[int, int] = {}
    order: list[int] = []
    stack = [t.root_id]
    while stack:
        nid = stack.pop()
        if nid not in keep:
            continue
        mapping[nid] = len(order)
        order.append(nid)
        stack.extend(reversed(t.nodes[nid].children))
    nodes: dict[int, TreeNode] = {}
    for old in order:
        src = t.nodes[old]
        nodes[mapping[old]] = TreeNode(
            id=mapping[old],
            label=src.label,
            kind=src.kind,
            children=[mapping[c] for c in src.children if c in keep],
            support_ref=list(src.support_ref) if src.support_ref else None,
        )
    return nodes, mapping[t.root_id], mapping


def merge_paths(t: AttributeTree, node_ids: Iterable[int],
                source_sample: str = "",
                selected: Optional[list[int]] = None) -> ExplanationTree:
    """Minimal subtree of ``t`` containing the root and all ``node_ids``.

    ``selected`` (defaults to ``node_ids`` order) is recorded on the
    result, remapped to the new ids.
    """
    ids = list(node_ids)
    parents = t.parent_map()
    keep: set[int] = {t.root_id}
    for nid in ids:
        if nid not in t.nodes:
            raise KeyError(f"unknown node id {nid}")
        cur = nid
        keep.add(cur)
        while cur in parents:
            cur = parents[cur]
            keep.add(cur)
    nodes, root_id, mapping = _renumber(t, keep)
    sel = selected if selected is not None else ids
    return ExplanationTree(
        category=t.category, nodes=nodes, root_id=root_id, version=t.version,
        source_sample=source_sample,
        selected_nodes=[mapping[s] for s in sel],
    )


def enumerate_subtrees(t: AttributeTree, max_nodes: int) -> list[frozenset[int]]:
    """All connected subtrees (as id sets) with at most ``max_nodes`` nodes.

    Deterministic: ordered by (size, sorted ids). Intended as oracle
    support for small trees; exponential in the worst case.
    """
    if max_nodes < 1:
        raise ValueError("max_nodes must be >= 1")

    def rooted(nid: int) -> list[frozenset[int]]:
        # connected sets containing nid whose members all descend from nid
        options: list[list[frozenset[int]]] = []
        for c in t.nodes[nid].children:
            options.append([frozenset()] + rooted(c))
        out: list[frozenset[int]] = []
        for combo in product(*options) if options else [()]:
            s = frozenset({nid}).union(*combo) if combo else frozenset({nid})
            if len(s) <= max_nodes:
                out.append(s)
        return out

    all_sets: set[frozenset[int]] = set()
    for nid in t.preorder():
        all_sets.update(rooted(nid))
    return sorted(all_sets, key=lambda s: (len(s), sorted(s)))


def subtree_shape(t: AttributeTree, ids: frozenset[int] | set[int]):
    """Canonical ordered form (nested label tuples) of a connected id set.

    Two connected subtrees are label-isomorphic as ordered trees iff
    their shapes are equal.
    """
    members = set(ids)
    parents = t.parent_map()
    tops = [n for n in members if parents.get(n) not in members]
    if len(tops) != 1:
        raise ValueError("id set is not a connected subtree")

    def shape(nid: int):
        kids = tuple(shape(c) for c in t.nodes[nid].children if c in members)
        return (t.nodes[nid].label, kids)

    return shape(tops[0])
