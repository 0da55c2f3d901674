"""Brute-force reference implementations for the tree metrics.

These are deliberately naive and independent of the production dynamic
programs in :mod:`lvx.metrics`; they are only tractable for small trees
(bounded by ``MetricConfig.oracle_max_nodes``). Trees are handled in a
plain nested form ``(label, (child, ...))`` so that no production code
path is shared beyond the data model itself.
"""

from __future__ import annotations

from functools import lru_cache

from .tree import AttributeTree, enumerate_subtrees, subtree_shape

Nested = tuple  # (label: str, children: tuple[Nested, ...])


def to_nested(t: AttributeTree, node_id: int | None = None) -> Nested:
    nid = t.root_id if node_id is None else node_id
    node = t.nodes[nid]
    return (node.label, tuple(to_nested(t, c) for c in node.children))


def _size(tree: Nested) -> int:
    return 1 + sum(_size(c) for c in tree[1])


def _forest_size(forest: tuple[Nested, ...]) -> int:
    return sum(_size(t) for t in forest)


@lru_cache(maxsize=None)
def _forest_distance(f1: tuple[Nested, ...], f2: tuple[Nested, ...]) -> int:
    if not f1 and not f2:
        return 0
    if not f1:
        return _forest_size(f2)
    if not f2:
        return _forest_size(f1)
    v, w = f1[-1], f2[-1]
    delete_v = _forest_distance(f1[:-1] + v[1], f2) + 1
    insert_w = _forest_distance(f1, f2[:-1] + w[1]) + 1
    relabel = (_forest_distance(v[1], w[1])
               + _forest_distance(f1[:-1], f2[:-1])
               + (0 if v[0] == w[0] else 1))
    return min(delete_v, insert_w, relabel)


def ted_oracle(t1: AttributeTree, t2: AttributeTree) -> int:
    """Ordered tree edit distance by exhaustive recursive search over the
    rightmost-node decomposition of forests."""
    return _forest_distance((to_nested(t1),), (to_nested(t2),))


def mcs_size_oracle(t1: AttributeTree, t2: AttributeTree) -> int:
    """MCS size by full cross-product of enumerated connected subtrees."""
    cap = min(len(t1.nodes), len(t2.nodes))
    shapes2 = {subtree_shape(t2, s) for s in enumerate_subtrees(t2, cap)}
    best = 0
    for s in enumerate_subtrees(t1, cap):
        if len(s) > best and subtree_shape(t1, s) in shapes2:
            best = len(s)
    return best


def _theta(t: Nested, u: Nested) -> int:
    t_leaf, u_leaf = not t[1], not u[1]
    if t_leaf and u_leaf:
        return 1 if t[0] == u[0] else 0
    if t_leaf or u_leaf:
        return 0
    if t[0] != u[0]:
        return 0
    s = sum(_theta(ci, dj) for ci in t[1] for dj in u[1])
    if t == u:
        s += 1
    return s


def tree_kernel_oracle(t1: AttributeTree, t2: AttributeTree,
                       tk_lambda: float) -> float:
    """Tree kernel by direct (unmemoized) recursion over all node pairs."""

    def nodes_with_depth(tree: Nested, depth: int = 0):
        yield tree, depth
        for c in tree[1]:
            yield from nodes_with_depth(c, depth + 1)

    n1, n2 = to_nested(t1), to_nested(t2)
    total = 0.0
    for sub1, d1 in nodes_with_depth(n1):
        for sub2, d2 in nodes_with_depth(n2):
            th = _theta(sub1, sub2)
            if th:
                total += th * th * tk_lambda ** max(d1, d2)
    return total
