"""Tree-similarity and faithfulness metrics.

All structural metrics compare trees by node label (exact, case-sensitive
after trimming), treating inputs as rooted, labeled, ordered trees:

* ted          -- unit-cost ordered tree edit distance (Zhang-Shasha).
* mcs / mcs_score -- largest common connected ordered subtree, normalized
                    to [0, 100] by the geometric mean of the tree sizes.
* tree_kernel / tk_score -- shared-subtree convolution kernel with a
                    per-depth decay, normalized by the self-kernels.
* mscd         -- mean point-to-set distance between test embeddings and
                  their explanation's supported nodes (lower = more
                  faithful).

Brute-force counterparts for small trees live in :mod:`lvx.oracles`.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .embeddings import (DistanceConfig, EmbeddingError, EmbeddingStore,
                         EmbeddingVector, SupportSet, set_distance)
from .tree import AttributeTree, ExplanationTree

logger = logging.getLogger(__name__)


@dataclass
class MetricConfig:
    tk_lambda: float = 0.5
    oracle_max_nodes: int = 6

    def __post_init__(self):
        if not (0.0 < self.tk_lambda < 1.0):
            raise ValueError("tk_lambda must lie in (0, 1)")


# ---------------------------------------------------------------------------
# Tree edit distance (Zhang-Shasha dynamic program, unit costs)
# ---------------------------------------------------------------------------

def _postorder(t: AttributeTree) -> list[int]:
    out: list[int] = []

    def rec(nid: int) -> None:
        for c in t.nodes[nid].children:
            rec(c)
        out.append(nid)

    rec(t.root_id)
    return out


class _Annotated:
    """Postorder labels, leftmost-leaf indices, and keyroots (1-based)."""

    def __init__(self, t: AttributeTree):
        order = _postorder(t)
        pos = {nid: i + 1 for i, nid in enumerate(order)}
        self.n = len(order)
        self.labels = [""] + [t.nodes[nid].label for nid in order]
        self.lml = [0] * (self.n + 1)
        for i, nid in enumerate(order, start=1):
            node = t.nodes[nid]
            self.lml[i] = self.lml[pos[node.children[0]]] if node.children else i
        # keyroots: highest node of each distinct leftmost-leaf class
        highest: dict[int, int] = {}
        for i in range(1, self.n + 1):
            highest[self.lml[i]] = i
        self.keyroots = sorted(highest.values())


def ted(t1: AttributeTree, t2: AttributeTree) -> int:
    """Minimum number of unit-cost relabel/insert/delete operations."""
    a, b = _Annotated(t1), _Annotated(t2)
    td = [[0] * (b.n + 1) for _ in range(a.n + 1)]

    for i in a.keyroots:
        for j in b.keyroots:
            ioff, joff = a.lml[i] - 1, b.lml[j] - 1
            m, n = i - ioff, j - joff
            fd = [[0] * (n + 1) for _ in range(m + 1)]
            for x in range(1, m + 1):
                fd[x][0] = fd[x - 1][0] + 1
            for y in range(1, n + 1):
                fd[0][y] = fd[0][y - 1] + 1
            for x in range(1, m + 1):
                for y in range(1, n + 1):
                    if a.lml[x + ioff] == a.lml[i] and b.lml[y + joff] == b.lml[j]:
                        cost = 0 if a.labels[x + ioff] == b.labels[y + joff] else 1
                        fd[x][y] = min(fd[x - 1][y] + 1,
                                       fd[x][y - 1] + 1,
                                       fd[x - 1][y - 1] + cost)
                        td[x + ioff][y + joff] = fd[x][y]
                    else:
                        p = a.lml[x + ioff] - 1 - ioff
                        q = b.lml[y + joff] - 1 - joff
                        fd[x][y] = min(fd[x - 1][y] + 1,
                                       fd[x][y - 1] + 1,
                                       fd[p][q] + td[x + ioff][y + joff])
    return td[a.n][b.n]


# ---------------------------------------------------------------------------
# Maximum common connected ordered subtree
# ---------------------------------------------------------------------------

def _anchored_table(t1: AttributeTree, t2: AttributeTree):
    """anchored[u][v]: size of the largest common connected subtree whose
    roots are mapped u <-> v; 0 when labels differ."""
    post1, post2 = _postorder(t1), _postorder(t2)
    anchored: dict[tuple[int, int], int] = {}
    child_dp: dict[tuple[int, int], list[list[int]]] = {}
    for u in post1:
        for v in post2:
            if t1.nodes[u].label != t2.nodes[v].label:
                anchored[(u, v)] = 0
                continue
            cu, cv = t1.nodes[u].children, t2.nodes[v].children
            # non-crossing child matching (LCS-style, weighted)
            dp = [[0] * (len(cv) + 1) for _ in range(len(cu) + 1)]
            for i in range(1, len(cu) + 1):
                for j in range(1, len(cv) + 1):
                    dp[i][j] = max(dp[i - 1][j], dp[i][j - 1],
                                   dp[i - 1][j - 1]
                                   + anchored[(cu[i - 1], cv[j - 1])])
            anchored[(u, v)] = 1 + dp[len(cu)][len(cv)]
            child_dp[(u, v)] = dp
    return anchored, child_dp


def mcs(t1: AttributeTree, t2: AttributeTree) -> tuple[set[int], set[int]]:
    """A maximum-cardinality pair of label-isomorphic connected subtrees.

    Returns (ids in t1, ids in t2); both sets have the same size, the MCS
    size. Ties are broken toward the smallest preorder indices.
    """
    anchored, child_dp = _anchored_table(t1, t2)
    best = 0
    best_pair: Optional[tuple[int, int]] = None
    for u in t1.preorder():
        for v in t2.preorder():
            size = anchored[(u, v)]
            if size > best:
                best, best_pair = size, (u, v)
    if best_pair is None:
        return set(), set()

    s1: set[int] = set()
    s2: set[int] = set()

    def collect(u: int, v: int) -> None:
        s1.add(u)
        s2.add(v)
        cu, cv = t1.nodes[u].children, t2.nodes[v].children
        dp = child_dp[(u, v)]
        i, j = len(cu), len(cv)
        matched: list[tuple[int, int]] = []
        while i > 0 and j > 0:
            if dp[i][j] == dp[i - 1][j]:
                i -= 1
            elif dp[i][j] == dp[i][j - 1]:
                j -= 1
            else:
                matched.append((cu[i - 1], cv[j - 1]))
                i -= 1
                j -= 1
        for cu_i, cv_j in reversed(matched):
            if anchored[(cu_i, cv_j)] > 0:
                collect(cu_i, cv_j)

    collect(*best_pair)
    return s1, s2


def mcs_score(t1: AttributeTree, t2: AttributeTree) -> float:
    """Normalized MCS: |MCS| * 100 / sqrt(|t1| * |t2|), in [0, 100]."""
    size = len(mcs(t1, t2)[0])
    return size * 100.0 / (len(t1.nodes) * len(t2.nodes)) ** 0.5


# ---------------------------------------------------------------------------
# Tree kernel
# ---------------------------------------------------------------------------

def _shapes(t: AttributeTree) -> dict[int, tuple]:
    shapes: dict[int, tuple] = {}
    for nid in _postorder(t):
        node = t.nodes[nid]
        shapes[nid] = (node.label, tuple(shapes[c] for c in node.children))
    return shapes


def _theta_table(t1: AttributeTree, t2: AttributeTree) -> dict[tuple[int, int], int]:
    """Shared-subtree counts for every node pair, bottom-up.

    Rules: matching leaves count 1; a leaf against an internal node counts
    0; internal nodes with equal labels sum the counts over all child
    pairs, plus 1 when the full rooted subtrees are label-isomorphic.
    """
    shapes1, shapes2 = _shapes(t1), _shapes(t2)
    theta: dict[tuple[int, int], int] = {}
    for u in _postorder(t1):
        for v in _postorder(t2):
            nu, nv = t1.nodes[u], t2.nodes[v]
            u_leaf, v_leaf = not nu.children, not nv.children
            if u_leaf and v_leaf:
                theta[(u, v)] = 1 if nu.label == nv.label else 0
            elif u_leaf or v_leaf:
                theta[(u, v)] = 0
            elif nu.label != nv.label:
                theta[(u, v)] = 0
            else:
                s = sum(theta[(cu, cv)]
                        for cu in nu.children for cv in nv.children)
                if shapes1[u] == shapes2[v]:
                    s += 1
                theta[(u, v)] = s
    return theta


def tree_kernel(t1: AttributeTree, t2: AttributeTree,
                cfg: MetricConfig) -> float:
    """Unnormalized kernel: sum over all node pairs of theta^2 with a
    lambda^max(depth, depth') decay (root depth 0)."""
    theta = _theta_table(t1, t2)
    depth1 = {nid: t1.depth(nid) for nid in t1.nodes}
    depth2 = {nid: t2.depth(nid) for nid in t2.nodes}
    total = 0.0
    for (u, v), th in theta.items():
        if th:
            total += th * th * cfg.tk_lambda ** max(depth1[u], depth2[v])
    return total


def tk_score(t1: AttributeTree, t2: AttributeTree, cfg: MetricConfig) -> float:
    """Normalized kernel score in [0, 100]; 100 iff label-isomorphic."""
    self1 = tree_kernel(t1, t1, cfg)
    self2 = tree_kernel(t2, t2, cfg)
    if self1 <= 0.0 or self2 <= 0.0:
        logger.warning("tk_score: zero self-kernel, returning 0")
        return 0.0
    return tree_kernel(t1, t2, cfg) * 100.0 / (self1 * self2) ** 0.5


# ---------------------------------------------------------------------------
# Faithfulness (MSCD)
# ---------------------------------------------------------------------------

def resolve_support(t: AttributeTree, node_id: int,
                    store: EmbeddingStore) -> SupportSet:
    refs = t.nodes[node_id].support_ref
    if not refs:
        label = t.nodes[node_id].label
        raise EmbeddingError(f"node {label!r} has no support embeddings")
    return SupportSet(node_id=node_id, members=[store.get(r) for r in refs])


def sample_mscd(q: EmbeddingVector, expl: AttributeTree,
                store: EmbeddingStore, cfg: DistanceConfig) -> float:
    """Mean point-to-set distance over the explanation's non-root nodes."""
    node_ids = [nid for nid in expl.preorder() if nid != expl.root_id]
    if not node_ids:
        raise ValueError("explanation has no non-root nodes")
    dists = [set_distance(q, resolve_support(expl, nid, store), cfg)
             for nid in node_ids]
    return sum(dists) / len(dists)


def mscd(samples: Sequence[tuple[EmbeddingVector, AttributeTree]],
         store: EmbeddingStore, cfg: DistanceConfig) -> float:
    """Mean of per-sample MSCD over all samples; lower is more faithful."""
    if not samples:
        raise ValueError("mscd requires at least one sample")
    vals = [sample_mscd(q, e, store, cfg) for q, e in samples]
    return sum(vals) / len(vals)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class MetricRow:
    sample_id: str
    ted: int
    mcs: float
    tk: float


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)
    mscd: Optional[float] = None

    def aggregates(self) -> dict:
        n = len(self.rows)
        agg = {
            "n_samples": n,
            "ted_mean": sum(r.ted for r in self.rows) / n if n else 0.0,
            "mcs_mean": sum(r.mcs for r in self.rows) / n if n else 0.0,
            "tk_mean": sum(r.tk for r in self.rows) / n if n else 0.0,
        }
        if self.mscd is not None:
            agg["mscd"] = self.mscd
        return agg

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "ted", "mcs", "tk"])
            for r in self.rows:
                w.writerow([r.sample_id, r.ted, repr(r.mcs), repr(r.tk)])

    def write_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.aggregates(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def evaluate_pairs(pairs: Sequence[tuple[str, AttributeTree, AttributeTree]],
                   cfg: MetricConfig) -> MetricReport:
    """Per-sample TED/MCS/TK for (sample_id, predicted, ground-truth)."""
    report = MetricReport()
    for sid, pred, gt in pairs:
        report.rows.append(MetricRow(
            sample_id=sid,
            ted=ted(pred, gt),
            mcs=mcs_score(pred, gt),
            tk=tk_score(pred, gt, cfg),
        ))
    return report
