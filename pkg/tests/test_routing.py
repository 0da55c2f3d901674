import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lvx.embeddings import DistanceConfig, EmbeddingStore, EmbeddingVector
from lvx.routing import (HAS_FINDINGS_LABEL, NO_FINDINGS_LABEL,
                         MultiLabelPrediction, RoutingConfig, RoutingError,
                         explain, explain_multilabel, rank_nodes)
from lvx.tree import NodeKind

from conftest import make_tree, store_from_vectors
from test_embeddings import vec

DIST = DistanceConfig()


def supported_tree(spec, supports):
    t = make_tree(spec)
    for node in t.nodes.values():
        if node.label in supports:
            node.support_ref = supports[node.label]
    return t


def line_tree():
    """c -> a -> b, plus sibling d; supports at 0, 1, 2 on the x axis."""
    t = supported_tree(("c", [("a", ["b"]), "d"]),
                       {"a": ["ea"], "b": ["eb"], "d": ["ed"]})
    store = store_from_vectors({"ea": [0.0], "eb": [1.0], "ed": [2.0]})
    return t, store


class TestRankNodes:
    def test_ascending_distance(self):
        t, store = line_tree()
        ranked = rank_nodes(vec("q", 0.9), t, store, DIST)
        labels = [t.nodes[nid].label for nid, _ in ranked]
        assert labels == ["b", "a", "d"]
        dists = [d for _, d in ranked]
        assert dists == sorted(dists)

    def test_root_and_unsupported_excluded(self):
        t = supported_tree(("c", ["a", "u"]), {"a": ["ea"]})
        store = store_from_vectors({"ea": [0.0]})
        ranked = rank_nodes(vec("q", 0.0), t, store, DIST)
        assert [t.nodes[nid].label for nid, _ in ranked] == ["a"]

    def test_tie_breaks_to_preorder(self):
        t = supported_tree(("c", ["a", "b"]), {"a": ["ea"], "b": ["eb"]})
        store = store_from_vectors({"ea": [1.0], "eb": [-1.0]})
        ranked = rank_nodes(vec("q", 0.0), t, store, DIST)
        assert [t.nodes[nid].label for nid, _ in ranked] == ["a", "b"]

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50),
           st.floats(-50, 50))
    def test_order_matches_raw_squared_distance(self, q, a, b, c):
        """The stabilized log distance is monotone in the raw squared
        distance, so the ranking must agree with a plain nearest-point sort."""
        t = supported_tree(("r", ["a", "b", "c"]),
                           {"a": ["ea"], "b": ["eb"], "c": ["ec"]})
        store = store_from_vectors({"ea": [a], "eb": [b], "ec": [c]})
        ranked = rank_nodes(vec("q", q), t, store, DIST)
        raw = {lbl: (q - p) ** 2 for lbl, p in zip("abc", [a, b, c])}
        # the ranking must be non-decreasing, and any strict gap in the
        # log distance must reflect a strict gap in the raw distance
        # (exact log-distance ties fall back to preorder)
        for (n1, d1), (n2, d2) in zip(ranked, ranked[1:]):
            assert d1 <= d2
            if d1 < d2:
                assert raw[t.nodes[n1].label] < raw[t.nodes[n2].label]


class TestExplain:
    def test_k1_is_nearest_path(self):
        t, store = line_tree()
        e = explain(vec("q", 1.0), "c", {"c": t}, store, RoutingConfig(k=1),
                    DIST)
        assert sorted(n.label for n in e.nodes.values()) == ["a", "b", "c"]
        assert e.source_sample == "q"
        assert [e.nodes[s].label for s in e.selected_nodes] == ["b"]

    def test_k_all_recovers_tree(self):
        t, store = line_tree()
        e = explain(vec("q", 0.0), "c", {"c": t}, store, RoutingConfig(k=3),
                    DIST)
        assert sorted(n.label for n in e.nodes.values()) == \
            sorted(n.label for n in t.nodes.values())

    def test_selected_in_ascending_distance_order(self):
        t, store = line_tree()
        e = explain(vec("q", 1.9), "c", {"c": t}, store, RoutingConfig(k=3),
                    DIST)
        assert [e.nodes[s].label for s in e.selected_nodes] == ["d", "b", "a"]

    def test_k_too_large(self):
        t, store = line_tree()
        with pytest.raises(RoutingError, match="k=4.*3 supported"):
            explain(vec("q", 0.0), "c", {"c": t}, store, RoutingConfig(k=4),
                    DIST)

    def test_unknown_category(self):
        t, store = line_tree()
        with pytest.raises(RoutingError, match="no tree"):
            explain(vec("q", 0.0), "x", {"c": t}, store, RoutingConfig(k=1),
                    DIST)

    def test_gaussian_cluster_routing(self):
        """Samples drawn near a node's support cluster should select it."""
        rng = np.random.default_rng(7)
        centers = {"a": np.array([0.0, 0.0]), "b": np.array([30.0, 0.0]),
                   "c2": np.array([0.0, 30.0])}
        store = EmbeddingStore()
        supports = {}
        for label, c in centers.items():
            ids = [f"{label}-{i}" for i in range(8)]
            for eid in ids:
                store.add(EmbeddingVector(eid, c + rng.normal(0, 1.0, 2)))
            supports[label] = ids
        t = supported_tree(("r", ["a", "b", "c2"]), supports)
        hits = 0
        for i in range(200):
            q = vec(f"q{i}", *(centers["b"] + rng.normal(0, 1.0, 2)))
            e = explain(q, "r", {"r": t}, store, RoutingConfig(k=1), DIST)
            hits += "b" in {n.label for n in e.nodes.values()}
        assert hits == 200


class TestMultiLabel:
    def _fixture(self):
        ta = supported_tree(("atelectasis", ["alpha"]), {"alpha": ["e1"]})
        tb = supported_tree(("effusion", ["beta"]), {"beta": ["e2"]})
        store = store_from_vectors({"e1": [0.0], "e2": [1.0]})
        return [("atelectasis", ta), ("effusion", tb)], store

    def test_all_zero_flags(self):
        trees, store = self._fixture()
        e = explain_multilabel(vec("q", 0.0), MultiLabelPrediction([0, 0]),
                               trees, store, RoutingConfig(k=1), DIST)
        assert len(e.nodes) == 1
        assert e.nodes[e.root_id].label == NO_FINDINGS_LABEL
        assert e.nodes[e.root_id].kind == NodeKind.ROOT

    def test_two_positive_findings(self):
        trees, store = self._fixture()
        e = explain_multilabel(vec("q", 0.5), MultiLabelPrediction([1, 1]),
                               trees, store, RoutingConfig(k=1), DIST)
        root = e.nodes[e.root_id]
        assert root.label == HAS_FINDINGS_LABEL
        assert len(root.children) == 2
        kids = [e.nodes[c].label for c in root.children]
        assert kids == ["atelectasis", "effusion"]
        assert sorted(e.nodes[s].label for s in e.selected_nodes) == \
            ["alpha", "beta"]

    def test_single_positive_preserves_order(self):
        trees, store = self._fixture()
        e = explain_multilabel(vec("q", 1.0), MultiLabelPrediction([0, 1]),
                               trees, store, RoutingConfig(k=1), DIST)
        root = e.nodes[e.root_id]
        assert [e.nodes[c].label for c in root.children] == ["effusion"]

    def test_flag_length_mismatch(self):
        trees, store = self._fixture()
        with pytest.raises(RoutingError, match="3 flags for 2"):
            explain_multilabel(vec("q", 0.0),
                               MultiLabelPrediction([1, 0, 1]), trees, store,
                               RoutingConfig(k=1), DIST)

    def test_composed_ids_are_consistent(self):
        trees, store = self._fixture()
        e = explain_multilabel(vec("q", 0.5), MultiLabelPrediction([1, 1]),
                               trees, store, RoutingConfig(k=1), DIST)
        seen = list(e.preorder())
        assert sorted(seen) == sorted(e.nodes)
        for nid, node in e.nodes.items():
            assert node.id == nid
