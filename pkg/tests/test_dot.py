import re

from lvx.dot import to_dot

from conftest import make_tree


def test_node_and_edge_counts():
    t = make_tree(("r", ["a", ("b", ["c"]), "d"]))
    dot = to_dot(t)
    assert len(re.findall(r"n\d+ \[label=", dot)) == 5
    assert len(re.findall(r"n\d+ -> n\d+;", dot)) == 4


def test_root_is_box_others_ellipse():
    t = make_tree(("r", ["a"]))
    dot = to_dot(t)
    assert 'n0 [label="r", shape=box];' in dot
    assert 'n1 [label="a", shape=ellipse];' in dot


def test_quote_and_backslash_escaping():
    t = make_tree(('say "hi"\\now', []))
    dot = to_dot(t, name='g"1')
    assert 'digraph "g\\"1"' in dot
    assert 'label="say \\"hi\\"\\\\now"' in dot
    # every label value stays a single quoted token: quotes inside are escaped
    for m in re.finditer(r'label="((?:[^"\\]|\\.)*)"', dot):
        assert m.group(1) is not None


def test_edges_reference_declared_nodes():
    t = make_tree(("r", [("a", ["b", "c"]), "d"]))
    dot = to_dot(t)
    declared = set(re.findall(r"(n\d+) \[label=", dot))
    for src, dst in re.findall(r"(n\d+) -> (n\d+);", dot):
        assert src in declared and dst in declared
