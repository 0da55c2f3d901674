"""Graphviz DOT rendering of attribute and explanation trees."""

from __future__ import annotations

from .tree import AttributeTree


def _escape(label: str) -> str:
    return label.replace("\\", "\\\\").replace('"', '\\"')


def to_dot(t: AttributeTree, name: str = "tree") -> str:
    """DOT digraph: one node per tree node, one edge per parent link.

    The root is drawn as a box, everything else as an ellipse.
    """
    lines = [f'digraph "{_escape(name)}" {{']
    for nid in t.preorder():
        node = t.nodes[nid]
        shape = "box" if nid == t.root_id else "ellipse"
        lines.append(f'  n{nid} [label="{_escape(node.label)}", shape={shape}];')
    for nid in t.preorder():
        for c in t.nodes[nid].children:
            lines.append(f"  n{nid} -> n{c};")
    lines.append("}")
    return "\n".join(lines) + "\n"
