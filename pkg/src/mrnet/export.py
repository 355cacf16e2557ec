"""DOT, GraphML and JSON renderings of a :class:`CausalGraph`."""

from __future__ import annotations

import xml.etree.ElementTree as ET

from .graph import CONFLICTED, DIRECTED, CausalGraph

FORMATS = ("dot", "graphml", "json")


def _q(s: str) -> str:
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(graph: CausalGraph, modules=None) -> str:
    """Graphviz text. Directed edges use ``->``; undirected edges ``dir=none``;
    conflicted edges are also dashed. ``modules`` (a ModulePartition) adds clusters."""
    lines = ["digraph mrnet {", "  node [shape=ellipse];"]
    if modules is not None:
        for i, members in enumerate(modules.modules):
            lines.append(f"  subgraph cluster_{i} {{")
            lines.append(f"    label={_q(f'module {i}')};")
            for n in sorted(members):
                style = " [penwidth=2]" if n in modules.border_nodes else ""
                lines.append(f"    {_q(n)}{style};")
            lines.append("  }")
    clustered = set().union(*modules.modules) if modules is not None else set()
    for n in graph.nodes:
        if n in clustered:
            continue
        attrs = " [shape=box]" if n == graph.outcome else ""
        lines.append(f"  {_q(n)}{attrs};")
    for e in graph.edges:
        attrs = []
        if e.coefficient is not None:
            attrs.append(f"label={_q(format(e.coefficient, '.3g'))}")
        if e.status != DIRECTED:
            attrs.append("dir=none")
        if e.status == CONFLICTED:
            attrs.append("style=dashed")
        tail = f" [{', '.join(attrs)}]" if attrs else ""
        lines.append(f"  {_q(e.a)} -> {_q(e.b)}{tail};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_graphml(graph: CausalGraph) -> str:
    """GraphML with a per-edge ``directed`` flag and status/coefficient data."""
    ns = "http://graphml.graphdrawing.org/xmlns"
    root = ET.Element("graphml", {"xmlns": ns})
    keys = [("status", "edge", "string"), ("coefficient", "edge", "double"),
            ("outcome", "node", "boolean")]
    for name, target, typ in keys:
        ET.SubElement(root, "key", {"id": name, "for": target, "attr.name": name, "attr.type": typ})
    g = ET.SubElement(root, "graph", {"id": "mrnet", "edgedefault": "directed"})
    for n in graph.nodes:
        node = ET.SubElement(g, "node", {"id": n})
        if n == graph.outcome:
            ET.SubElement(node, "data", {"key": "outcome"}).text = "true"
    for i, e in enumerate(graph.edges):
        attrs = {"id": f"e{i}", "source": e.a, "target": e.b}
        if e.status != DIRECTED:
            attrs["directed"] = "false"
        edge = ET.SubElement(g, "edge", attrs)
        ET.SubElement(edge, "data", {"key": "status"}).text = e.status
        if e.coefficient is not None:
            ET.SubElement(edge, "data", {"key": "coefficient"}).text = repr(e.coefficient)
    ET.indent(root)
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"


def render(graph: CausalGraph, fmt: str) -> str:
    if fmt == "dot":
        return to_dot(graph)
    if fmt == "graphml":
        return to_graphml(graph)
    if fmt == "json":
        return graph.to_json()
    raise ValueError(f"unknown format {fmt!r}; choose from {FORMATS}")
