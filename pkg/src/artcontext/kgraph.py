"""Artistic knowledge graph: paintings linked to their attribute nodes.

Paintings connect directly to type, timeframe, author, material, support
and keyword nodes; schools attach through the author (one author-school
edge per distinct school), never to paintings.  Edges are undirected and
deduplicated; attribute keys are case-folded and whitespace-normalized so
spelling variants collapse into one node.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .binio import GRAPH_MAGIC_LINE
from .errors import GraphFormatError
from .ingest import DerivedAttributes, PaintingRecord, _normalize_key

FAMILIES = ("painting", "author", "school", "type", "timeframe", "material", "support", "keyword")

# Which (family, family) pairs may share an edge.
_ALLOWED_EDGES = frozenset(
    [("painting", f) for f in ("type", "timeframe", "author", "material", "support", "keyword")]
    + [("author", "school")]
)


@dataclass(frozen=True)
class NodeRef:
    family: str
    key: str

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown node family {self.family!r}")
        if not self.key:
            raise ValueError("node key must be non-empty")


class KnowledgeGraph:
    """Undirected graph with dense integer node ids and typed nodes."""

    def __init__(self):
        self._refs: list[NodeRef] = []
        self._ids: dict[NodeRef, int] = {}
        self._edges: set[tuple[int, int]] = set()
        self._adj: list[list[int]] = []
        self._sorted_adj: list[np.ndarray] | None = None

    # -- construction ---------------------------------------------------

    def add_node(self, family: str, key: str) -> int:
        ref = NodeRef(family, key)
        existing = self._ids.get(ref)
        if existing is not None:
            return existing
        idx = len(self._refs)
        self._refs.append(ref)
        self._ids[ref] = idx
        self._adj.append([])
        self._sorted_adj = None
        return idx

    def add_edge(self, a: int, b: int) -> bool:
        """Insert an undirected edge; returns False for duplicates/self-loops."""
        n = len(self._refs)
        if not (0 <= a < n and 0 <= b < n):
            raise IndexError(f"edge endpoint out of range: ({a}, {b})")
        if a == b:
            return False
        pair = (a, b) if a < b else (b, a)
        if pair in self._edges:
            return False
        self._edges.add(pair)
        self._adj[a].append(b)
        self._adj[b].append(a)
        self._sorted_adj = None
        return True

    # -- inspection -----------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return len(self._refs)

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    def node(self, idx: int) -> NodeRef:
        return self._refs[idx]

    def node_id(self, family: str, key: str) -> int | None:
        return self._ids.get(NodeRef(family, key))

    def nodes(self) -> Iterator[tuple[int, NodeRef]]:
        return enumerate(self._refs)

    def edges(self) -> Iterator[tuple[int, int]]:
        return iter(sorted(self._edges))

    def degree(self, idx: int) -> int:
        return len(self._adj[idx])

    def neighbors(self, idx: int) -> np.ndarray:
        """Sorted neighbor ids (sorted so downstream sampling is stable)."""
        if self._sorted_adj is None:
            self._sorted_adj = [np.array(sorted(nbrs), dtype=np.int64) for nbrs in self._adj]
        return self._sorted_adj[idx]

    def has_edge(self, a: int, b: int) -> bool:
        pair = (a, b) if a < b else (b, a)
        return pair in self._edges

    def node_key(self, idx: int) -> str:
        """Stable string form ``family/key`` used in embedding files."""
        ref = self._refs[idx]
        return f"{ref.family}/{ref.key}"

    def structurally_equal(self, other: "KnowledgeGraph") -> bool:
        if set(self._ids) != set(other._ids):
            return False
        mine = {frozenset((self._refs[a], self._refs[b])) for a, b in self._edges}
        theirs = {frozenset((other._refs[a], other._refs[b])) for a, b in other._edges}
        return mine == theirs


@dataclass
class GraphStats:
    nodes: int
    edges: int
    families: dict[str, int] = field(default_factory=dict)


def build_graph(
    records: Sequence[PaintingRecord],
    derived: Mapping[str, DerivedAttributes] | None = None,
) -> KnowledgeGraph:
    """Assemble the knowledge graph from training records.

    ``derived`` maps painting id to material/support/keyword attributes;
    omit it to build the metadata-only graph.  Empty attribute values
    contribute no node, leaving degenerate records as isolated paintings.
    """
    g = KnowledgeGraph()
    derived = derived or {}
    for rec in records:
        p = g.add_node("painting", rec.id)

        for family in ("type", "timeframe", "author"):
            key = _normalize_key(getattr(rec, family))
            if key:
                g.add_edge(p, g.add_node(family, key))

        # School attaches through the author; with no author there is
        # nothing to join, so no school node is created either.
        author_key = _normalize_key(rec.author)
        school_key = _normalize_key(rec.school)
        if author_key and school_key:
            a = g.add_node("author", author_key)
            g.add_edge(a, g.add_node("school", school_key))

        attrs = derived.get(rec.id)
        if attrs is not None:
            if attrs.material:
                g.add_edge(p, g.add_node("material", _normalize_key(attrs.material)))
            if attrs.support:
                g.add_edge(p, g.add_node("support", _normalize_key(attrs.support)))
            for kw in attrs.keywords:
                g.add_edge(p, g.add_node("keyword", _normalize_key(kw)))
    return g


def graph_stats(g: KnowledgeGraph) -> GraphStats:
    families = Counter(ref.family for _, ref in g.nodes())
    return GraphStats(nodes=g.num_nodes, edges=g.num_edges, families=dict(families))


def structure_violations(g: KnowledgeGraph) -> list[tuple[NodeRef, NodeRef]]:
    """Edges outside the painting-attribute / author-school pattern."""
    bad = []
    for a, b in g.edges():
        fa, fb = g.node(a).family, g.node(b).family
        if (fa, fb) not in _ALLOWED_EDGES and (fb, fa) not in _ALLOWED_EDGES:
            bad.append((g.node(a), g.node(b)))
    return bad


def save_graph(g: KnowledgeGraph, path: str) -> None:
    """Write the edge-list text format atomically."""
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(GRAPH_MAGIC_LINE + "\n")
            for idx, ref in g.nodes():
                fh.write(f"#node {idx} {ref.family} {ref.key}\n")
            for a, b in g.edges():
                fh.write(f"#edge {a} {b}\n")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def load_graph(path: str) -> KnowledgeGraph:
    g = KnowledgeGraph()
    file_to_id: dict[int, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.strip() == GRAPH_MAGIC_LINE:
                continue
            if line.startswith("#node "):
                parts = line.split(" ", 3)
                if len(parts) != 4:
                    raise GraphFormatError(lineno, f"malformed node line: {line!r}")
                _, file_id, family, key = parts
                try:
                    fid = int(file_id)
                except ValueError:
                    raise GraphFormatError(lineno, f"node id is not an integer: {file_id!r}") from None
                if fid in file_to_id:
                    raise GraphFormatError(lineno, f"duplicate node id {fid}")
                try:
                    file_to_id[fid] = g.add_node(family, key)
                except ValueError as exc:
                    raise GraphFormatError(lineno, str(exc)) from None
            elif line.startswith("#edge "):
                parts = line.split(" ")
                if len(parts) != 3:
                    raise GraphFormatError(lineno, f"malformed edge line: {line!r}")
                try:
                    a, b = int(parts[1]), int(parts[2])
                except ValueError:
                    raise GraphFormatError(lineno, f"edge endpoints must be integers: {line!r}") from None
                if a not in file_to_id or b not in file_to_id:
                    raise GraphFormatError(lineno, f"edge references undefined node: {line!r}")
                g.add_edge(file_to_id[a], file_to_id[b])
            else:
                raise GraphFormatError(lineno, f"unrecognized line: {line!r}")
    return g
