"""Text-attributed graphs: loading, validation, neighborhood queries, splits.

File formats (UTF-8, tab-separated, one record per line):

* node file:  ``node_id<TAB>raw_text`` with literal tabs/newlines in the
  text escaped as ``\\t`` / ``\\n``
* edge file:  ``src_id<TAB>dst_id``
* label file: ``node_id<TAB>class_name``
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from .errors import (
    DegenerateGraph,
    DuplicateNodeId,
    EmptyText,
    MissingNode,
    TooFewLabeledNodes,
    UnknownNode,
)

Edge = Tuple[str, str]


def _canonical_edge(a: str, b: str) -> Edge:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class NodeRecord:
    node_id: str
    raw_text: str
    label: Optional[str] = None

    def __post_init__(self) -> None:
        if len(self.raw_text) < 1:
            raise EmptyText(f"node {self.node_id!r} has empty raw text")


class TextAttributedGraph:
    """Immutable undirected graph with per-node raw text.

    Self-loops are rejected and each undirected edge is stored exactly once
    as a canonically ordered pair.
    """

    def __init__(
        self,
        graph_id: str,
        nodes: Sequence[NodeRecord],
        edges: Iterable[Edge],
        domain_tag: str,
    ) -> None:
        self.graph_id = graph_id
        self.domain_tag = domain_tag
        self.nodes: Tuple[NodeRecord, ...] = tuple(nodes)

        self._by_id: Dict[str, NodeRecord] = {}
        for rec in self.nodes:
            if rec.node_id in self._by_id:
                raise DuplicateNodeId(rec.node_id)
            self._by_id[rec.node_id] = rec

        collapsed: Set[Edge] = set()
        for a, b in edges:
            if a not in self._by_id:
                raise MissingNode(f"edge endpoint {a!r} not in graph {graph_id!r}")
            if b not in self._by_id:
                raise MissingNode(f"edge endpoint {b!r} not in graph {graph_id!r}")
            if a == b:
                continue
            collapsed.add(_canonical_edge(a, b))
        self.edges: FrozenSet[Edge] = frozenset(collapsed)

        self._adj: Dict[str, Set[str]] = {rec.node_id: set() for rec in self.nodes}
        for a, b in self.edges:
            self._adj[a].add(b)
            self._adj[b].add(a)

    # --- queries ---

    def node_ids(self) -> List[str]:
        return [rec.node_id for rec in self.nodes]

    def get_node(self, node_id: str) -> NodeRecord:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def has_node(self, node_id: str) -> bool:
        return node_id in self._by_id

    def has_edge(self, a: str, b: str) -> bool:
        return _canonical_edge(a, b) in self.edges

    def degree(self, node_id: str) -> int:
        if node_id not in self._adj:
            raise UnknownNode(node_id)
        return len(self._adj[node_id])

    def adjacency(self, node_id: str) -> Set[str]:
        if node_id not in self._adj:
            raise UnknownNode(node_id)
        return set(self._adj[node_id])

    def labeled_nodes(self) -> List[NodeRecord]:
        return [rec for rec in self.nodes if rec.label is not None]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TextAttributedGraph):
            return NotImplemented
        return (
            self.graph_id == other.graph_id
            and self.domain_tag == other.domain_tag
            and self.nodes == other.nodes
            and self.edges == other.edges
        )

    def __repr__(self) -> str:
        return (
            f"TextAttributedGraph({self.graph_id!r}, "
            f"{len(self.nodes)} nodes, {len(self.edges)} edges)"
        )


@dataclass(frozen=True)
class LinkSplit:
    train_edges: FrozenSet[Edge]
    test_edges: FrozenSet[Edge]
    seed: int


@dataclass(frozen=True)
class NodeSplit:
    folds: Tuple[FrozenSet[str], ...]
    seed: int


# --- text escaping for node files ---

def escape_text(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def unescape_text(text: str) -> str:
    out: List[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            if nxt == "t":
                out.append("\t")
                i += 2
                continue
            if nxt == "n":
                out.append("\n")
                i += 2
                continue
            if nxt == "\\":
                out.append("\\")
                i += 2
                continue
        out.append(ch)
        i += 1
    return "".join(out)


# --- loading / serialization ---

def load_graph(
    node_file: Path,
    edge_file: Path,
    labels: Optional[Path] = None,
    domain_tag: str = "generic",
    graph_id: Optional[str] = None,
) -> TextAttributedGraph:
    """Load a validated graph; duplicate edges collapse, node order = file order."""
    node_file = Path(node_file)
    edge_file = Path(edge_file)
    gid = graph_id if graph_id is not None else node_file.stem

    label_map: Dict[str, str] = {}
    if labels is not None:
        for line in Path(labels).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            node_id, _, cls = line.partition("\t")
            label_map[node_id] = cls

    records: List[NodeRecord] = []
    seen: Set[str] = set()
    for line in node_file.read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        node_id, _, raw = line.partition("\t")
        if node_id in seen:
            raise DuplicateNodeId(node_id)
        seen.add(node_id)
        text = unescape_text(raw)
        if not text:
            raise EmptyText(f"node {node_id!r} has empty raw text")
        records.append(NodeRecord(node_id, text, label_map.get(node_id)))

    edges: List[Edge] = []
    for line in edge_file.read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        src, _, dst = line.partition("\t")
        edges.append((src, dst))

    return TextAttributedGraph(gid, records, edges, domain_tag)


def serialize_graph(
    graph: TextAttributedGraph,
    node_file: Path,
    edge_file: Path,
    label_file: Optional[Path] = None,
) -> None:
    """Write a graph back out in the load_graph file formats."""
    node_lines = [
        f"{rec.node_id}\t{escape_text(rec.raw_text)}" for rec in graph.nodes
    ]
    Path(node_file).write_text("\n".join(node_lines) + "\n", encoding="utf-8")

    edge_lines = [f"{a}\t{b}" for a, b in sorted(graph.edges)]
    Path(edge_file).write_text("\n".join(edge_lines) + "\n", encoding="utf-8")

    if label_file is not None:
        label_lines = [
            f"{rec.node_id}\t{rec.label}"
            for rec in graph.nodes
            if rec.label is not None
        ]
        Path(label_file).write_text("\n".join(label_lines) + "\n", encoding="utf-8")


# --- neighborhood queries ---

def neighbors(graph: TextAttributedGraph, node: str, hop: int = 1) -> Set[str]:
    """Nodes at shortest-path distance exactly `hop` from `node` (hop 1 or 2)."""
    if hop not in (1, 2):
        raise ValueError(f"hop must be 1 or 2, got {hop}")
    one_hop = graph.adjacency(node)
    if hop == 1:
        return one_hop
    two_hop: Set[str] = set()
    for mid in one_hop:
        two_hop.update(graph.adjacency(mid))
    two_hop.discard(node)
    return two_hop - one_hop


# --- splits ---

def split_links(
    graph: TextAttributedGraph, test_fraction: float, seed: int
) -> LinkSplit:
    """Seeded transductive edge split.

    Test edges are chosen so every touched node keeps at least one
    training edge, which makes the train graph span the test endpoints.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    all_edges = sorted(graph.edges)
    if len(all_edges) < 2:
        raise DegenerateGraph("need at least 2 edges to split")

    n_test = round(test_fraction * len(all_edges))
    rng = random.Random(seed)
    shuffled = list(all_edges)
    rng.shuffle(shuffled)

    remaining = {n: graph.degree(n) for n in graph.node_ids()}
    test: List[Edge] = []
    train: List[Edge] = []
    for a, b in shuffled:
        if len(test) < n_test and remaining[a] >= 2 and remaining[b] >= 2:
            test.append((a, b))
            remaining[a] -= 1
            remaining[b] -= 1
        else:
            train.append((a, b))
    if len(test) < n_test:
        raise DegenerateGraph(
            f"could only hold out {len(test)} of {n_test} edges without "
            "disconnecting test endpoints"
        )
    return LinkSplit(frozenset(train), frozenset(test), seed)


def kfold_nodes(graph: TextAttributedGraph, k: int, seed: int) -> NodeSplit:
    """Seeded k-fold partition of the labeled nodes, fold sizes within 1."""
    if k < 2:
        raise ValueError("k must be >= 2")
    labeled = sorted(rec.node_id for rec in graph.labeled_nodes())
    if len(labeled) < k:
        raise TooFewLabeledNodes(f"{len(labeled)} labeled nodes, k={k}")
    rng = random.Random(seed)
    rng.shuffle(labeled)
    folds: List[Set[str]] = [set() for _ in range(k)]
    for i, node_id in enumerate(labeled):
        folds[i % k].add(node_id)
    return NodeSplit(tuple(frozenset(f) for f in folds), seed)
