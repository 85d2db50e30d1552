"""Typed property graph: loading, indexing, and read-only queries.

The graph is loaded once from a delimited edge table (PrimeKG-style
columns) and is immutable afterwards; every downstream stage only reads
from it. Node ids are dense integers assigned in order of first
appearance, which keeps loading deterministic without a global sort.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

from .errors import SchemaError

NodeId = int

SNAPSHOT_MAGIC = "PFKG1"

REQUIRED_COLUMNS = (
    "relation",
    "display_relation",
    "x_index",
    "x_id",
    "x_type",
    "x_name",
    "x_source",
    "y_index",
    "y_id",
    "y_type",
    "y_name",
    "y_source",
)


@dataclass
class Node:
    id: NodeId
    node_type: str
    name: str
    aliases: set[str] = field(default_factory=set)
    source_id: str = ""


@dataclass(frozen=True)
class Edge:
    head: NodeId
    relation: str
    tail: NodeId
    inverse_of: str | None = None


@dataclass(frozen=True)
class LoadOptions:
    delimiter: str = ","
    materialize_inverse: bool = False
    inverse_prefix: str = "inv:"


@dataclass(frozen=True)
class GraphStats:
    node_count: int
    edge_count: int
    nodes_per_type: dict[str, int]
    edges_per_relation: dict[str, int]


class Graph:
    """Immutable container for nodes, edges, and both adjacency indices."""

    def __init__(self, nodes: Sequence[Node], edges: Sequence[Edge]):
        self.nodes: tuple[Node, ...] = tuple(nodes)
        self.edges: tuple[Edge, ...] = tuple(edges)
        self.out_index: dict[tuple[NodeId, str], list[NodeId]] = {}
        self.in_index: dict[tuple[NodeId, str], list[NodeId]] = {}
        self._triples: set[tuple[NodeId, str, NodeId]] = set()
        out_adj: dict[NodeId, list[tuple[str, NodeId]]] = {n.id: [] for n in self.nodes}
        in_adj: dict[NodeId, list[tuple[str, NodeId, str]]] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            if not (0 <= e.head < len(self.nodes)) or not (0 <= e.tail < len(self.nodes)):
                raise ValueError(f"edge references unknown node: {e}")
            self.out_index.setdefault((e.head, e.relation), []).append(e.tail)
            self.in_index.setdefault((e.tail, e.relation), []).append(e.head)
            self._triples.add((e.head, e.relation, e.tail))
            out_adj[e.head].append((e.relation, e.tail))
            # in-neighbour entry: (reported label, neighbour, underlying relation)
            label = e.inverse_of if e.inverse_of is not None else e.relation
            in_adj[e.tail].append((label, e.head, e.relation))
        for lst in self.out_index.values():
            lst.sort()
        for lst in self.in_index.values():
            lst.sort()
        self.out_adj: dict[NodeId, tuple[tuple[str, NodeId], ...]] = {
            n: tuple(sorted(v)) for n, v in out_adj.items()
        }
        self.in_adj: dict[NodeId, tuple[tuple[str, NodeId, str], ...]] = {
            n: tuple(sorted(v)) for n, v in in_adj.items()
        }
        self._ids_by_type: dict[str, list[NodeId]] = {}
        for n in self.nodes:
            self._ids_by_type.setdefault(n.node_type, []).append(n.id)
        self._both_adj: dict[NodeId, tuple[tuple[str, NodeId], ...]] | None = None
        self._rev_adj: dict[bool, dict[NodeId, tuple[NodeId, ...]]] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: NodeId) -> Node:
        if not (0 <= node_id < len(self.nodes)):
            raise ValueError(f"unknown node id {node_id}")
        return self.nodes[node_id]

    def name(self, node_id: NodeId) -> str:
        return self.node(node_id).name

    def nodes_of_type(self, node_type: str) -> list[NodeId]:
        return list(self._ids_by_type.get(node_type, []))

    def node_types(self) -> list[str]:
        return sorted(self._ids_by_type)

    def relations(self) -> list[str]:
        return sorted({e.relation for e in self.edges})

    def find_nodes(self, name: str) -> list[NodeId]:
        return [n.id for n in self.nodes if n.name == name]

    def has_edge(self, head: NodeId, relation: str, tail: NodeId) -> bool:
        return (head, relation, tail) in self._triples

    def has_traversal(self, src: NodeId, label: str, dst: NodeId) -> bool:
        """True if src can step to dst under `label`, forward or inverse."""
        if (src, label, dst) in self._triples:
            return True
        return any(
            lbl == label and nb == dst for lbl, nb, _ in self.in_adj.get(src, ())
        )

    def traversal_adj(self, allow_inverse: bool) -> dict[NodeId, tuple[tuple[str, NodeId], ...]]:
        """Adjacency used by path search; inverse edges appear under their
        inverse_of label when enabled."""
        if not allow_inverse:
            return self.out_adj
        if self._both_adj is None:
            merged: dict[NodeId, tuple[tuple[str, NodeId], ...]] = {}
            for nid in range(len(self.nodes)):
                rev = [(lbl, nb) for lbl, nb, _ in self.in_adj.get(nid, ())]
                merged[nid] = tuple(sorted(set(self.out_adj.get(nid, ())) | set(rev)))
            self._both_adj = merged
        return self._both_adj

    def reverse_traversal_adj(self, allow_inverse: bool) -> dict[NodeId, tuple[NodeId, ...]]:
        """Predecessors under traversal_adj, cached; used for BFS pruning."""
        cached = self._rev_adj.get(allow_inverse)
        if cached is None:
            preds: dict[NodeId, set[NodeId]] = {n.id: set() for n in self.nodes}
            for nid, entries in self.traversal_adj(allow_inverse).items():
                for _, nb in entries:
                    preds[nb].add(nid)
            cached = {n: tuple(sorted(v)) for n, v in preds.items()}
            self._rev_adj[allow_inverse] = cached
        return cached


def _node_key(node_type: str, ext_id: str, name: str) -> tuple[str, str]:
    return (node_type, ext_id if ext_id else name)


def load_graph(source: str | Path, options: LoadOptions = LoadOptions()) -> Graph:
    """Load a graph from a delimited edge table with a mandatory header.

    Duplicate (head, relation, tail) triples collapse to one edge and node
    metadata is taken from the first occurrence. A malformed row aborts
    the load with its 1-based line number.
    """
    path = Path(source)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=options.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            return Graph([], [])
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"missing column: {missing[0]} in {path}")
        col = {name: header.index(name) for name in REQUIRED_COLUMNS}

        nodes: list[Node] = []
        by_key: dict[tuple[str, str], NodeId] = {}
        edges: list[Edge] = []
        seen: set[tuple[NodeId, str, NodeId]] = set()

        def intern(ntype: str, ext_id: str, name: str, src: str, lineno: int) -> NodeId:
            if not name:
                raise SchemaError(f"empty node name at line {lineno} in {path}")
            key = _node_key(ntype, ext_id, name)
            nid = by_key.get(key)
            if nid is None:
                nid = len(nodes)
                by_key[key] = nid
                nodes.append(Node(id=nid, node_type=ntype, name=name, source_id=ext_id or src))
            return nid

        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(
                    f"malformed row at line {lineno} in {path}: "
                    f"expected {len(header)} fields, got {len(row)}"
                )
            h = intern(row[col["x_type"]], row[col["x_id"]], row[col["x_name"]],
                       row[col["x_source"]], lineno)
            t = intern(row[col["y_type"]], row[col["y_id"]], row[col["y_name"]],
                       row[col["y_source"]], lineno)
            rel = row[col["relation"]]
            if (h, rel, t) in seen:
                continue
            seen.add((h, rel, t))
            edges.append(Edge(head=h, relation=rel, tail=t,
                              inverse_of=options.inverse_prefix + rel))

    if options.materialize_inverse:
        for e in list(edges):
            inv = (e.tail, options.inverse_prefix + e.relation, e.head)
            if inv not in seen:
                seen.add(inv)
                edges.append(Edge(head=inv[0], relation=inv[1], tail=inv[2],
                                  inverse_of=e.relation))
    return Graph(nodes, edges)


def build_graph(
    nodes: Sequence[tuple],
    edges: Sequence[tuple[int, str, int]],
    materialize_inverse: bool = False,
    inverse_prefix: str = "inv:",
) -> Graph:
    """Construct a graph directly from (type, name[, source_id[, aliases]])
    node specs and (head, relation, tail) index triples. Intended for
    tests and synthetic graphs; applies the same dedup rules as loading."""
    node_objs: list[Node] = []
    for i, spec in enumerate(nodes):
        ntype, name = spec[0], spec[1]
        source_id = spec[2] if len(spec) > 2 else ""
        aliases = set(spec[3]) if len(spec) > 3 else set()
        node_objs.append(Node(id=i, node_type=ntype, name=name,
                              aliases=aliases, source_id=source_id))
    seen: set[tuple[NodeId, str, NodeId]] = set()
    edge_objs: list[Edge] = []
    for h, rel, t in edges:
        if not (0 <= h < len(node_objs)) or not (0 <= t < len(node_objs)):
            raise ValueError(f"edge ({h}, {rel}, {t}) references unknown node")
        if (h, rel, t) in seen:
            continue
        seen.add((h, rel, t))
        edge_objs.append(Edge(head=h, relation=rel, tail=t, inverse_of=inverse_prefix + rel))
    if materialize_inverse:
        for e in list(edge_objs):
            inv = (e.tail, inverse_prefix + e.relation, e.head)
            if inv not in seen:
                seen.add(inv)
                edge_objs.append(Edge(head=inv[0], relation=inv[1], tail=inv[2],
                                      inverse_of=e.relation))
    return Graph(node_objs, edge_objs)


def neighbors(
    graph: Graph,
    node: NodeId,
    relation: str | None = None,
    direction: str = "out",
) -> list[tuple[str, NodeId]]:
    """Sorted (label, node) pairs adjacent to `node`.

    direction="in" reports entries under each edge's inverse_of label; the
    `relation` filter always refers to the stored edge relation.
    """
    graph.node(node)
    if direction not in ("out", "in", "both"):
        raise ValueError(f"invalid direction {direction!r}")
    result: set[tuple[str, NodeId]] = set()
    if direction in ("out", "both"):
        if relation is None:
            result.update(graph.out_adj.get(node, ()))
        else:
            result.update((relation, t) for t in graph.out_index.get((node, relation), ()))
    if direction in ("in", "both"):
        for label, nb, rel in graph.in_adj.get(node, ()):
            if relation is None or rel == relation:
                result.add((label, nb))
    return sorted(result)


def graph_stats(graph: Graph) -> GraphStats:
    per_type: dict[str, int] = {}
    for n in graph.nodes:
        per_type[n.node_type] = per_type.get(n.node_type, 0) + 1
    per_rel: dict[str, int] = {}
    for e in graph.edges:
        per_rel[e.relation] = per_rel.get(e.relation, 0) + 1
    return GraphStats(
        node_count=len(graph.nodes),
        edge_count=len(graph.edges),
        nodes_per_type=dict(sorted(per_type.items())),
        edges_per_relation=dict(sorted(per_rel.items())),
    )


def save_snapshot(graph: Graph, destination: str | Path) -> None:
    """Write a versioned line-oriented snapshot for fast reload."""
    path = Path(destination)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(SNAPSHOT_MAGIC + "\n")
        fh.write(json.dumps({"nodes": len(graph.nodes), "edges": len(graph.edges)}) + "\n")
        for n in graph.nodes:
            fh.write(json.dumps({
                "id": n.id, "type": n.node_type, "name": n.name,
                "aliases": sorted(n.aliases), "source_id": n.source_id,
            }, ensure_ascii=False) + "\n")
        for e in graph.edges:
            fh.write(json.dumps({
                "h": e.head, "r": e.relation, "t": e.tail, "inv": e.inverse_of,
            }, ensure_ascii=False) + "\n")


def load_snapshot(source: str | Path) -> Graph:
    path = Path(source)
    with path.open(encoding="utf-8") as fh:
        magic = fh.readline().rstrip("\n")
        if magic != SNAPSHOT_MAGIC:
            raise SchemaError(f"not a {SNAPSHOT_MAGIC} snapshot: {path}")
        try:
            counts = json.loads(fh.readline())
            nodes = []
            for _ in range(counts["nodes"]):
                rec = json.loads(fh.readline())
                nodes.append(Node(id=rec["id"], node_type=rec["type"], name=rec["name"],
                                  aliases=set(rec["aliases"]), source_id=rec["source_id"]))
            edges = []
            for _ in range(counts["edges"]):
                rec = json.loads(fh.readline())
                edges.append(Edge(head=rec["h"], relation=rec["r"], tail=rec["t"],
                                  inverse_of=rec["inv"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise SchemaError(f"corrupt snapshot {path}: {exc}") from exc
    return Graph(nodes, edges)


def write_edge_table(graph: Graph, destination: str | Path, delimiter: str = ",") -> None:
    """Serialize the graph back to the edge-table format accepted by
    load_graph; reloading yields an isomorphic graph."""
    path = Path(destination)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(REQUIRED_COLUMNS)
        for e in graph.edges:
            h, t = graph.nodes[e.head], graph.nodes[e.tail]
            writer.writerow([
                e.relation, e.relation,
                h.id, h.source_id, h.node_type, h.name, h.source_id,
                t.id, t.source_id, t.node_type, t.name, t.source_id,
            ])


def iter_adjacency_triples(graph: Graph) -> Iterator[tuple[str, str, str]]:
    """(head name, relation, tail name) triples, for isomorphism checks."""
    for e in graph.edges:
        yield (graph.nodes[e.head].name, e.relation, graph.nodes[e.tail].name)
