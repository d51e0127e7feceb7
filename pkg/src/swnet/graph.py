"""Channel-level graph form of a network architecture.

Every feature-map channel (and every FC neuron group) is one node; every
kernel or weight-matrix block between consecutive layers is one edge. Nodes
are numbered layer-major: input channels first, then layer by layer. The
graph is a DAG with strictly forward edges, stored directed; metrics operate
on the undirected skeleton exposed by `undirected_view`.
"""

from __future__ import annotations

from dataclasses import dataclass

from .arch import ArchitectureSpec


class GraphError(ValueError):
    """Raised on malformed graphs or graph files."""


@dataclass(frozen=True)
class Violation:
    """One invariant violation found by validate()."""

    kind: str  # self_loop | duplicate_edge | backward_edge | empty_layer | invalid_node
    message: str

    def __str__(self):
        return f"{self.kind}: {self.message}"


@dataclass(frozen=True)
class LayeredGraph:
    """Immutable layered DAG: node_layers[i] is node i's layer index.

    Edges are kept in canonical sorted order. Construction does not validate
    or deduplicate; use validate() for diagnostics.
    """

    node_layers: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    layer_count: int

    def __post_init__(self):
        object.__setattr__(self, "node_layers", tuple(self.node_layers))
        object.__setattr__(self, "edges", tuple(sorted(tuple(e) for e in self.edges)))

    @property
    def n_nodes(self) -> int:
        return len(self.node_layers)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def nodes(self) -> list[tuple[int, int]]:
        """(node_id, layer_index) pairs."""
        return list(enumerate(self.node_layers))

    def layer_sizes(self) -> list[int]:
        sizes = [0] * self.layer_count
        for layer in self.node_layers:
            if 0 <= layer < self.layer_count:
                sizes[layer] += 1
        return sizes

    def nodes_in_layer(self, layer: int) -> list[int]:
        return [i for i, l in enumerate(self.node_layers) if l == layer]

    def is_layer_major(self) -> bool:
        """True if node ids increase with layer index (the pipeline's layout)."""
        return all(a <= b for a, b in zip(self.node_layers, self.node_layers[1:]))

    def undirected_view(self) -> "UndirectedView":
        return UndirectedView.from_edges(self.n_nodes, self.edges)

    def replace_edges(self, edges) -> "LayeredGraph":
        return LayeredGraph(self.node_layers, tuple(edges), self.layer_count)


class UndirectedView:
    """Undirected skeleton of a graph: per-node neighbor sets plus bitsets.

    Bitsets (python ints) back the triangle counting; neighbor sets back
    eligibility queries. Self-loops are dropped, parallel edges collapse.
    """

    __slots__ = ("n", "neighbors", "bits")

    def __init__(self, n: int, neighbors: list[set[int]]):
        self.n = n
        self.neighbors = neighbors
        bits = []
        for nbrs in neighbors:
            b = 0
            for u in nbrs:
                b |= 1 << u
            bits.append(b)
        self.bits = bits

    @classmethod
    def from_edges(cls, n: int, edges) -> "UndirectedView":
        neighbors = [set() for _ in range(n)]
        for a, b in edges:
            if a == b:
                continue
            neighbors[a].add(b)
            neighbors[b].add(a)
        return cls(n, neighbors)

    @property
    def n_edges(self) -> int:
        return sum(len(s) for s in self.neighbors) // 2

    def degree(self, v: int) -> int:
        return len(self.neighbors[v])


def from_architecture(spec: ArchitectureSpec) -> LayeredGraph:
    """Dense channel graph of an architecture: complete bipartite between
    consecutive layers, input channels as layer 0."""
    counts = spec.node_counts()
    offsets = [0]
    for c in counts:
        offsets.append(offsets[-1] + c)
    node_layers = []
    for layer, c in enumerate(counts):
        node_layers.extend([layer] * c)
    edges = []
    for layer in range(len(counts) - 1):
        for src in range(offsets[layer], offsets[layer + 1]):
            for dst in range(offsets[layer + 1], offsets[layer + 2]):
                edges.append((src, dst))
    return LayeredGraph(tuple(node_layers), tuple(edges), len(counts))


def validate(graph: LayeredGraph) -> list[Violation]:
    """Diagnostic check of all LayeredGraph invariants; empty list iff well-formed."""
    out = []
    n = graph.n_nodes
    for i, layer in enumerate(graph.node_layers):
        if not 0 <= layer < graph.layer_count:
            out.append(Violation("invalid_node", f"node {i} has layer {layer} outside [0, {graph.layer_count})"))
    sizes = graph.layer_sizes()
    for layer, size in enumerate(sizes):
        if size == 0:
            out.append(Violation("empty_layer", f"layer {layer} has no nodes"))
    seen = set()
    for src, dst in graph.edges:
        if not (0 <= src < n and 0 <= dst < n):
            out.append(Violation("invalid_node", f"edge ({src}, {dst}) references a missing node"))
            continue
        if src == dst:
            out.append(Violation("self_loop", f"edge ({src}, {dst})"))
            continue
        if (src, dst) in seen:
            out.append(Violation("duplicate_edge", f"edge ({src}, {dst}) appears more than once"))
        seen.add((src, dst))
        if graph.node_layers[src] >= graph.node_layers[dst]:
            out.append(
                Violation(
                    "backward_edge",
                    f"edge ({src}, {dst}) goes from layer {graph.node_layers[src]} "
                    f"to layer {graph.node_layers[dst]}",
                )
            )
    return out


# ---------------------------------------------------------------------------
# Edge-list text format
#
#   nodes=<N> layers=<K>
#   layer_sizes=<s0> <s1> ... <s{K-1}>
#   <src> <dst>
#   ...
#
# Node ids are layer-major, so layer_sizes fully determines the layering.
# ---------------------------------------------------------------------------


def save_edge_list(graph: LayeredGraph, path) -> None:
    if not graph.is_layer_major():
        raise GraphError("edge-list format requires layer-major node numbering")
    sizes = graph.layer_sizes()
    with open(path, "w") as f:
        f.write(f"nodes={graph.n_nodes} layers={graph.layer_count}\n")
        f.write("layer_sizes=" + " ".join(str(s) for s in sizes) + "\n")
        for src, dst in graph.edges:
            f.write(f"{src} {dst}\n")


def load_edge_list(path) -> LayeredGraph:
    with open(path) as f:
        lines = [line.strip() for line in f if line.strip()]
    if not lines or not lines[0].startswith("nodes="):
        raise GraphError(f"{path}: missing 'nodes=<N> layers=<K>' header")
    try:
        head = dict(part.split("=", 1) for part in lines[0].split())
        n_nodes = int(head["nodes"])
        layer_count = int(head["layers"])
    except (ValueError, KeyError) as exc:
        raise GraphError(f"{path}: malformed header {lines[0]!r}") from exc
    if len(lines) < 2 or not lines[1].startswith("layer_sizes="):
        raise GraphError(f"{path}: missing 'layer_sizes=...' header line")
    sizes = [int(tok) for tok in lines[1].split("=", 1)[1].split()]
    if len(sizes) != layer_count or sum(sizes) != n_nodes:
        raise GraphError(f"{path}: layer_sizes {sizes} inconsistent with header {lines[0]!r}")
    node_layers = []
    for layer, size in enumerate(sizes):
        node_layers.extend([layer] * size)
    edges = []
    for line in lines[2:]:
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"{path}: bad edge line {line!r}")
        edges.append((int(parts[0]), int(parts[1])))
    graph = LayeredGraph(tuple(node_layers), tuple(edges), layer_count)
    bad = [v for v in validate(graph) if v.kind == "invalid_node"]
    if bad:
        raise GraphError(f"{path}: {bad[0].message}")
    return graph
