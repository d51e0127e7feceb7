"""Small-world metrics: clustering coefficient, characteristic path length,
Erdos-Renyi baseline, and the small-worldness score.

All quantities are computed on the undirected skeleton of the layered graph,
following the Watts-Strogatz convention. A topology counts as small-world
when its score s_g exceeds 1: clustering well above, and path length
comparable to, a random graph with the same number of vertices and edges.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .graph import LayeredGraph, UndirectedView


class MetricError(ValueError):
    """Raised when a metric is undefined for the given graph or config."""


@dataclass(frozen=True)
class BaselineConfig:
    """How to obtain C_rand and L_rand for the equivalent random graph.

    monte_carlo samples `sample_count` uniform graphs with exactly the same
    vertex and edge counts; analytic uses C = <k>/n and L = ln n / ln <k>.
    """

    method: str = "monte_carlo"
    sample_count: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("monte_carlo", "analytic"):
            raise MetricError(f"unknown baseline method {self.method!r}")
        if self.sample_count < 1:
            raise MetricError("sample_count must be >= 1")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "BaselineConfig":
        """Parse the CLI form: 'mc:<n>' or 'analytic'."""
        if text == "analytic":
            return cls(method="analytic", seed=seed)
        if text.startswith("mc:"):
            return cls(method="monte_carlo", sample_count=int(text[3:]), seed=seed)
        if text == "mc":
            return cls(method="monte_carlo", seed=seed)
        raise MetricError(f"unknown baseline spec {text!r}; expected 'mc:<n>' or 'analytic'")

    def describe(self) -> str:
        if self.method == "analytic":
            return "analytic"
        return f"mc:{self.sample_count}"


@dataclass(frozen=True)
class SmallWorldMetrics:
    """The full metric tuple for one topology.

    gamma_g = c_g / c_rand, lambda_g = l_g / l_rand, s_g = gamma_g / lambda_g.
    reachable_fraction is the share of ordered node pairs with a finite
    distance; l_g averages over those pairs only.
    """

    c_g: float
    l_g: float
    c_rand: float
    l_rand: float
    gamma_g: float
    lambda_g: float
    s_g: float
    reachable_fraction: float

    @property
    def is_small_world(self) -> bool:
        return self.s_g > 1.0

    def to_dict(self) -> dict:
        return {
            "C": self.c_g,
            "L": self.l_g,
            "C_rand": self.c_rand,
            "L_rand": self.l_rand,
            "gamma": self.gamma_g,
            "lambda": self.lambda_g,
            "S": self.s_g,
            "reachable_fraction": self.reachable_fraction,
            "is_small_world": self.is_small_world,
        }

    def to_json(self, **extra) -> str:
        doc = self.to_dict()
        doc.update(extra)
        return json.dumps(doc, indent=2)


def _as_view(graph) -> UndirectedView:
    if isinstance(graph, UndirectedView):
        return graph
    if isinstance(graph, LayeredGraph):
        return graph.undirected_view()
    raise TypeError(f"expected LayeredGraph or UndirectedView, got {type(graph)!r}")


def clustering_coefficient(graph, variant: str = "average_local") -> float:
    """Density of connections between neighbors.

    "average_local" (default) is the Watts-Strogatz mean of per-node local
    coefficients, with degree < 2 nodes contributing 0. "transitivity" is
    the global triangles-over-triads ratio, offered for sensitivity checks.
    """
    view = _as_view(graph)
    if view.n < 1:
        raise MetricError("clustering coefficient needs at least one node")
    triangles = 0.0 if variant == "transitivity" else None
    triads = 0.0
    total_local = 0.0
    for v in range(view.n):
        nbrs = view.neighbors[v]
        d = len(nbrs)
        if d < 2:
            continue
        bits_v = view.bits[v]
        links = 0
        for u in nbrs:
            links += (view.bits[u] & bits_v).bit_count()
        links //= 2  # each neighbor-neighbor edge counted from both ends
        pairs = d * (d - 1) / 2
        if variant == "transitivity":
            triangles += links
            triads += pairs
        else:
            total_local += links / pairs
    if variant == "transitivity":
        if triads == 0:
            return 0.0
        # `triangles` here already sums per-node triangle counts, i.e. 3T.
        return triangles / triads
    if variant != "average_local":
        raise MetricError(f"unknown clustering variant {variant!r}")
    return total_local / view.n


def _distance_matrix(view: UndirectedView) -> np.ndarray:
    rows, cols = [], []
    for v in range(view.n):
        for u in view.neighbors[v]:
            rows.append(v)
            cols.append(u)
    data = np.ones(len(rows), dtype=np.int8)
    adj = csr_matrix((data, (rows, cols)), shape=(view.n, view.n))
    return shortest_path(adj, method="D", directed=False, unweighted=True)


def path_stats(graph) -> tuple[float, float]:
    """(characteristic path length, reachable-pair fraction).

    The mean runs over ordered node pairs with a finite distance; pairs in
    different components are skipped rather than mapped to infinity.
    """
    view = _as_view(graph)
    if view.n < 2:
        raise MetricError("path length needs at least two nodes")
    dist = _distance_matrix(view)
    off = ~np.eye(view.n, dtype=bool)
    finite = np.isfinite(dist) & off
    n_reachable = int(finite.sum())
    if n_reachable == 0:
        raise MetricError("no reachable node pair (edgeless graph)")
    l_g = float(dist[finite].sum() / n_reachable)
    fraction = n_reachable / (view.n * (view.n - 1))
    return l_g, fraction


def characteristic_path_length(graph) -> float:
    """Mean shortest-path distance over reachable node pairs."""
    return path_stats(graph)[0]


def sample_er_edge_sets(node_count: int, edge_count: int, sample_count: int, seed: int):
    """The Monte-Carlo sampling protocol: one uniform draw of `edge_count`
    distinct pairs per sample from a single seeded stream, decoded against
    the upper-triangle pair list. Yields (src_array, dst_array) per sample."""
    max_edges = node_count * (node_count - 1) // 2
    if edge_count > max_edges:
        raise MetricError(f"edge_count {edge_count} exceeds max {max_edges} for {node_count} nodes")
    iu, ju = np.triu_indices(node_count, k=1)
    rng = np.random.default_rng(seed)
    for _ in range(sample_count):
        idx = rng.choice(max_edges, size=edge_count, replace=False)
        yield iu[idx], ju[idx]


def er_baseline(
    node_count: int,
    edge_count: int,
    config: BaselineConfig,
    clustering: str = "average_local",
) -> tuple[float, float]:
    """C_rand and L_rand of the Erdos-Renyi equivalent graph (same vertex
    and edge counts)."""
    if node_count < 2:
        raise MetricError("baseline needs at least two nodes")
    max_edges = node_count * (node_count - 1) // 2
    if edge_count > max_edges:
        raise MetricError(f"edge_count {edge_count} exceeds max {max_edges} for {node_count} nodes")
    if config.method == "analytic":
        avg_k = 2.0 * edge_count / node_count
        if avg_k <= 1.0:
            raise MetricError(f"analytic baseline undefined for mean degree {avg_k:.3g} <= 1")
        return avg_k / node_count, math.log(node_count) / math.log(avg_k)
    c_sum = 0.0
    l_sum = 0.0
    l_count = 0
    for src, dst in sample_er_edge_sets(node_count, edge_count, config.sample_count, config.seed):
        view = UndirectedView.from_edges(node_count, zip(src.tolist(), dst.tolist()))
        c_sum += clustering_coefficient(view, variant=clustering)
        try:
            l_val, _ = path_stats(view)
        except MetricError:
            continue  # sample with no reachable pair contributes no L
        l_sum += l_val
        l_count += 1
    if l_count == 0:
        raise MetricError("no baseline sample had a reachable pair; cannot estimate L_rand")
    return c_sum / config.sample_count, l_sum / l_count


def combine_with_baseline(
    c_g: float,
    l_g: float,
    reachable_fraction: float,
    c_rand: float,
    l_rand: float,
) -> SmallWorldMetrics:
    """Assemble the metric tuple from graph-side and baseline-side values."""
    if c_rand == 0.0:
        raise MetricError("c_rand is zero: gamma (and the score) are undefined")
    if l_rand == 0.0:
        raise MetricError("l_rand is zero: lambda (and the score) are undefined")
    gamma = c_g / c_rand
    lam = l_g / l_rand
    if lam == 0.0:
        raise MetricError("lambda is zero: the score is undefined")
    return SmallWorldMetrics(
        c_g=c_g,
        l_g=l_g,
        c_rand=c_rand,
        l_rand=l_rand,
        gamma_g=gamma,
        lambda_g=lam,
        s_g=gamma / lam,
        reachable_fraction=reachable_fraction,
    )


def small_worldness(
    graph,
    config: BaselineConfig,
    clustering: str = "average_local",
) -> SmallWorldMetrics:
    """Full metric tuple for a graph; raises MetricError when undefined."""
    view = _as_view(graph)
    if view.n < 2:
        raise MetricError("small-worldness needs at least two nodes")
    if view.n_edges < 1:
        raise MetricError("small-worldness needs at least one edge")
    c_g = clustering_coefficient(view, variant=clustering)
    l_g, fraction = path_stats(view)
    c_rand, l_rand = er_baseline(view.n, view.n_edges, config, clustering=clustering)
    return combine_with_baseline(c_g, l_g, fraction, c_rand, l_rand)
