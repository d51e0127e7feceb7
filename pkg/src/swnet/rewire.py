"""Edge rewiring, the probability sweep, and max-score topology selection.

Rewiring visits every edge of the layered graph once in canonical order.
Each edge keeps its source endpoint and, with probability p, has its
destination resampled uniformly from the eligible non-neighbors, so the edge
count (and with it the trainable parameter count of the realized network)
never changes. Sweeping p over [0, 1] traces the transition from the regular
layered chain to a randomized one; the topology with the highest
small-worldness score is the one selected for realization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import LayeredGraph, validate
from .metrics import (
    BaselineConfig,
    MetricError,
    SmallWorldMetrics,
    clustering_coefficient,
    combine_with_baseline,
    er_baseline,
    path_stats,
)

KEPT = "kept"
REWIRED = "rewired"
KEPT_NO_CANDIDATE = "kept_no_candidate"


class RewireError(ValueError):
    pass


@dataclass(frozen=True)
class RewireConfig:
    """p is the per-edge rewiring probability; seed feeds a deterministic
    stream (an int, or a tuple when derived from a sweep). forward_only
    restricts replacement endpoints to strictly later layers, keeping the
    graph a realizable feed-forward DAG."""

    p: float
    seed: int | tuple[int, ...]
    forward_only: bool = True

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise RewireError(f"rewiring probability must be in [0, 1], got {self.p}")


@dataclass(frozen=True)
class EdgeFate:
    """Provenance of one visited edge: where it pointed and where it ended up."""

    src: int
    original_dst: int
    final_dst: int
    status: str  # KEPT | REWIRED | KEPT_NO_CANDIDATE


@dataclass(frozen=True)
class RewiredTopology:
    graph: LayeredGraph
    fates: tuple[EdgeFate, ...]
    config: RewireConfig

    @property
    def rewired_edges(self) -> list[EdgeFate]:
        return [f for f in self.fates if f.status == REWIRED]

    @property
    def no_candidate_edges(self) -> list[EdgeFate]:
        return [f for f in self.fates if f.status == KEPT_NO_CANDIDATE]


def canonical_edge_order(graph: LayeredGraph) -> list[tuple[int, int]]:
    """Fixed visit order: by (src layer, src id, dst layer, dst id)."""
    layer = graph.node_layers
    return sorted(graph.edges, key=lambda e: (layer[e[0]], e[0], layer[e[1]], e[1]))


def rewire(graph: LayeredGraph, config: RewireConfig) -> RewiredTopology:
    """Visit every edge once; rewire each with probability p.

    A rewired edge keeps its source and moves its destination to a uniformly
    sampled node that is not the source, not already a neighbor of the
    source (in either direction), and, with forward_only, lies in a strictly
    later layer. If no such node exists the edge is kept and recorded as
    KEPT_NO_CANDIDATE. Later visits see earlier replacements, so the result
    never contains self-loops or duplicate edges.
    """
    rng = np.random.default_rng(config.seed)
    layer = graph.node_layers
    n = graph.n_nodes
    und_neighbors = [set() for _ in range(n)]
    for a, b in graph.edges:
        und_neighbors[a].add(b)
        und_neighbors[b].add(a)
    edge_set = set(graph.edges)
    fates = []
    for src, dst in canonical_edge_order(graph):
        if rng.random() >= config.p:
            fates.append(EdgeFate(src, dst, dst, KEPT))
            continue
        blocked = und_neighbors[src]
        if config.forward_only:
            src_layer = layer[src]
            candidates = [w for w in range(n) if layer[w] > src_layer and w not in blocked]
        else:
            candidates = [w for w in range(n) if w != src and w not in blocked]
        if not candidates:
            fates.append(EdgeFate(src, dst, dst, KEPT_NO_CANDIDATE))
            continue
        new_dst = candidates[int(rng.integers(len(candidates)))]
        edge_set.remove((src, dst))
        edge_set.add((src, new_dst))
        und_neighbors[src].remove(dst)
        und_neighbors[dst].remove(src)
        und_neighbors[src].add(new_dst)
        und_neighbors[new_dst].add(src)
        fates.append(EdgeFate(src, dst, new_dst, REWIRED))
    return RewiredTopology(graph.replace_edges(edge_set), tuple(fates), config)


def default_p_grid(points: int = 32) -> tuple[float, ...]:
    """p = 0 plus `points` log-spaced values in [1e-4, 1]."""
    return (0.0,) + tuple(float(p) for p in np.logspace(-4.0, 0.0, points))


@dataclass(frozen=True)
class SweepPoint:
    index: int
    p: float
    topology: RewiredTopology
    metrics: SmallWorldMetrics | None
    error: str | None = None

    @property
    def valid(self) -> bool:
        return self.metrics is not None


@dataclass(frozen=True)
class SweepResult:
    points: tuple[SweepPoint, ...]
    selected: int | None
    baseline: BaselineConfig
    seed: int

    @property
    def selected_point(self) -> SweepPoint:
        if self.selected is None:
            raise RewireError("no sweep point has defined metrics; nothing to select")
        return self.points[self.selected]


def sweep(
    graph: LayeredGraph,
    p_grid,
    seed: int,
    baseline: BaselineConfig,
    replicates: int = 1,
    clustering: str = "average_local",
    forward_only: bool = True,
) -> SweepResult:
    """Rewire at every p in the grid and score each topology.

    Each grid point draws from an independent stream derived from
    (seed, point index, replicate). With replicates > 1 the C and L of the
    replicate topologies are averaged before the ratios are formed, and the
    first replicate stands as the point's topology. C_rand and L_rand are
    computed once: rewiring conserves both the vertex and edge counts, so
    the equivalent random graph is the same at every p.
    """
    p_grid = tuple(float(p) for p in p_grid)
    if not p_grid:
        raise RewireError("p_grid must be non-empty")
    if replicates < 1:
        raise RewireError("replicates must be >= 1")
    baseline_error = None
    try:
        c_rand, l_rand = er_baseline(graph.n_nodes, graph.n_edges, baseline, clustering=clustering)
    except MetricError as exc:
        baseline_error = str(exc)
    points = []
    for i, p in enumerate(p_grid):
        reps = []
        for r in range(replicates):
            stream = (seed, i) if replicates == 1 else (seed, i, r)
            reps.append(rewire(graph, RewireConfig(p=p, seed=stream, forward_only=forward_only)))
        topology = reps[0]
        if baseline_error is not None:
            points.append(SweepPoint(i, p, topology, None, baseline_error))
            continue
        try:
            c_vals, l_vals, fractions = [], [], []
            for rep in reps:
                rep_view = rep.graph.undirected_view()
                c_vals.append(clustering_coefficient(rep_view, variant=clustering))
                l_val, frac = path_stats(rep_view)
                l_vals.append(l_val)
                fractions.append(frac)
            metrics = combine_with_baseline(
                float(np.mean(c_vals)), float(np.mean(l_vals)), float(np.mean(fractions)),
                c_rand, l_rand,
            )
            points.append(SweepPoint(i, p, topology, metrics))
        except MetricError as exc:
            points.append(SweepPoint(i, p, topology, None, str(exc)))
    selected = None
    for point in sorted(points, key=lambda q: (q.p, q.index)):
        if point.valid and (selected is None or point.metrics.s_g > points[selected].metrics.s_g):
            selected = point.index
    return SweepResult(tuple(points), selected, baseline, seed)


def select_swn(result: SweepResult) -> RewiredTopology:
    """Topology at the maximum-score grid point (lowest p wins ties)."""
    return result.selected_point.topology


# ---------------------------------------------------------------------------
# File exports
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("p", "C", "L", "C_rand", "L_rand", "gamma", "lambda", "S", "reachable_fraction", "selected")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_sweep_csv(result: SweepResult, path) -> None:
    """One row per grid point, Fig-5-style: the data behind the C/L/S curves."""
    with open(path, "w") as f:
        f.write(",".join(CSV_COLUMNS) + "\n")
        for point in result.points:
            m = point.metrics
            if m is None:
                fields = [_fmt(point.p)] + ["nan"] * 8
            else:
                fields = [
                    _fmt(point.p), _fmt(m.c_g), _fmt(m.l_g), _fmt(m.c_rand), _fmt(m.l_rand),
                    _fmt(m.gamma_g), _fmt(m.lambda_g), _fmt(m.s_g), _fmt(m.reachable_fraction),
                ]
            fields.append("1" if point.index == result.selected else "0")
            f.write(",".join(fields) + "\n")


def write_provenance(topology: RewiredTopology, path) -> None:
    """Sidecar listing every rewired edge as `src old_dst new_dst`."""
    with open(path, "w") as f:
        for fate in topology.fates:
            if fate.status == REWIRED:
                f.write(f"{fate.src} {fate.original_dst} {fate.final_dst}\n")


def check_topology(topology: RewiredTopology) -> None:
    """Assert the rewired graph is still a well-formed forward DAG."""
    problems = validate(topology.graph)
    if problems:
        raise RewireError("rewired graph is malformed: " + "; ".join(str(p) for p in problems))
