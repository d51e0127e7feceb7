"""Clustering, path length, random-graph baseline, and the composite score."""

import math

import numpy as np
import pytest

from oracles import (
    brute_clustering,
    brute_er_baseline,
    brute_path_stats,
    brute_transitivity,
    random_graph,
)
from swnet.graph import LayeredGraph, UndirectedView, from_architecture
from swnet.arch import ArchitectureSpec, LayerDecl
from swnet.metrics import (
    BaselineConfig,
    MetricError,
    characteristic_path_length,
    clustering_coefficient,
    er_baseline,
    path_stats,
    small_worldness,
)


def complete_graph(n):
    return UndirectedView.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def ring_lattice(n, k):
    """Each node joined to its k nearest neighbors (k/2 each side)."""
    edges = set()
    for i in range(n):
        for d in range(1, k // 2 + 1):
            edges.add(tuple(sorted((i, (i + d) % n))))
    return UndirectedView.from_edges(n, edges)


def ws_rewire(n, k, p, seed):
    """Plain Watts-Strogatz rewiring of a ring lattice, for metric tests."""
    rng = np.random.default_rng(seed)
    edges = set()
    for i in range(n):
        for d in range(1, k // 2 + 1):
            edges.add(tuple(sorted((i, (i + d) % n))))
    for edge in sorted(edges):
        if rng.random() >= p:
            continue
        a, _ = edge
        candidates = [w for w in range(n) if w != a and tuple(sorted((a, w))) not in edges]
        if not candidates:
            continue
        edges.remove(edge)
        edges.add(tuple(sorted((a, candidates[int(rng.integers(len(candidates)))]))))
    return UndirectedView.from_edges(n, edges)


class TestClustering:
    def test_complete_k4_is_one(self):
        assert clustering_coefficient(complete_graph(4)) == 1.0

    def test_star_is_zero(self):
        star = UndirectedView.from_edges(5, [(0, i) for i in range(1, 5)])
        assert clustering_coefficient(star) == 0.0

    def test_ring_lattice_closed_form(self):
        # brute-force triangle enumeration agrees with 3(k-2)/(4(k-1))
        view = ring_lattice(10, 4)
        value = clustering_coefficient(view)
        closed_form = 3 * (4 - 2) / (4 * (4 - 1))
        assert value == pytest.approx(0.5, abs=1e-15)
        assert value == pytest.approx(closed_form, abs=1e-15)
        edges = [(v, u) for v in range(view.n) for u in view.neighbors[v] if v < u]
        assert brute_clustering(10, edges) == pytest.approx(value, abs=1e-15)

    def test_degree_below_two_contributes_zero(self):
        # path 0-1-2 plus isolated node 3: locals are (0, 1?, 0, 0) -> all zero
        view = UndirectedView.from_edges(4, [(0, 1), (1, 2)])
        assert clustering_coefficient(view) == 0.0

    def test_transitivity_variant(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            n, edges = random_graph(rng, n_max=20)
            mine = clustering_coefficient(UndirectedView.from_edges(n, edges), variant="transitivity")
            assert mine == pytest.approx(brute_transitivity(n, edges), abs=1e-12)


class TestPathLength:
    def test_complete_graph_is_one(self):
        for n in (3, 5, 9):
            assert characteristic_path_length(complete_graph(n)) == 1.0

    def test_path_graph_three_nodes(self):
        view = UndirectedView.from_edges(3, [(0, 1), (1, 2)])
        assert characteristic_path_length(view) == pytest.approx(4 / 3, abs=1e-15)

    def test_cycle_eight(self):
        edges = [(i, (i + 1) % 8) for i in range(8)]
        view = UndirectedView.from_edges(8, edges)
        assert characteristic_path_length(view) == pytest.approx(16 / 7, abs=1e-15)

    def test_edgeless_graph_errors(self):
        with pytest.raises(MetricError):
            path_stats(UndirectedView.from_edges(3, []))

    def test_reachable_fraction(self):
        # two disjoint K2s: only 2 of 12 ordered pairs reachable... 4 of 12
        view = UndirectedView.from_edges(4, [(0, 1), (2, 3)])
        l_val, frac = path_stats(view)
        assert l_val == 1.0
        assert frac == pytest.approx(4 / 12)


class TestOracleEquivalence:
    def test_randomized_against_brute_force(self):
        rng = np.random.default_rng(2024)
        for _ in range(150):
            n, edges = random_graph(rng)
            view = UndirectedView.from_edges(n, edges)
            assert clustering_coefficient(view) == pytest.approx(
                brute_clustering(n, edges), abs=1e-12
            )
            l_mine, frac_mine = path_stats(view)
            l_brute, frac_brute = brute_path_stats(n, edges)
            assert l_mine == pytest.approx(l_brute, abs=1e-12)
            assert frac_mine == pytest.approx(frac_brute, abs=1e-12)

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(77)
        for _ in range(30):
            n, edges = random_graph(rng, n_max=25)
            perm = rng.permutation(n)
            relabeled = [(int(perm[a]), int(perm[b])) for a, b in edges]
            v1 = UndirectedView.from_edges(n, edges)
            v2 = UndirectedView.from_edges(n, relabeled)
            assert clustering_coefficient(v1) == pytest.approx(clustering_coefficient(v2), abs=1e-12)
            assert characteristic_path_length(v1) == pytest.approx(
                characteristic_path_length(v2), abs=1e-12
            )

    def test_adding_edge_never_increases_l_when_connected(self):
        rng = np.random.default_rng(31)
        checked = 0
        while checked < 30:
            n, edges = random_graph(rng, n_max=15)
            view = UndirectedView.from_edges(n, edges)
            _, frac = (None, 0.0)
            try:
                _, frac = path_stats(view)
            except MetricError:
                continue
            if frac < 1.0:  # stay on connected graphs: new pairs can raise the mean
                continue
            missing = [
                (i, j)
                for i in range(n)
                for j in range(i + 1, n)
                if j not in view.neighbors[i]
            ]
            if not missing:
                continue
            extra = missing[int(rng.integers(len(missing)))]
            bigger = UndirectedView.from_edges(n, list(edges) + [extra])
            assert characteristic_path_length(bigger) <= characteristic_path_length(view) + 1e-12
            checked += 1


class TestErBaseline:
    def test_k4_is_forced(self):
        config = BaselineConfig("monte_carlo", sample_count=10, seed=3)
        c_rand, l_rand = er_baseline(4, 6, config)
        assert c_rand == 1.0
        assert l_rand == 1.0

    def test_matches_brute_force_sampler_with_same_seed(self):
        config = BaselineConfig("monte_carlo", sample_count=200, seed=7)
        mine = er_baseline(20, 40, config)
        brute = brute_er_baseline(20, 40, 200, 7)
        assert mine[0] == pytest.approx(brute[0], abs=1e-12)
        assert mine[1] == pytest.approx(brute[1], abs=1e-12)

    def test_same_seed_bit_identical(self):
        config = BaselineConfig("monte_carlo", sample_count=25, seed=11)
        assert er_baseline(15, 30, config) == er_baseline(15, 30, config)

    def test_analytic_formulas(self):
        config = BaselineConfig("analytic", seed=0)
        c_rand, l_rand = er_baseline(1000, 5000, config)
        assert c_rand == pytest.approx(0.01, abs=1e-15)
        assert l_rand == pytest.approx(math.log(1000) / math.log(10), abs=1e-15)

    def test_analytic_low_degree_errors(self):
        with pytest.raises(MetricError):
            er_baseline(100, 50, BaselineConfig("analytic", seed=0))

    def test_too_many_edges_errors(self):
        with pytest.raises(MetricError):
            er_baseline(4, 7, BaselineConfig("monte_carlo", sample_count=5, seed=0))


class TestSmallWorldness:
    def test_self_consistent_analytic_graph_scores_near_one(self):
        # a graph whose C and L sit exactly at the analytic baseline values
        # has gamma = lambda = 1 by construction
        config = BaselineConfig("analytic", seed=0)
        c_rand, l_rand = er_baseline(64, 256, config)
        from swnet.metrics import combine_with_baseline

        metrics = combine_with_baseline(c_rand, l_rand, 1.0, c_rand, l_rand)
        assert metrics.s_g == pytest.approx(1.0, abs=1e-15)
        assert metrics.gamma_g == 1.0
        assert metrics.lambda_g == 1.0

    def test_ws_ring_intermediate_p_is_small_world(self):
        view = ws_rewire(100, 4, p=0.1, seed=3)
        config = BaselineConfig("monte_carlo", sample_count=30, seed=9)
        metrics = small_worldness(view, config)
        assert metrics.s_g > 1.0
        assert metrics.is_small_world

    def test_layered_cnn_graph_at_p0_scores_zero(self):
        layers = tuple(LayerDecl("conv", 8, 3, 1) for _ in range(14))
        spec = ArchitectureSpec(layers=layers, input_shape=(3, 32, 32))
        graph = from_architecture(spec)
        config = BaselineConfig("monte_carlo", sample_count=20, seed=1)
        metrics = small_worldness(graph, config)
        assert metrics.c_g == 0.0  # no triangles between consecutive layers
        assert metrics.s_g == 0.0
        assert not metrics.is_small_world

    def test_zero_c_rand_reported_not_substituted(self):
        # 2 nodes, 1 edge: every baseline sample is a single K2, C_rand = 0
        view = UndirectedView.from_edges(2, [(0, 1)])
        config = BaselineConfig("monte_carlo", sample_count=5, seed=0)
        with pytest.raises(MetricError):
            small_worldness(view, config)

    def test_metrics_serialization(self):
        config = BaselineConfig("monte_carlo", sample_count=20, seed=4)
        view = ws_rewire(60, 4, p=0.15, seed=8)
        metrics = small_worldness(view, config)
        doc = metrics.to_dict()
        assert set(doc) == {
            "C", "L", "C_rand", "L_rand", "gamma", "lambda", "S",
            "reachable_fraction", "is_small_world",
        }
        assert doc["gamma"] == pytest.approx(doc["C"] / doc["C_rand"])
        assert doc["S"] == pytest.approx(doc["gamma"] / doc["lambda"])
