"""Encoder channels against brute-force oracles and hand-derived values."""

import math

import numpy as np
import pytest

from atomgnn.encoders import (ColumnStats, ElementTable, EncodingInvalid,
                              chemical_descriptors, compute_encodings,
                              edge_topological_encodings, encode_dataset,
                              laplacian_pe, node_topological_encodings,
                              standardize, validate_encodings,
                              ELEMENT_PROPERTY_COLUMNS)
from atomgnn.errors import ValidationError
from atomgnn.graphs import AtomGraph, permute

import oracles
from conftest import make_encodable_graph, make_random_graph


def simple_graph(n, edges, z=None):
    x = np.ones((n, 1)) if z is None else np.asarray(z, dtype=float)[:, None]
    return AtomGraph(node_features=x, edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2))


TRIANGLE = simple_graph(3, [[0, 1], [0, 2], [1, 2]])
PATH3 = simple_graph(3, [[0, 1], [1, 2]])
SINGLE = simple_graph(1, [])
STAR4 = simple_graph(5, [[0, 1], [0, 2], [0, 3], [0, 4]])
SINGLE_EDGE = simple_graph(2, [[0, 1]])


class TestElementTable:
    def test_complete_and_finite(self):
        table = ElementTable.load_default()
        np.testing.assert_array_equal(table.atomic_numbers, np.arange(1, 87))
        assert table.properties.shape == (86, len(ELEMENT_PROPERTY_COLUMNS))
        assert np.isfinite(table.properties).all()

    def test_hydrogen_row_field_exact(self):
        table = ElementTable.load_default()
        out = chemical_descriptors([1, 1])
        np.testing.assert_array_equal(out[0], table.row(1))
        np.testing.assert_array_equal(out[0], out[1])

    def test_all_carbon_rows_identical(self):
        out = chemical_descriptors([6] * 5)
        assert (out == out[0]).all()

    def test_out_of_range_rejected(self):
        with pytest.raises(ValidationError, match="120"):
            chemical_descriptors([6, 120])


class TestNodeEncodings:
    def test_triangle(self):
        cols = node_topological_encodings(TRIANGLE)
        np.testing.assert_allclose(cols[:, 0], 2.0)          # degree
        np.testing.assert_allclose(cols[:, 2], 0.0)          # betweenness
        np.testing.assert_allclose(cols[:, 5], 1.0)          # clustering
        np.testing.assert_allclose(cols[:, 8], 1.0)          # eccentricity

    def test_path3_betweenness(self):
        cols = node_topological_encodings(PATH3)
        np.testing.assert_allclose(cols[:, 2], [0.0, 1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(cols[1, 0], 2.0)

    def test_single_node(self):
        cols = node_topological_encodings(SINGLE)
        degree, closeness, btw, eig, pr, clus, core, harm, ecc = cols[0]
        assert degree == 0 and clus == 0 and ecc == 0
        assert pr == pytest.approx(1.0)

    def test_disconnected_flagged(self):
        g = simple_graph(4, [[0, 1], [2, 3]])
        with pytest.raises(EncodingInvalid, match="disconnected"):
            node_topological_encodings(g)

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_brute_force_oracles(self, seed):
        g_rng = np.random.default_rng(seed)
        n = int(g_rng.integers(2, 9))
        edges = oracles.random_connected_graph(g_rng, n)
        g = simple_graph(n, edges)
        cols = node_topological_encodings(g)

        dist, _ = oracles.shortest_paths_enumerated(n, edges)
        deg = np.array([sum(1 for e in edges if u in e) for u in range(n)], dtype=float)
        np.testing.assert_allclose(cols[:, 0], deg, atol=1e-9)
        np.testing.assert_allclose(cols[:, 1], oracles.closeness_from_distances(dist), atol=1e-9)
        np.testing.assert_allclose(cols[:, 2], oracles.betweenness_by_enumeration(n, edges), atol=1e-9)
        np.testing.assert_allclose(cols[:, 3], oracles.eigenvector_centrality_dense(n, edges), atol=1e-9)
        np.testing.assert_allclose(cols[:, 4], oracles.pagerank_linear_solve(n, edges), atol=1e-9)
        np.testing.assert_allclose(cols[:, 5], oracles.clustering_by_triples(n, edges), atol=1e-9)
        np.testing.assert_allclose(cols[:, 6], oracles.core_numbers_by_subsets(n, edges), atol=1e-9)
        np.testing.assert_allclose(cols[:, 7], oracles.harmonic_from_distances(dist), atol=1e-9)
        np.testing.assert_allclose(cols[:, 8], dist.max(axis=1).astype(float), atol=1e-9)

    def test_permutation_equivariance_exact(self, rng):
        g = make_random_graph(rng, n=7)
        perm = rng.permutation(7)
        direct = node_topological_encodings(permute(g, perm))
        moved = node_topological_encodings(g)
        inverse = np.empty(7, dtype=int)
        inverse[perm] = np.arange(7)
        np.testing.assert_array_equal(direct, moved[inverse])


class TestEdgeEncodings:
    def test_triangle_edge_values(self):
        cols = edge_topological_encodings(TRIANGLE)
        np.testing.assert_allclose(cols[:, 1], 1.0 / 3.0)
        np.testing.assert_allclose(cols[:, 2], 1.0 / math.log(2.0))
        np.testing.assert_allclose(cols[:, 3], 4.0)

    def test_single_edge(self):
        cols = edge_topological_encodings(SINGLE_EDGE)
        assert cols[0, 1] == 0.0
        assert cols[0, 3] == 1.0
        # the lone edge carries the only shortest path: 1 / (N(N-1)/2) = 1
        assert cols[0, 0] == pytest.approx(1.0)

    def test_star_spokes_have_no_common_neighbors(self):
        cols = edge_topological_encodings(STAR4)
        np.testing.assert_allclose(cols[:, 1], 0.0)
        np.testing.assert_allclose(cols[:, 2], 0.0)

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_brute_force_oracles(self, seed):
        g_rng = np.random.default_rng(seed + 1000)
        n = int(g_rng.integers(2, 9))
        edges = oracles.random_connected_graph(g_rng, n)
        g = simple_graph(n, edges)
        cols = edge_topological_encodings(g)
        np.testing.assert_allclose(cols[:, 0],
                                   oracles.edge_betweenness_by_enumeration(n, edges), atol=1e-9)
        np.testing.assert_allclose(cols[:, 1:], oracles.jaccard_adamic_preferential(n, edges),
                                   atol=1e-9)

    def test_permutation_equivariance(self, rng):
        g = make_random_graph(rng, n=6)
        perm = rng.permutation(6)
        permuted = permute(g, perm)
        cols_orig = edge_topological_encodings(g)
        cols_perm = edge_topological_encodings(permuted)
        # map each original edge to its row in the permuted edge list
        perm_edges = {tuple(e): i for i, e in enumerate(permuted.edges.tolist())}
        for row, (u, v) in enumerate(g.edges):
            a, b = sorted((perm[u], perm[v]))
            np.testing.assert_array_equal(cols_orig[row], cols_perm[perm_edges[(a, b)]])


class TestLaplacianPE:
    def test_path3_first_eigenvector(self):
        cols = laplacian_pe(PATH3, 1)
        expected = np.array([1.0, 0.0, -1.0]) / math.sqrt(2.0)
        np.testing.assert_allclose(cols[:, 0], expected, atol=1e-9)

    def test_columns_orthogonal_to_ones(self, rng):
        g = make_encodable_graph(rng, lpe_dim=3, n=8)
        cols = laplacian_pe(g, 3)
        np.testing.assert_allclose(cols.T @ np.ones(8), 0.0, atol=1e-8)
        np.testing.assert_allclose((cols ** 2).sum(axis=0), 1.0, atol=1e-10)

    def test_too_small_graph_flagged(self):
        with pytest.raises(EncodingInvalid):
            laplacian_pe(SINGLE_EDGE, 2)

    def test_disconnected_flagged(self):
        g = simple_graph(4, [[0, 1], [2, 3]])
        with pytest.raises(EncodingInvalid, match="disconnected"):
            laplacian_pe(g, 1)

    def test_near_degenerate_window_flagged(self):
        with pytest.raises(EncodingInvalid, match="degenerate"):
            laplacian_pe(TRIANGLE, 1)  # spectrum {0, 3, 3}

    def test_eigenpair_residuals(self, rng):
        from atomgnn.encoders import laplacian_matrix
        g = make_encodable_graph(rng, lpe_dim=3, n=8)
        lap = laplacian_matrix(g)
        cols = laplacian_pe(g, 3)
        for j in range(3):
            v = cols[:, j]
            lam = v @ lap @ v
            assert np.linalg.norm(lap @ v - lam * v) <= 1e-8 * max(1.0, np.linalg.norm(lap))

    def test_deterministic_bits(self, rng):
        g = make_encodable_graph(rng, n=7)
        a = laplacian_pe(g, 2)
        b = laplacian_pe(g, 2)
        assert np.array_equal(a, b)

    def test_permutation_equivariance_up_to_sign(self, rng):
        for seed in range(10):
            g_rng = np.random.default_rng(seed + 500)
            g = make_random_graph(g_rng, n=8)
            try:
                cols = laplacian_pe(g, 2)
            except EncodingInvalid:
                continue
            perm = g_rng.permutation(8)
            cols_perm = laplacian_pe(permute(g, perm), 2)
            inverse = np.empty(8, dtype=int)
            inverse[perm] = np.arange(8)
            aligned = cols_perm[perm]
            for j in range(2):
                direct = aligned[:, j]
                sign = 1.0 if np.abs(direct + cols[:, j]).max() > np.abs(direct - cols[:, j]).max() else -1.0
                np.testing.assert_allclose(direct, sign * cols[:, j] * 1.0, atol=1e-8)


class TestStandardize:
    def test_train_column(self):
        out, stats = standardize(np.array([[1.0], [2.0], [3.0]]))
        assert stats.mean[0] == pytest.approx(2.0)
        # population convention: std of (1,2,3) is sqrt(2/3)
        assert stats.std[0] == pytest.approx(math.sqrt(2.0 / 3.0))
        np.testing.assert_allclose(out[:, 0], [-out[2, 0], 0.0, out[2, 0]])

    def test_constant_column_clamped(self):
        out, _ = standardize(np.full((3, 1), 5.0))
        np.testing.assert_array_equal(out, 0.0)

    def test_round_trip_with_train_stats(self, rng):
        train = rng.normal(size=(20, 4)) * 3 + 1
        _, stats = standardize(train)
        test = rng.normal(size=(7, 4))
        scaled, _ = standardize(test, stats)
        np.testing.assert_allclose(stats.invert(scaled), test, atol=1e-12)

    def test_train_split_moments(self, rng):
        out, _ = standardize(rng.normal(size=(50, 3)) * 7 + 2)
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-9)


class TestValidateAndPipeline:
    def test_finite_bundle_kept(self, rng):
        g = make_encodable_graph(rng, n=6)
        bundle = compute_encodings(g, 2)
        assert bundle.valid and validate_encodings(bundle)

    def test_disconnected_discarded(self):
        g = simple_graph(4, [[0, 1], [2, 3]])
        bundle = compute_encodings(g, 1)
        assert not bundle.valid
        assert "disconnected" in bundle.reason

    def test_nan_injection_discarded_with_reason(self, rng):
        g = make_encodable_graph(rng, n=6)
        bundle = compute_encodings(g, 2)
        bundle.edge_topo[0, 0] = np.nan
        assert not validate_encodings(bundle)
        assert "edge" in bundle.reason

    def test_encode_dataset_standardizes_train_split(self, rng):
        graphs = [make_encodable_graph(rng, n=int(rng.integers(5, 9))) for _ in range(12)]
        encoded = encode_dataset(graphs, 2, train_indices=range(8))
        kept_train = [i for i in range(8) if encoded.bundles[i] is not None]
        stacked = np.concatenate([encoded.bundles[i].node_topo for i in kept_train])
        np.testing.assert_allclose(stacked.mean(axis=0), 0.0, atol=1e-9)
        # constant columns are clamped to zero rather than unit variance
        moving = stacked.std(axis=0) > 1e-6
        np.testing.assert_allclose(stacked.std(axis=0)[moving], 1.0, atol=1e-9)

    def test_encode_dataset_reports_discards(self, rng):
        good = make_encodable_graph(rng, n=6)
        bad = simple_graph(4, [[0, 1], [2, 3]])
        encoded = encode_dataset([good, bad], 2)
        assert encoded.bundles[1] is None
        assert encoded.discarded[0][0] == 1
