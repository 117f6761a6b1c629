"""
Test suite for the structural-role and diffusion augmentations.
"""
import numpy as np
import pytest
import scipy.linalg
from numpy.testing import assert_allclose, assert_array_equal

from gagsl.augmentation import (
    DiffusionMatrix,
    characteristic_function,
    default_scales,
    diffuse,
    export_augmentations,
    heat_wavelet,
    ppr_diffusion,
    sparsify_topk,
    structural_embedding,
)
from gagsl.checks import power_series_ppr, random_graph
from gagsl.exceptions import ContractViolation
from gagsl.graph import Graph, eigendecompose_sym, load_matrix_csv, normalize
from gagsl.models import DiffusionConfig, WaveletConfig


def graph_from(adjacency) -> Graph:
    adjacency = np.asarray(adjacency, dtype=float)
    return Graph(adjacency=adjacency, features=np.ones((adjacency.shape[0], 1)))


P3 = graph_from([[0, 1, 0], [1, 0, 1], [0, 1, 0]])


def star(leaves: int) -> Graph:
    a = np.zeros((leaves + 1, leaves + 1))
    a[0, 1:] = a[1:, 0] = 1.0
    return graph_from(a)


def cycle(n: int) -> Graph:
    a = np.zeros((n, n))
    for i in range(n):
        a[i, (i + 1) % n] = a[(i + 1) % n, i] = 1.0
    return graph_from(a)


class TestHeatWavelet:
    """Test heat-kernel wavelets."""

    def test_zero_scale_is_delta(self):
        """Test Psi_0(v_i) = delta_i."""
        values, vectors = eigendecompose_sym(normalize(P3).laplacian)
        for i in range(3):
            assert_allclose(heat_wavelet(values, vectors, 0.0, i), np.eye(3)[i], atol=1e-12)

    def test_matches_matrix_exponential(self):
        """Test P3, s=1, node 0 against scipy's expm of -L."""
        laplacian = normalize(P3).laplacian
        values, vectors = eigendecompose_sym(laplacian)
        assert_allclose(heat_wavelet(values, vectors, 1.0, 0), scipy.linalg.expm(-laplacian)[:, 0], atol=1e-10)

    def test_large_scale_on_regular_graph(self):
        """Test that a large scale flattens the wavelet on a regular graph."""
        values, vectors = eigendecompose_sym(normalize(cycle(6)).laplacian)
        psi = heat_wavelet(values, vectors, 200.0, 2)
        assert_allclose(psi, np.full(6, 1 / 6), atol=1e-9)

    def test_out_of_range_node(self):
        """Test that an invalid node index is a contract violation."""
        values, vectors = eigendecompose_sym(normalize(P3).laplacian)
        with pytest.raises(ContractViolation):
            heat_wavelet(values, vectors, 1.0, 3)


class TestCharacteristicFunction:
    """Test the empirical characteristic function."""

    def test_zero_point(self):
        """Test phi(t=0) = (1, 0)."""
        assert characteristic_function(np.array([0.3, -2.0, 5.0]), 0.0) == (1.0, 0.0)

    def test_zero_psi(self):
        """Test that a zero vector gives (1, 0) at any t."""
        re, im = characteristic_function(np.zeros(4), 3.7)
        assert re == 1.0 and im == 0.0

    def test_half_turns(self):
        """Test psi = [pi, -pi], t = 1 gives (-1, 0)."""
        re, im = characteristic_function(np.array([np.pi, -np.pi]), 1.0)
        assert re == pytest.approx(-1.0)
        assert im == pytest.approx(0.0, abs=1e-15)


class TestStructuralEmbedding:
    """Test multi-scale structural role embeddings."""

    def test_shape_and_layout(self):
        """Test N x 2dm shape with t=0 columns equal to (1, 0)."""
        config = WaveletConfig(scales=[0.5, 2.0], sample_points=[0.0, 1.0, 2.0])
        embedding = structural_embedding(P3, config)

        assert embedding.matrix.shape == (3, 12)
        assert embedding.scales == (0.5, 2.0)
        # scale-major: columns 0,1 and 6,7 are (Re, Im) at t=0 of each scale
        assert_allclose(embedding.matrix[:, [0, 6]], 1.0)
        assert_allclose(embedding.matrix[:, [1, 7]], 0.0, atol=1e-15)

    def test_entries_bounded(self):
        """Test that all entries lie in [-1, 1]."""
        embedding = structural_embedding(random_graph(np.random.default_rng(0), 20))
        assert np.all(np.abs(embedding.matrix) <= 1.0 + 1e-12)

    def test_path_endpoints_identical(self):
        """Test that automorphic endpoints of P3 share rows."""
        matrix = structural_embedding(P3).matrix
        assert_allclose(matrix[0], matrix[2], atol=1e-9)

    def test_star_leaves_and_center(self):
        """Test K1,4 leaves identical and the center distinct at s=1, t=1."""
        matrix = structural_embedding(star(4), WaveletConfig(scales=[1.0], sample_points=[1.0])).matrix
        for leaf in range(2, 5):
            assert_allclose(matrix[leaf], matrix[1], atol=1e-9)
        assert np.abs(matrix[0] - matrix[1]).max() > 1e-3

    @pytest.mark.parametrize("seed", range(10))
    def test_permutation_equivariance(self, seed):
        """Test that relabeling nodes permutes embedding rows."""
        rng = np.random.default_rng(seed)
        graph = random_graph(rng, int(rng.integers(5, 31)))
        perm = rng.permutation(graph.node_count)
        permuted = graph_from(graph.adjacency[np.ix_(perm, perm)])

        original = structural_embedding(graph).matrix
        relabeled = structural_embedding(permuted).matrix
        assert_allclose(relabeled, original[perm], atol=1e-9)

    def test_default_scales_use_spectral_gap(self):
        """Test s in {0.5, 2.0} / lambda_2."""
        values = np.array([0.0, 0.25, 1.0])
        assert default_scales(values) == (2.0, 8.0)


class TestPPRDiffusion:
    """Test personalized PageRank diffusion."""

    def test_alpha_one_is_identity(self):
        """Test alpha = 1 yields I."""
        assert_allclose(ppr_diffusion(cycle(5), 1.0).matrix, np.eye(5), atol=1e-15)

    def test_single_edge(self):
        """Test the hand-inverted 2x2 case at alpha = 0.5."""
        diffusion = ppr_diffusion(graph_from([[0, 1], [1, 0]]), 0.5)
        assert_allclose(diffusion.matrix, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]], atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_power_series_oracle(self, seed):
        """Test the dense solve against the truncated power series."""
        rng = np.random.default_rng(seed)
        graph = random_graph(rng, 50 if seed == 0 else int(rng.integers(5, 50)))
        assert_allclose(ppr_diffusion(graph, 0.15).matrix, power_series_ppr(graph.adjacency, 0.15), atol=1e-8)

    @pytest.mark.parametrize("graph", [cycle(7), graph_from(np.ones((5, 5)) - np.eye(5))])
    def test_regular_rows_sum_to_one(self, graph):
        """Test that diffusion rows sum to 1 on regular graphs."""
        assert_allclose(ppr_diffusion(graph, 0.2).matrix.sum(axis=1), np.ones(graph.node_count), atol=1e-12)

    def test_invalid_alpha(self):
        """Test that alpha outside (0, 1] is a contract violation."""
        with pytest.raises(ContractViolation):
            ppr_diffusion(P3, 0.0)


class TestSparsifyTopk:
    """Test top-k sparsification of the diffusion matrix."""

    def test_keeps_largest_and_self(self):
        """Test row [0.5 (self), 0.3, 0.2, 0.05] with k = 2 keeps 0.3, 0.2 and self."""
        m = np.array([
            [0.5, 0.3, 0.2, 0.05],
            [0.3, 0.5, 0.1, 0.25],
            [0.2, 0.1, 0.5, 0.15],
            [0.05, 0.25, 0.15, 0.5],
        ])
        sparse = sparsify_topk(DiffusionMatrix(matrix=m, alpha=0.15), 2).matrix
        assert_array_equal(sparse[0], [0.5, 0.3, 0.2, 0.0])

    def test_saturation_unchanged(self):
        """Test that k >= N-1 leaves a symmetric matrix unchanged."""
        m = ppr_diffusion(cycle(5), 0.15).matrix
        assert_array_equal(sparsify_topk(DiffusionMatrix(matrix=m, alpha=0.15), 4).matrix, np.maximum(m, m.T))

    def test_ties_keep_lower_column(self):
        """Test deterministic tie-breaking at the k-th entry."""
        m = np.array([[1.0, 0.2, 0.2, 0.2], [0.2, 1.0, 0.0, 0.0], [0.2, 0.0, 1.0, 0.0], [0.2, 0.0, 0.0, 1.0]])
        sparse = sparsify_topk(DiffusionMatrix(matrix=m, alpha=0.15), 1).matrix
        # row 0 keeps column 1; columns 2 and 3 come back through symmetrization only
        assert sparse[0, 1] == 0.2
        assert_array_equal(sparse, sparse.T)

    def test_never_increases_entries(self):
        """Test that sparsification only removes weight."""
        m = ppr_diffusion(random_graph(np.random.default_rng(3), 25), 0.15).matrix
        sparse = sparsify_topk(DiffusionMatrix(matrix=m, alpha=0.15), 5).matrix
        assert np.all(sparse <= np.maximum(m, m.T) + 1e-15)
        assert_array_equal(sparse, sparse.T)

    def test_diffuse_respects_config(self):
        """Test that diffuse sparsifies only when asked."""
        graph = random_graph(np.random.default_rng(4), 20)
        assert diffuse(graph, DiffusionConfig()).top_k is None
        assert diffuse(graph, DiffusionConfig(sparsify=True, top_k=3)).top_k == 3


class TestExport:
    """Test CSV export of the augmentations."""

    def test_export_round_trip(self, tmp_path):
        """Test that exported matrices reload exactly."""
        embedding = structural_embedding(P3)
        diffusion = ppr_diffusion(P3, 0.15)
        paths = export_augmentations(tmp_path, embedding, diffusion)

        assert [p.name for p in paths] == ["structural_embedding.csv", "diffusion.csv"]
        assert_array_equal(load_matrix_csv(paths[1]), diffusion.matrix)
