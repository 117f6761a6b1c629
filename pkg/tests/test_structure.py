"""
Test suite for candidate edges, the structure estimators, redefinition and fusion.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from gagsl.augmentation import ppr_diffusion, structural_embedding
from gagsl.autodiff import Tape, Tensor, gradient_check
from gagsl.checks import random_graph
from gagsl.exceptions import ContractViolation
from gagsl.graph import load_matrix_csv
from gagsl.models import EstimatorConfig
from gagsl.structure import (
    CandidateEdgeSet,
    StructureEstimator,
    StructureLearner,
    degree_lift,
    estimator_embed,
    export_structure,
    fuse,
    hop_candidates,
    normalize_candidates,
    pairwise_logits,
    redefine,
    topk_candidates,
)

# path 0-1-2-3 plus an isolated node 4
PATH_WITH_ISOLATE = np.array([
    [0, 1, 0, 0, 0],
    [1, 0, 1, 0, 0],
    [0, 1, 0, 1, 0],
    [0, 0, 1, 0, 0],
    [0, 0, 0, 0, 0],
], dtype=float)


def candidates_from(lists) -> CandidateEdgeSet:
    rows = np.array([i for i, js in enumerate(lists) for _ in js], dtype=np.int64)
    cols = np.array([j for js in lists for j in js], dtype=np.int64)
    return CandidateEdgeSet(rows=rows, cols=cols, node_count=len(lists))


def learner_for(graph, rng, **overrides) -> StructureLearner:
    config = EstimatorConfig(hops=1, top_k=3, hidden_dim=4, mlp_hidden_dim=3, **overrides)
    return StructureLearner(
        graph.adjacency, ppr_diffusion(graph, 0.15).matrix, graph.features,
        structural_embedding(graph).matrix, config, rng,
    )


class TestCandidates:
    """Test candidate edge construction."""

    def test_one_hop(self):
        """Test that h=1 candidates are the neighbors in ascending order."""
        candidates = hop_candidates(PATH_WITH_ISOLATE, 1)
        assert candidates.to_adjacency_lists() == {0: [1], 1: [0, 2], 2: [1, 3], 3: [2], 4: []}
        assert candidates.size == 6

    def test_two_hops(self):
        """Test that h=2 reaches neighbors of neighbors, never the node itself."""
        candidates = hop_candidates(PATH_WITH_ISOLATE, 2)
        assert candidates.neighbors(0) == [1, 2]
        assert candidates.neighbors(1) == [0, 2, 3]
        assert not candidates.mask().diagonal().any()

    def test_invalid_hops(self):
        """Test that h < 1 is a contract violation."""
        with pytest.raises(ContractViolation):
            hop_candidates(PATH_WITH_ISOLATE, 0)

    def test_topk_picks_largest_with_lower_index_ties(self):
        """Test top-k rows of a diffusion matrix."""
        diffusion = np.array([
            [0.9, 0.1, 0.3, 0.3],
            [0.1, 0.9, 0.2, 0.0],
            [0.3, 0.2, 0.9, 0.4],
            [0.3, 0.0, 0.4, 0.9],
        ])
        candidates = topk_candidates(diffusion, 2)
        assert candidates.neighbors(0) == [2, 3]
        assert candidates.neighbors(1) == [2, 0]
        assert candidates.neighbors(3) == [2, 0]

    def test_topk_fallback_and_isolated(self):
        """Test a row with no off-diagonal affinity: 1-hop fallback, empty when isolated."""
        diffusion = np.eye(5)
        candidates = topk_candidates(diffusion, 3, PATH_WITH_ISOLATE)
        assert candidates.neighbors(1) == [0, 2]
        assert candidates.neighbors(4) == []

    def test_mask_matches_pairs(self):
        """Test that the boolean mask marks exactly the candidate pairs."""
        candidates = hop_candidates(PATH_WITH_ISOLATE, 1)
        assert_array_equal(candidates.mask(), PATH_WITH_ISOLATE > 0)


class TestEstimator:
    """Test the GCN embedding and the pair scorer."""

    def test_zero_weights_embed_to_zero(self):
        """Test that a zero GCN weight gives an all-zero embedding."""
        params = {"gcn_weight": Tensor(np.zeros((3, 4)))}
        h = estimator_embed(Tape(), PATH_WITH_ISOLATE, np.ones((5, 3)), params)
        assert_array_equal(h.values, np.zeros((5, 4)))

    def test_view_shape_mismatch(self):
        """Test that a view with disagreeing shapes is a contract violation."""
        params = {"gcn_weight": Tensor(np.zeros((3, 4)))}
        with pytest.raises(ContractViolation):
            estimator_embed(Tape(), PATH_WITH_ISOLATE, np.ones((4, 3)), params)

    def test_one_logit_per_candidate(self):
        """Test that the scorer emits an E x 1 column."""
        rng = np.random.default_rng(0)
        estimator = StructureEstimator(3, 4, 5, rng, view=1)
        candidates = hop_candidates(PATH_WITH_ISOLATE, 1)
        h = estimator_embed(Tape(), PATH_WITH_ISOLATE, rng.standard_normal((5, 3)), estimator.params)
        assert pairwise_logits(Tape(), h, candidates, estimator.params).shape == (6, 1)

    def test_pair_order_matters(self):
        """Test that w_ij uses the concatenation [h_i || h_j] in that order."""
        params = {
            "mlp_w1": Tensor(np.array([[1.0], [0.0]])),
            "mlp_b1": Tensor(np.zeros((1, 1))),
            "mlp_w2": Tensor(np.ones((1, 1))),
            "mlp_b2": Tensor(np.zeros((1, 1))),
        }
        h = Tensor(np.array([[1.0], [3.0]]))
        logits = pairwise_logits(Tape(), h, candidates_from([[1], [0]]), params)
        assert_array_equal(logits.values[:, 0], [1.0, 3.0])


class TestNormalizeCandidates:
    """Test the per-node softmax over candidate logits."""

    def test_single_candidate(self):
        """Test that a lone candidate gets weight 1."""
        s = normalize_candidates(Tape(), Tensor(np.array([[2.7]])), candidates_from([[1], []]))
        assert_array_equal(s.values, [[0.0, 1.0], [0.0, 0.0]])

    def test_equal_logits(self):
        """Test four equal logits give 0.25 each."""
        candidates = candidates_from([[1, 2, 3, 4], [], [], [], []])
        s = normalize_candidates(Tape(), Tensor(np.zeros((4, 1))), candidates)
        assert_allclose(s.values[0], [0.0, 0.25, 0.25, 0.25, 0.25])

    def test_two_logits(self):
        """Test logits (1, 2) give (0.2689, 0.7311)."""
        s = normalize_candidates(Tape(), Tensor(np.array([[1.0], [2.0]])), candidates_from([[1, 2], [], []]))
        assert_allclose(s.values[0, 1:], [0.2689, 0.7311], atol=1e-4)

    def test_rows_sum_to_one_or_zero(self):
        """Test that every row with candidates sums to one and the rest are empty."""
        rng = np.random.default_rng(1)
        candidates = hop_candidates(PATH_WITH_ISOLATE, 2)
        s = normalize_candidates(Tape(), Tensor(rng.standard_normal((candidates.size, 1))), candidates)
        assert_allclose(s.values.sum(axis=1), [1, 1, 1, 1, 0])
        assert np.all(s.values[~candidates.mask()] == 0.0)

    def test_logit_count_mismatch(self):
        """Test that logits must align with the candidate set."""
        with pytest.raises(ContractViolation):
            normalize_candidates(Tape(), Tensor(np.zeros((3, 1))), candidates_from([[1, 2], [], []]))


class TestRedefineAndFuse:
    """Test structure redefinition and average fusion."""

    def test_zero_base_with_similarity(self):
        """Test A = 0, S^1 = [[0,1],[1,0]], gamma1 = 0.5."""
        s1 = np.array([[0.0, 1.0], [1.0, 0.0]])
        redefined = redefine(Tape(), np.zeros((2, 2)), np.zeros((2, 2)), s1, np.zeros((2, 2)), 0.5, 0.5, 1.0)
        assert_allclose(redefined.a_r1.values, [[0.0, 0.5], [0.5, 0.0]])

    def test_degenerate_coefficients_give_a(self):
        """Test gamma1 = gamma2 = 0 and mu = 1 give A_r1 = A_r2 = A."""
        rng = np.random.default_rng(2)
        a = random_graph(rng, 6).adjacency
        redefined = redefine(Tape(), a, rng.random((6, 6)), rng.random((6, 6)), rng.random((6, 6)), 0.0, 0.0, 1.0)
        assert_array_equal(redefined.a_r1.values, a)
        assert_array_equal(redefined.a_r2.values, a)

    def test_asymmetric_similarity_symmetrized(self):
        """Test that one-sided similarities are symmetrized."""
        s1 = np.array([[0.0, 1.0], [0.0, 0.0]])
        redefined = redefine(Tape(), np.zeros((2, 2)), np.zeros((2, 2)), s1, s1, 1.0, 1.0, 0.5)
        assert_allclose(redefined.a_r1.values, [[0.0, 0.5], [0.5, 0.0]])
        assert_allclose(redefined.a_r2.values, redefined.a_r2.values.T)

    def test_similarity_lifted_by_self_loop_degrees(self):
        """Test that S^1 enters A_r1 scaled by sqrt(d~_i d~_j) on the path 0-1-2."""
        a = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
        s1 = np.array([[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [0.0, 1.0, 0.0]])
        assert_allclose(degree_lift(a)[0], [2.0, np.sqrt(6.0), 2.0])
        redefined = redefine(Tape(), a, np.eye(3), s1, np.zeros((3, 3)), 1.0, 0.0, 1.0)
        assert redefined.a_r1.values[0, 1] == pytest.approx(1.0 + 0.75 * np.sqrt(6.0))
        assert_array_equal(redefined.a_r2.values, a)

    def test_normalized_contribution_is_similarity(self):
        """Test D~^{-1/2} (A_r1 - A) D~^{-1/2} = gamma1 sym(S^1)."""
        rng = np.random.default_rng(8)
        a = random_graph(rng, 7).adjacency
        s1 = rng.random((7, 7))
        redefined = redefine(Tape(), a, np.eye(7), s1, np.zeros((7, 7)), 0.4, 0.0, 1.0)
        d_inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1) + 1.0)
        contribution = d_inv_sqrt[:, None] * (redefined.a_r1.values - a) * d_inv_sqrt[None, :]
        assert_allclose(contribution, 0.4 * (s1 + s1.T) / 2, atol=1e-12)

    def test_diffusion_replaces_adjacency_at_zero_mu(self):
        """Test that mu = 0 keeps only the lifted diffusion in A_r2."""
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        a_hat = np.array([[0.6, 0.2], [0.2, 0.6]])
        redefined = redefine(Tape(), a, a_hat, np.zeros((2, 2)), np.zeros((2, 2)), 0.0, 0.0, 0.0)
        assert_allclose(redefined.a_r2.values, 2.0 * a_hat)

    def test_coefficient_out_of_range(self):
        """Test that mu outside [0, 1] is a contract violation."""
        z = np.zeros((2, 2))
        with pytest.raises(ContractViolation):
            redefine(Tape(), z, z, z, z, 0.1, 0.1, 1.5)

    def test_fuse_is_mean_and_idempotent(self):
        """Test A* = (A_r1 + A_r2) / 2, and A_r1 = A_r2 gives A_r1."""
        a = np.array([[0.0, 2.0], [2.0, 0.0]])
        b = np.array([[0.0, 4.0], [4.0, 0.0]])
        assert_allclose(fuse(Tape(), a, b).values, [[0.0, 3.0], [3.0, 0.0]])
        assert_array_equal(fuse(Tape(), a, a).values, a)


class TestStructureLearner:
    """Test the full estimator path."""

    def test_learned_structure_symmetric_nonnegative(self):
        """Test that A_r1, A_r2 and A* are symmetric and nonnegative."""
        rng = np.random.default_rng(3)
        learner = learner_for(random_graph(rng, 12), rng, gamma1=0.5, gamma2=0.5, mu=0.5)
        redefined, fused = learner.forward(Tape(training=False))
        for m in (redefined.a_r1.values, redefined.a_r2.values, fused.values):
            assert_allclose(m, m.T, atol=1e-9)
            assert np.all(m >= 0)

    def test_parameters_prefixed_per_estimator(self):
        """Test that both estimators own separate parameters."""
        rng = np.random.default_rng(4)
        params = learner_for(random_graph(rng, 8), rng).params
        assert {"est1.gcn_weight", "est2.gcn_weight"} <= set(params)
        assert params["est1.gcn_weight"] is not params["est2.gcn_weight"]

    def test_gradient_matches_finite_differences(self):
        """Test the Theta path candidates -> softmax -> redefinition -> fusion."""
        rng = np.random.default_rng(5)
        graph = random_graph(rng, 9)
        learner = learner_for(graph, rng, gamma1=0.5, gamma2=0.5, mu=0.7)
        weights = rng.standard_normal((9, 9))

        def loss(tape):
            _, fused = learner.forward(tape)
            return tape.reduce_sum(tape.elementwise_mul(tape.exp(tape.scale(fused.matrix, 0.5)), weights))

        assert gradient_check(loss, learner.params, max_coords=12, rng=rng) <= 1e-4

    def test_zero_gamma_gives_zero_theta_gradient(self):
        """Test that gamma1 = gamma2 = 0 cuts the estimators out exactly."""
        rng = np.random.default_rng(6)
        learner = learner_for(random_graph(rng, 10), rng, gamma1=0.0, gamma2=0.0, mu=0.3)
        tape = Tape()
        _, fused = learner.forward(tape)
        tape.backward(tape.reduce_sum(tape.elementwise_mul(fused.matrix, rng.standard_normal((10, 10)))))
        for name, p in learner.params.items():
            assert np.all(p.grad == 0.0), name

    def test_export(self, tmp_path):
        """Test that A* is written as a reloadable CSV."""
        rng = np.random.default_rng(7)
        _, fused = learner_for(random_graph(rng, 6), rng).forward(Tape(training=False))
        path = export_structure(tmp_path / "structure.csv", fused)
        assert_allclose(load_matrix_csv(path), fused.values)
