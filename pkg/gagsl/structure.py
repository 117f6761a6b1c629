"""
Structure estimators, structure redefinition and fusion.

Two independent estimators score candidate edges of the feature-augmented
view (A, X-hat) and the structure-augmented view (A-hat, X). Their softmax
weights S^1, S^2 redefine the structures A_r1, A_r2, whose average is the
learned structure A*. Redefinition works on the normalized scale and is
lifted back to raw adjacency weights by the self-loop degrees of A.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from gagsl.autodiff import Tape, Tensor, glorot_init, zeros_param
from gagsl.exceptions import ContractViolation
from gagsl.graph import save_matrix_csv, sym_normalize_dense
from gagsl.models import EstimatorConfig

logger = logging.getLogger(__name__)

FEATURE_VIEW = 1
STRUCTURE_VIEW = 2


# ==============================================================================
# Candidate edges
# ==============================================================================

@dataclass(frozen=True)
class CandidateEdgeSet:
    """Candidate pairs (rows[e], cols[e]) grouped by source node, in per-node order."""
    rows: np.ndarray
    cols: np.ndarray
    node_count: int

    @property
    def size(self) -> int:
        return int(self.rows.size)

    def neighbors(self, i: int) -> List[int]:
        return self.cols[self.rows == i].tolist()

    def to_adjacency_lists(self) -> Dict[int, List[int]]:
        return {i: self.neighbors(i) for i in range(self.node_count)}

    def mask(self) -> np.ndarray:
        out = np.zeros((self.node_count, self.node_count), dtype=bool)
        out[self.rows, self.cols] = True
        return out


def _from_lists(lists: List[List[int]]) -> CandidateEdgeSet:
    rows = np.array([i for i, js in enumerate(lists) for _ in js], dtype=np.int64)
    cols = np.array([j for js in lists for j in js], dtype=np.int64)
    return CandidateEdgeSet(rows=rows, cols=cols, node_count=len(lists))


def hop_candidates(adjacency: np.ndarray, hops: int) -> CandidateEdgeSet:
    """View 1 candidates: every node within `hops` hops, ascending index, self excluded."""
    if hops < 1:
        raise ContractViolation("hops must be at least 1")
    step = (np.asarray(adjacency) > 0).astype(np.int64)
    n = step.shape[0]
    reach = np.eye(n, dtype=np.int64)
    for _ in range(hops):
        reach = np.minimum(reach + reach @ step, 1)
    np.fill_diagonal(reach, 0)
    return _from_lists([np.flatnonzero(reach[i]).tolist() for i in range(n)])


def topk_candidates(diffusion: np.ndarray, k: int, adjacency: Optional[np.ndarray] = None) -> CandidateEdgeSet:
    """
    View 2 candidates: the k largest off-diagonal diffusion entries per row.

    Ties keep the lower column index. A row without positive off-diagonal
    affinity falls back to its 1-hop neighbors in `adjacency`.
    """
    if k < 1:
        raise ContractViolation("k must be at least 1")
    m = np.asarray(diffusion, dtype=np.float64)
    n = m.shape[0]
    off = m.copy()
    np.fill_diagonal(off, -np.inf)
    order = np.argsort(-off, axis=1, kind="stable")
    lists = []
    for i in range(n):
        picked = [int(j) for j in order[i, :k] if off[i, j] > 0]
        if not picked and adjacency is not None:
            picked = np.flatnonzero(np.asarray(adjacency)[i] > 0).tolist()
        lists.append(picked)
    return _from_lists(lists)


# ==============================================================================
# Estimator
# ==============================================================================

class StructureEstimator:
    """One GCN layer followed by a two-layer pair-scoring MLP."""

    def __init__(self, in_dim: int, hidden_dim: int, mlp_hidden_dim: int, rng: np.random.Generator, view: int):
        self.view = view
        self.params: Dict[str, Tensor] = {
            "gcn_weight": glorot_init(in_dim, hidden_dim, rng, name=f"est{view}.gcn"),
            "mlp_w1": glorot_init(2 * hidden_dim, mlp_hidden_dim, rng, name=f"est{view}.w1"),
            "mlp_b1": zeros_param(1, mlp_hidden_dim, name=f"est{view}.b1"),
            "mlp_w2": glorot_init(mlp_hidden_dim, 1, rng, name=f"est{view}.w2"),
            "mlp_b2": zeros_param(1, 1, name=f"est{view}.b2"),
        }


def propagate(view_adjacency: np.ndarray, view_features: np.ndarray) -> np.ndarray:
    """norm(A_view) X_view, the constant part of the estimator GCN."""
    if view_adjacency.shape[0] != view_features.shape[0]:
        raise ContractViolation(
            f"view adjacency {view_adjacency.shape} and features {view_features.shape} disagree"
        )
    return sym_normalize_dense(view_adjacency) @ view_features


def estimator_embed(tape: Tape, view_adjacency: np.ndarray, view_features: np.ndarray, params: Dict[str, Tensor],
                    propagated: Optional[np.ndarray] = None) -> Tensor:
    """H = ReLU(norm(A_view) X_view W)."""
    if propagated is None:
        propagated = propagate(view_adjacency, view_features)
    return tape.relu(tape.matmul(propagated, params["gcn_weight"]))


def pairwise_logits(tape: Tape, h: Tensor, candidates: CandidateEdgeSet, params: Dict[str, Tensor]) -> Tensor:
    """w_ij = MLP([h_i || h_j]) for every candidate pair, as an E x 1 column."""
    pair = tape.concat_cols(tape.gather_rows(h, candidates.rows), tape.gather_rows(h, candidates.cols))
    hidden = tape.relu(tape.add_row(tape.matmul(pair, params["mlp_w1"]), params["mlp_b1"]))
    return tape.add_row(tape.matmul(hidden, params["mlp_w2"]), params["mlp_b2"])


def normalize_candidates(tape: Tape, logits: Tensor, candidates: CandidateEdgeSet) -> Tensor:
    """S_ij = softmax of w_ij over node i's candidates; zero elsewhere."""
    if logits.shape != (candidates.size, 1):
        raise ContractViolation(f"expected {candidates.size} logits, got {logits.shape}")
    n = candidates.node_count
    weights = tape.segment_softmax(logits, candidates.rows, n)
    return tape.scatter_pairs(weights, candidates.rows, candidates.cols, (n, n))


# ==============================================================================
# Redefinition and fusion
# ==============================================================================

@dataclass
class RedefinedStructure:
    """A_r1 = sym(A + g1 L(S^1)), A_r2 = sym(mu A + (1 - mu) L(A-hat) + g2 L(S^2)), L the degree lift."""
    a_r1: Tensor
    a_r2: Tensor
    gamma1: float
    gamma2: float
    mu: float


@dataclass
class FusedStructure:
    """A* = (A_r1 + A_r2) / 2."""
    matrix: Tensor

    @property
    def values(self) -> np.ndarray:
        return self.matrix.values


def degree_lift(adjacency: np.ndarray) -> np.ndarray:
    """
    sqrt(d~_i d~_j) with d~ the self-loop degrees of A.

    Multiplying a matrix on the normalized scale (softmax rows, PPR rows)
    elementwise by the lift maps it onto the raw scale of A, so that
    D~^{-1/2} (A + g L(S)) D~^{-1/2} = D~^{-1/2} A D~^{-1/2} + g S.
    """
    d = np.asarray(adjacency, dtype=np.float64).sum(axis=1) + 1.0
    root = np.sqrt(d)
    return root[:, None] * root[None, :]


def redefine(tape: Tape, a: np.ndarray, a_hat: np.ndarray, s1, s2, gamma1: float, gamma2: float, mu: float) -> RedefinedStructure:
    """
    Blend the base structures with the learned similarity matrices.

    The blend is taken on the normalized scale, where every row of S and
    A-hat carries unit mass like a row of the normalized adjacency, and
    lifted back to the raw scale of A. gamma = 0 and mu = 1 return A exactly.
    """
    for name, value in (("gamma1", gamma1), ("gamma2", gamma2), ("mu", mu)):
        if not 0.0 <= value <= 1.0:
            raise ContractViolation(f"{name} must be in [0, 1], got {value}")
    lift = degree_lift(a)
    a_r1 = tape.symmetrize(tape.add(a, tape.scale(tape.elementwise_mul(s1, lift), gamma1)))
    base = tape.add(tape.scale(a, mu), tape.scale(np.asarray(a_hat) * lift, 1.0 - mu))
    a_r2 = tape.symmetrize(tape.add(base, tape.scale(tape.elementwise_mul(s2, lift), gamma2)))
    return RedefinedStructure(a_r1=a_r1, a_r2=a_r2, gamma1=gamma1, gamma2=gamma2, mu=mu)


def fuse(tape: Tape, a_r1, a_r2) -> FusedStructure:
    """Elementwise mean of the two redefined structures."""
    return FusedStructure(matrix=tape.scale(tape.add(a_r1, a_r2), 0.5))


class StructureLearner:
    """
    The two estimators with their fixed views and candidate sets.

    Args:
        adjacency: original structure A
        diffusion: global structure augmentation A-hat
        features: node features X
        role_features: global feature augmentation X-hat
        config: estimator settings
        rng: initialization generator
    """

    def __init__(self, adjacency: np.ndarray, diffusion: np.ndarray, features: np.ndarray,
                 role_features: np.ndarray, config: EstimatorConfig, rng: np.random.Generator):
        self.adjacency = np.asarray(adjacency, dtype=np.float64)
        self.diffusion = np.asarray(diffusion, dtype=np.float64)
        self.config = config
        self.candidates1 = hop_candidates(self.adjacency, config.hops)
        self.candidates2 = topk_candidates(self.diffusion, config.top_k, self.adjacency)
        self.propagated1 = propagate(self.adjacency, role_features)
        self.propagated2 = propagate(self.diffusion, features)
        self.estimator1 = StructureEstimator(role_features.shape[1], config.hidden_dim, config.mlp_hidden_dim, rng, FEATURE_VIEW)
        self.estimator2 = StructureEstimator(features.shape[1], config.hidden_dim, config.mlp_hidden_dim, rng, STRUCTURE_VIEW)
        logger.debug("Candidates: view1=%d pairs, view2=%d pairs", self.candidates1.size, self.candidates2.size)

    @property
    def params(self) -> Dict[str, Tensor]:
        """Theta: both estimators, never weight-shared."""
        merged = {f"est1.{k}": v for k, v in self.estimator1.params.items()}
        merged.update({f"est2.{k}": v for k, v in self.estimator2.params.items()})
        return merged

    def similarity(self, tape: Tape, view: int) -> Tensor:
        if view == FEATURE_VIEW:
            estimator, candidates, propagated = self.estimator1, self.candidates1, self.propagated1
        else:
            estimator, candidates, propagated = self.estimator2, self.candidates2, self.propagated2
        h = estimator_embed(tape, None, None, estimator.params, propagated=propagated)
        return normalize_candidates(tape, pairwise_logits(tape, h, candidates, estimator.params), candidates)

    def forward(self, tape: Tape):
        """Return (RedefinedStructure, FusedStructure) on the given tape."""
        s1 = self.similarity(tape, FEATURE_VIEW)
        s2 = self.similarity(tape, STRUCTURE_VIEW)
        redefined = redefine(tape, self.adjacency, self.diffusion, s1, s2,
                             self.config.gamma1, self.config.gamma2, self.config.mu)
        return redefined, fuse(tape, redefined.a_r1, redefined.a_r2)


def export_structure(path, fused: FusedStructure) -> Path:
    """Write A* as CSV."""
    return save_matrix_csv(path, fused.values)
