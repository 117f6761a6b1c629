"""
Global augmentations of the input graph.

- Structural-role features: heat-kernel wavelets summarized by their empirical
  characteristic function at several scales.
- Structure: personalized PageRank diffusion, optionally sparsified to the
  top-k affinities per node.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from gagsl.config import (
    DEGREE_FLOOR,
    SPECTRAL_GAP_FLOOR,
    WAVELET_SAMPLE_POINTS,
    WAVELET_SCALE_FACTORS,
    WAVELET_T_MAX,
)
from gagsl.exceptions import ContractViolation, NumericError
from gagsl.graph import Graph, eigendecompose_sym, normalize, save_matrix_csv
from gagsl.models import DiffusionConfig, WaveletConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StructuralEmbedding:
    """X-hat: N x (2*d*m), scale-major, (Re, Im) interleaved per sample point."""
    matrix: np.ndarray
    scales: Tuple[float, ...]
    sample_points: Tuple[float, ...]


@dataclass(frozen=True)
class DiffusionMatrix:
    """A-hat with its restart probability and optional per-row top-k."""
    matrix: np.ndarray
    alpha: float
    top_k: Optional[int] = None


# ==============================================================================
# Wavelets
# ==============================================================================

def heat_wavelet(eigenvalues: np.ndarray, eigenvectors: np.ndarray, s: float, node_i: int) -> np.ndarray:
    """Psi_s(v_i) = U diag(exp(-lambda * s)) U^T delta_i."""
    n = eigenvectors.shape[0]
    if not 0 <= node_i < n:
        raise ContractViolation(f"node index {node_i} out of range [0, {n})")
    if s < 0:
        raise ContractViolation("scale s must be nonnegative")
    return eigenvectors @ (np.exp(-eigenvalues * s) * eigenvectors[node_i, :])


def characteristic_function(psi: np.ndarray, t: float) -> Tuple[float, float]:
    """Empirical characteristic function of the wavelet coefficients, e^{-i psi t} convention."""
    phase = np.asarray(psi, dtype=np.float64) * t
    return float(np.mean(np.cos(phase))), float(-np.mean(np.sin(phase)))


def default_scales(eigenvalues: np.ndarray) -> Tuple[float, ...]:
    """Scales WAVELET_SCALE_FACTORS / lambda_2, lambda_2 the smallest nonzero eigenvalue."""
    nonzero = eigenvalues[eigenvalues > SPECTRAL_GAP_FLOOR]
    gap = float(nonzero.min()) if nonzero.size else SPECTRAL_GAP_FLOOR
    gap = max(gap, SPECTRAL_GAP_FLOOR)
    return tuple(factor / gap for factor in WAVELET_SCALE_FACTORS)


def resolve_wavelet_config(config: Optional[WaveletConfig], eigenvalues: np.ndarray) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    """Concrete (scales, sample points) for a possibly partial config."""
    config = config or WaveletConfig()
    scales = tuple(config.scales) if config.scales else default_scales(eigenvalues)
    if config.sample_points:
        points = tuple(config.sample_points)
    else:
        d = config.n_sample_points or WAVELET_SAMPLE_POINTS
        t_max = config.t_max if config.t_max is not None else WAVELET_T_MAX
        points = tuple(np.linspace(0.0, t_max, d).tolist())
    return scales, points


def structural_embedding(graph: Graph, config: Optional[WaveletConfig] = None) -> StructuralEmbedding:
    """
    Multi-scale structural role embedding of every node.

    Row i concatenates, for each scale s, the pairs (Re, Im) of the empirical
    characteristic function of Psi_s(v_i) at each sample point.
    """
    eigenvalues, eigenvectors = eigendecompose_sym(normalize(graph).laplacian)
    scales, points = resolve_wavelet_config(config, eigenvalues)

    blocks = []
    for s in scales:
        # column i is Psi_s(v_i); the kernel is symmetric
        kernel = (eigenvectors * np.exp(-eigenvalues * s)) @ eigenvectors.T
        block = np.empty((graph.node_count, 2 * len(points)))
        for j, t in enumerate(points):
            phase = kernel * t
            block[:, 2 * j] = np.mean(np.cos(phase), axis=0)
            block[:, 2 * j + 1] = -np.mean(np.sin(phase), axis=0)
        blocks.append(block)

    matrix = np.concatenate(blocks, axis=1)
    logger.debug("Structural embedding: scales=%s, d=%d, shape=%s", scales, len(points), matrix.shape)
    return StructuralEmbedding(matrix=matrix, scales=scales, sample_points=points)


# ==============================================================================
# Diffusion
# ==============================================================================

def transition_operator(adjacency: np.ndarray) -> np.ndarray:
    """D^{-1/2} A D^{-1/2} without self-loops, degree floored."""
    d_inv_sqrt = 1.0 / np.sqrt(np.maximum(adjacency.sum(axis=1), DEGREE_FLOOR))
    return d_inv_sqrt[:, None] * adjacency * d_inv_sqrt[None, :]


def ppr_diffusion(graph: Graph, alpha: float) -> DiffusionMatrix:
    """A-hat = alpha (I - (1 - alpha) T)^{-1} by a direct dense solve."""
    if not 0.0 < alpha <= 1.0:
        raise ContractViolation(f"alpha must be in (0, 1], got {alpha}")
    n = graph.node_count
    system = np.eye(n) - (1.0 - alpha) * transition_operator(graph.adjacency)
    try:
        solution = scipy.linalg.solve(system, np.eye(n), assume_a="sym")
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise NumericError(f"PPR system is singular: {e}", {"alpha": alpha, "n": n})
    matrix = alpha * (solution + solution.T) / 2.0

    residual = float(np.max(np.abs(system @ (matrix / alpha) - np.eye(n)), initial=0.0))
    if residual > 1e-8:
        logger.warning("PPR residual %.3e above 1e-8", residual)
    return DiffusionMatrix(matrix=matrix, alpha=alpha)


def sparsify_topk(diffusion: DiffusionMatrix, k: int) -> DiffusionMatrix:
    """
    Keep the k largest off-diagonal entries of each row plus the diagonal.

    Ties at the k-th entry keep the lower column index. Kept weights are not
    renormalized; the result is symmetrized by elementwise max.
    """
    if k < 1:
        raise ContractViolation("k must be at least 1")
    m = diffusion.matrix
    n = m.shape[0]
    kept = np.zeros_like(m)
    if k >= n - 1:
        kept = m.copy()
    else:
        off = m.copy()
        np.fill_diagonal(off, -np.inf)
        order = np.argsort(-off, axis=1, kind="stable")[:, :k]
        rows = np.repeat(np.arange(n), k)
        kept[rows, order.ravel()] = m[rows, order.ravel()]
        kept[np.arange(n), np.arange(n)] = np.diag(m)
    return DiffusionMatrix(matrix=np.maximum(kept, kept.T), alpha=diffusion.alpha, top_k=k)


def diffuse(graph: Graph, config: Optional[DiffusionConfig] = None) -> DiffusionMatrix:
    """PPR diffusion followed by top-k sparsification when the config asks for it."""
    config = config or DiffusionConfig()
    diffusion = ppr_diffusion(graph, config.alpha)
    if config.sparsify:
        diffusion = sparsify_topk(diffusion, config.top_k)
    return diffusion


def export_augmentations(out_dir, embedding: StructuralEmbedding, diffusion: DiffusionMatrix) -> Sequence[Path]:
    """Write X-hat and A-hat as CSV for inspection."""
    out_dir = Path(out_dir)
    return [
        save_matrix_csv(out_dir / "structural_embedding.csv", embedding.matrix),
        save_matrix_csv(out_dir / "diffusion.csv", diffusion.matrix),
    ]
