"""
Robustness harness: random poisoning attacks, evaluation metrics, community
statistics of (learned) structures and the stochastic block model testbed.
"""
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.special import softmax
from sklearn.metrics import f1_score, roc_auc_score

from gagsl.config import HISTOGRAM_BINS, TRAIN_FRACTION, VAL_FRACTION
from gagsl.exceptions import AttackError, ContractViolation
from gagsl.graph import Dataset, Graph, block_labels, edge_count, stratified_split
from gagsl.models import AttackSpec, MetricsReport, MetricSummary, TrialMetrics
from gagsl.streams import ATTACK, make_rng

logger = logging.getLogger(__name__)


# ==============================================================================
# Attacks
# ==============================================================================

def _budget(ratio: float, edges: int) -> int:
    # floor(ratio * |E|), tolerant to products like 0.29 * 100 = 28.999...
    return int(math.floor(ratio * edges + 1e-9))


def attack_edges(graph: Graph, kind: str, ratio: float, rng: np.random.Generator) -> Graph:
    """
    Randomly inject or remove floor(ratio * |E|) undirected edges.

    Args:
        graph: clean graph
        kind: "edge_add" (uniform over non-edges) or "edge_delete" (uniform over edges)
        ratio: fraction of the current edge count
        rng: perturbation generator

    Returns:
        Perturbed graph with the same features
    """
    if ratio < 0 or (kind == "edge_delete" and ratio > 1):
        raise ContractViolation(f"invalid {kind} ratio {ratio}")
    adjacency = np.array(graph.adjacency, copy=True)
    n = graph.node_count
    budget = _budget(ratio, edge_count(graph))
    if budget == 0:
        return graph
    upper_i, upper_j = np.triu_indices(n, k=1)
    present = adjacency[upper_i, upper_j] > 0

    if kind == "edge_add":
        pool = np.flatnonzero(~present)
        if budget > pool.size:
            raise AttackError(f"cannot add {budget} edges, only {pool.size} non-edges available")
        chosen = rng.choice(pool, size=budget, replace=False)
        adjacency[upper_i[chosen], upper_j[chosen]] = 1.0
    elif kind == "edge_delete":
        pool = np.flatnonzero(present)
        chosen = rng.choice(pool, size=budget, replace=False)
        adjacency[upper_i[chosen], upper_j[chosen]] = 0.0
    else:
        raise ContractViolation(f"unknown edge attack '{kind}'")

    upper = np.triu(adjacency, k=1)
    return graph.with_adjacency(upper + upper.T)


def reference_amplitude(features: np.ndarray) -> float:
    """r: mean over nodes of each node's maximum feature value."""
    return float(np.mean(np.max(features, axis=1)))


def attack_features(graph: Graph, lam: float, rng: np.random.Generator) -> Graph:
    """Add lambda * r * eps, eps ~ N(0, 1) i.i.d., to every feature entry."""
    if lam < 0:
        raise ContractViolation(f"lambda must be nonnegative, got {lam}")
    if lam == 0:
        return graph
    r = reference_amplitude(graph.features)
    noise = rng.standard_normal(graph.features.shape)
    return graph.with_features(graph.features + lam * r * noise)


def apply_attack(dataset: Dataset, spec: AttackSpec, seed: int) -> Dataset:
    """Poison a dataset before any training state exists."""
    attack_seed = spec.seed if spec.seed is not None else seed
    rng = make_rng(attack_seed, ATTACK, spec.kind, repr(spec.rate))
    if spec.kind == "feature_noise":
        graph = attack_features(dataset.graph, spec.rate, rng)
    else:
        graph = attack_edges(dataset.graph, spec.kind, spec.rate, rng)
    logger.info("Applied %s: |E| %d -> %d", spec.label, edge_count(dataset.graph), edge_count(graph))
    return dataset.with_graph(graph)


# ==============================================================================
# Metrics
# ==============================================================================

def softmax_scores(logits: np.ndarray) -> np.ndarray:
    return softmax(logits, axis=1)


def f1_scores(predictions: np.ndarray, labels: np.ndarray, class_count: int) -> Tuple[float, float, np.ndarray]:
    """
    Macro and micro F1 of single-label predictions.

    Returns:
        Tuple of (f1_macro, f1_micro, per-class F1); a class without true or
        predicted members scores 0
    """
    classes = list(range(class_count))
    per_class = f1_score(labels, predictions, labels=classes, average=None, zero_division=0)
    micro = f1_score(labels, predictions, labels=classes, average="micro", zero_division=0)
    return float(per_class.mean()), float(micro), per_class


def auc_ovr_macro(probabilities: np.ndarray, labels: np.ndarray, class_count: int) -> float:
    """One-vs-rest AUC averaged over classes with both positives and negatives."""
    terms = []
    for c in range(class_count):
        positives = labels == c
        if positives.all() or not positives.any():
            continue
        terms.append(roc_auc_score(positives, probabilities[:, c]))
    if not terms:
        logger.warning("AUC undefined: masked labels contain a single class, reporting 0.5")
        return 0.5
    return float(np.mean(terms))


def evaluate(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray, class_count: Optional[int] = None,
             seed: int = 0) -> TrialMetrics:
    """
    AUC, F1-macro and F1-micro over the masked nodes.

    Args:
        logits: one row of class scores per node
        labels: class per node
        mask: nodes to evaluate
        class_count: number of classes, defaults to the logit width
        seed: trial seed recorded with the metrics

    Returns:
        TrialMetrics of the masked nodes
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractViolation("evaluate: mask is empty")
    logits = np.asarray(logits, dtype=np.float64)
    class_count = class_count or logits.shape[1]
    y = np.asarray(labels)[mask]
    scores = logits[mask]
    absent = sorted(set(range(class_count)) - set(np.unique(y).tolist()))
    if absent:
        logger.warning("Classes %s absent from the mask: F1 terms are 0, AUC terms skipped", absent)
    predictions = np.argmax(scores, axis=1)
    f1_macro, f1_micro, _ = f1_scores(predictions, y, class_count)
    auc = auc_ovr_macro(softmax_scores(scores), y, class_count)
    return TrialMetrics(seed=seed, auc=auc, f1_macro=f1_macro, f1_micro=f1_micro)


def aggregate(model: str, trials: Sequence[TrialMetrics], attack: Optional[AttackSpec] = None) -> MetricsReport:
    """Mean and population std over trials."""
    if not trials:
        raise ContractViolation("aggregate: no trials")

    def summary(key: str) -> MetricSummary:
        values = np.array([getattr(t, key) for t in trials])
        return MetricSummary(mean=float(values.mean()), std=float(values.std()))

    return MetricsReport(
        model=model,
        auc=summary("auc"),
        f1_macro=summary("f1_macro"),
        f1_micro=summary("f1_micro"),
        trials=list(trials),
        trial_seeds=[t.seed for t in trials],
        attack=attack,
    )


# ==============================================================================
# Community statistics
# ==============================================================================

class WeightHistogram(BaseModel):
    """Normalized histograms of structure weights on intra/inter community pairs."""
    bin_edges: List[float]
    intra: List[float]
    inter: List[float]
    intra_count: int
    inter_count: int
    clipped_count: int = Field(..., description="Weights above 1 counted in the last bin")
    intra_empty: bool = False
    inter_empty: bool = False


def community_prob_matrix(adjacency: np.ndarray, communities: np.ndarray, weighted: bool = True) -> np.ndarray:
    """
    Empirical edge probability between every pair of communities.

    Entry (a, b) is the edge weight (or edge count) between a and b divided by
    the number of possible pairs; within a community that is n_a(n_a - 1)/2.
    """
    adjacency = np.asarray(adjacency, dtype=np.float64)
    values = adjacency if weighted else (adjacency > 0).astype(np.float64)
    communities = np.asarray(communities)
    ids = np.unique(communities)
    out = np.zeros((ids.size, ids.size))
    for a_idx, a in enumerate(ids):
        in_a = communities == a
        for b_idx, b in enumerate(ids):
            in_b = communities == b
            block = values[np.ix_(in_a, in_b)]
            if a == b:
                n_a = int(in_a.sum())
                pairs = n_a * (n_a - 1) / 2.0
                mass = (block.sum() - np.trace(block)) / 2.0
            else:
                pairs = float(in_a.sum() * in_b.sum())
                mass = block.sum()
            out[a_idx, b_idx] = mass / pairs if pairs else 0.0
    return out


def _pair_split(matrix: np.ndarray, communities: np.ndarray, mask: Optional[np.ndarray] = None):
    n = matrix.shape[0]
    i, j = np.triu_indices(n, k=1)
    keep = matrix[i, j] > 0 if mask is None else np.asarray(mask)[i, j] | np.asarray(mask)[j, i]
    i, j = i[keep], j[keep]
    same = communities[i] == communities[j]
    weights = matrix[i, j]
    return weights[same], weights[~same]


def weight_histogram(structure: np.ndarray, communities: np.ndarray, bins: int = HISTOGRAM_BINS) -> WeightHistogram:
    """Frequency-normalized histograms of nonzero weights, split by same/different community."""
    structure = np.asarray(structure, dtype=np.float64)
    if np.any(structure < 0):
        raise ContractViolation("weight_histogram: structure must be nonnegative")
    intra, inter = _pair_split(structure, np.asarray(communities))
    clipped = int(np.sum(intra > 1) + np.sum(inter > 1))
    if clipped:
        logger.warning("%d weights above 1 counted in the last histogram bin", clipped)
    edges = np.linspace(0.0, 1.0, bins + 1)

    def normalized(values: np.ndarray, group: str) -> List[float]:
        if values.size == 0:
            logger.warning("No %s-community weights to histogram", group)
            return [0.0] * bins
        counts, _ = np.histogram(np.clip(values, 0.0, 1.0), bins=edges)
        return (counts / values.size).tolist()

    return WeightHistogram(
        bin_edges=edges.tolist(),
        intra=normalized(intra, "intra"),
        inter=normalized(inter, "inter"),
        intra_count=int(intra.size),
        inter_count=int(inter.size),
        clipped_count=clipped,
        intra_empty=intra.size == 0,
        inter_empty=inter.size == 0,
    )


def intra_inter_mean_weight(structure: np.ndarray, communities: np.ndarray,
                            candidate_mask: Optional[np.ndarray] = None) -> Tuple[float, float]:
    """Mean weight on intra- and inter-community pairs (candidate pairs, or nonzero entries)."""
    intra, inter = _pair_split(np.asarray(structure, dtype=np.float64), np.asarray(communities), candidate_mask)
    return (float(intra.mean()) if intra.size else 0.0, float(inter.mean()) if inter.size else 0.0)


# ==============================================================================
# Synthetic data
# ==============================================================================

def sbm_generate(
    n: int,
    n_blocks: int,
    p_in: float,
    p_out: float,
    feat_dim: int,
    feat_shift: float,
    rng: np.random.Generator,
    train_fraction: float = TRAIN_FRACTION,
    val_fraction: float = VAL_FRACTION,
) -> Dataset:
    """
    Stochastic block model dataset with class-informative Gaussian features.

    Blocks are as equal as possible; class c has mean feat_shift on coordinate
    c mod feat_dim plus unit Gaussian noise; the split is stratified.
    """
    if not 0.0 <= p_out <= p_in <= 1.0:
        raise ContractViolation(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    sizes = [len(block) for block in np.array_split(np.arange(n), n_blocks)]
    if min(sizes) < 2:
        raise ContractViolation(f"block sizes must be at least 2, got {sizes}")
    labels = block_labels(sizes)

    probability = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    draws = rng.random((n, n)) < probability
    upper = np.triu(draws, k=1).astype(np.float64)
    adjacency = upper + upper.T

    means = np.zeros((n_blocks, feat_dim))
    means[np.arange(n_blocks), np.arange(n_blocks) % feat_dim] = feat_shift
    features = means[labels] + rng.standard_normal((n, feat_dim))

    train, val, test = stratified_split(labels, rng, train_fraction=train_fraction, val_fraction=val_fraction)
    return Dataset(
        graph=Graph(adjacency=adjacency, features=features),
        labels=labels,
        train_mask=train,
        val_mask=val,
        test_mask=test,
        class_count=n_blocks,
        name=f"sbm{n}",
    )
