"""
Invariant suite run by `gagsl check`.

Each check builds a small random instance, compares an operation against an
independent oracle and reports the worst deviation next to its tolerance.
"""
import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from gagsl.augmentation import characteristic_function, heat_wavelet, ppr_diffusion, structural_embedding
from gagsl.autodiff import Tape, Tensor, gradient_check, set_requires_grad
from gagsl.graph import Dataset, Graph, edge_count, eigendecompose_sym, normalize
from gagsl.models import EstimatorConfig
from gagsl.robustness import attack_edges, attack_features, evaluate, reference_amplitude
from gagsl.streams import make_rng
from gagsl.structure import StructureLearner
from gagsl.trainer import (
    Classifier,
    MICalculator,
    classification_loss,
    classify,
    infonce,
    mi_loss,
    structure_loss,
)

logger = logging.getLogger(__name__)

CHECK_STREAM = "check"


@dataclass
class CheckResult:
    name: str
    passed: bool
    deviation: float
    tolerance: float
    runtime: float


# ==============================================================================
# Instances
# ==============================================================================

def random_graph(rng: np.random.Generator, n: int, p: float = 0.3, feature_dim: int = 4) -> Graph:
    """Erdos-Renyi graph plus a ring, so no node is isolated."""
    upper = np.triu(rng.random((n, n)) < p, k=1).astype(np.float64)
    ring = np.arange(n)
    upper[ring, (ring + 1) % n] = 1.0
    upper = np.triu(upper + upper.T > 0, k=1).astype(np.float64)
    return Graph(adjacency=upper + upper.T, features=rng.standard_normal((n, feature_dim)))


def random_dataset(rng: np.random.Generator, n: int = 10, class_count: int = 2) -> Dataset:
    graph = random_graph(rng, n)
    labels = np.arange(n) % class_count
    train = np.ones(n, dtype=bool)
    empty = np.zeros(n, dtype=bool)
    return Dataset(graph, labels, train, empty, empty, class_count, name="check")


def power_series_ppr(adjacency: np.ndarray, alpha: float, terms: int = 2000) -> np.ndarray:
    """alpha * sum_k ((1 - alpha) T)^k, truncated."""
    degree = np.maximum(adjacency.sum(axis=1), 1e-12)
    t = adjacency / np.sqrt(degree)[:, None] / np.sqrt(degree)[None, :]
    total = np.eye(adjacency.shape[0])
    term = np.eye(adjacency.shape[0])
    for _ in range(terms):
        term = (1.0 - alpha) * term @ t
        total += term
        if np.abs(term).max() < 1e-16:
            break
    return alpha * total


def brute_force_metrics(scores: np.ndarray, labels: np.ndarray, class_count: int) -> Tuple[float, float, float]:
    """Confusion-matrix F1 and pairwise-comparison AUC."""
    predictions = np.argmax(scores, axis=1)
    confusion = np.zeros((class_count, class_count))
    for y, p in zip(labels, predictions):
        confusion[y, p] += 1
    f1 = []
    for c in range(class_count):
        tp = confusion[c, c]
        precision_den = confusion[:, c].sum()
        recall_den = confusion[c, :].sum()
        precision = tp / precision_den if precision_den else 0.0
        recall = tp / recall_den if recall_den else 0.0
        f1.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    micro = np.trace(confusion) / confusion.sum()

    shifted = np.exp(scores - scores.max(axis=1, keepdims=True))
    probabilities = shifted / shifted.sum(axis=1, keepdims=True)
    aucs = []
    for c in range(class_count):
        pos = probabilities[labels == c, c]
        neg = probabilities[labels != c, c]
        if pos.size == 0 or neg.size == 0:
            continue
        wins = sum((a > b) + 0.5 * (a == b) for a in pos for b in neg)
        aucs.append(wins / (pos.size * neg.size))
    return float(np.mean(f1)), float(micro), float(np.mean(aucs)) if aucs else 0.5


# ==============================================================================
# Checks
# ==============================================================================

def check_classifier_gradient(seed: int) -> float:
    rng = make_rng(seed, CHECK_STREAM, "cls")
    data = random_dataset(rng, n=int(rng.integers(8, 13)))
    clf = Classifier(data.graph.feature_dim, 6, data.class_count, rng)

    def loss(tape: Tape):
        logits = classify(tape, data.graph.adjacency, data.graph.features, clf.params)
        return classification_loss(tape, logits, data.labels, data.train_mask)

    return gradient_check(loss, clf.params, max_coords=None)


def check_mi_gradient(seed: int) -> float:
    rng = make_rng(seed, CHECK_STREAM, "mi")
    data = random_dataset(rng, n=int(rng.integers(8, 13)))
    n = data.graph.node_count
    mi = MICalculator(data.graph.feature_dim, 6, 5, rng)
    a = data.graph.adjacency
    a_r1 = a + 0.3 * random_graph(rng, n).adjacency
    a_r2 = a + 0.2 * random_graph(rng, n).adjacency

    def loss(tape: Tape):
        return mi_loss(tape, a, a_r1, a_r2, data.graph.features, mi.params, 0.5, n,
                       make_rng(seed, CHECK_STREAM, "mi.sample"))

    return gradient_check(loss, mi.params, max_coords=None)


def check_structure_gradient(seed: int) -> float:
    """Full estimator path: candidates -> softmax -> redefinition -> fusion -> L_cls - beta L_MI."""
    rng = make_rng(seed, CHECK_STREAM, "theta")
    data = random_dataset(rng, n=int(rng.integers(8, 13)))
    graph = data.graph
    n = graph.node_count
    config = EstimatorConfig(hops=2, top_k=3, hidden_dim=5, mlp_hidden_dim=4, gamma1=0.5, gamma2=0.5, mu=0.7)
    learner = StructureLearner(
        graph.adjacency, ppr_diffusion(graph, 0.15).matrix, graph.features,
        structural_embedding(graph).matrix, config, rng,
    )
    clf = Classifier(graph.feature_dim, 6, data.class_count, rng)
    mi = MICalculator(graph.feature_dim, 6, 5, rng)
    set_requires_grad(clf.params, False)
    set_requires_grad(mi.params, False)

    def loss(tape: Tape):
        redefined, fused = learner.forward(tape)
        logits = classify(tape, fused.matrix, graph.features, clf.params)
        l_cls = classification_loss(tape, logits, data.labels, data.train_mask)
        l_mi = mi_loss(tape, fused.matrix, redefined.a_r1, redefined.a_r2, graph.features, mi.params, 0.5, n,
                       make_rng(seed, CHECK_STREAM, "theta.sample"))
        return structure_loss(tape, l_cls, l_mi, 0.1)

    return gradient_check(loss, learner.params, max_coords=10, rng=rng)


def check_ppr_oracle(seed: int) -> float:
    worst = 0.0
    for i in range(20):
        rng = make_rng(seed, CHECK_STREAM, "ppr", i)
        graph = random_graph(rng, int(rng.integers(5, 51)))
        alpha = float(rng.uniform(0.1, 0.9))
        worst = max(worst, np.abs(ppr_diffusion(graph, alpha).matrix - power_series_ppr(graph.adjacency, alpha)).max())
    graph = random_graph(make_rng(seed, CHECK_STREAM, "ppr.identity"), 12)
    return max(worst, np.abs(ppr_diffusion(graph, 1.0).matrix - np.eye(12)).max())


def check_wavelet_identities(seed: int) -> float:
    graph = random_graph(make_rng(seed, CHECK_STREAM, "wavelet"), 15)
    eigenvalues, eigenvectors = eigendecompose_sym(normalize(graph).laplacian)
    worst = 0.0
    for i in range(graph.node_count):
        delta = np.zeros(graph.node_count)
        delta[i] = 1.0
        psi = heat_wavelet(eigenvalues, eigenvectors, 0.0, i)
        worst = max(worst, np.abs(psi - delta).max())
        re, im = characteristic_function(psi, 0.0)
        worst = max(worst, abs(re - 1.0), abs(im))
    return worst


def check_structural_roles(seed: int) -> float:
    """Automorphic nodes of P3 and the star K1,4 share embedding rows."""
    path = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=np.float64)
    star = np.zeros((5, 5))
    star[0, 1:] = star[1:, 0] = 1.0
    worst = 0.0
    for adjacency, orbit in ((path, [0, 2]), (star, [1, 2, 3, 4])):
        graph = Graph(adjacency=adjacency, features=np.ones((adjacency.shape[0], 1)))
        rows = structural_embedding(graph).matrix[orbit]
        worst = max(worst, np.abs(rows - rows[0]).max())
    return worst


def check_eigensolver(seed: int) -> float:
    rng = make_rng(seed, CHECK_STREAM, "eigen")
    worst = 0.0
    for _ in range(5):
        m = rng.standard_normal((20, 20))
        m = (m + m.T) / 2.0
        values, vectors = eigendecompose_sym(m)
        worst = max(worst, np.abs(vectors @ np.diag(values) @ vectors.T - m).max(),
                    np.abs(values - np.linalg.eigvalsh(m)).max())
    return worst


def check_metrics_oracle(seed: int) -> float:
    worst = 0.0
    for i in range(200):
        rng = make_rng(seed, CHECK_STREAM, "metrics", i)
        class_count = int(rng.integers(2, 5))
        n = int(rng.integers(class_count * 2, 30))
        labels = np.concatenate([np.arange(class_count), rng.integers(0, class_count, n - class_count)])
        logits = np.round(rng.standard_normal((n, class_count)), 1)
        got = evaluate(logits, labels, np.ones(n, dtype=bool), class_count, seed)
        expected = brute_force_metrics(logits, labels, class_count)
        worst = max(worst, abs(got.f1_macro - expected[0]), abs(got.f1_micro - expected[1]),
                    abs(got.auc - expected[2]))
    return worst


def check_infonce_uniform(seed: int) -> float:
    worst = 0.0
    for b in (2, 4, 8, 16):
        same = np.ones((b, 3))
        loss = infonce(Tape(training=False), Tensor(same), Tensor(same), 0.5, np.arange(b)).item()
        worst = max(worst, abs(loss - np.log(b)))
    return worst


def check_attack_counts(seed: int) -> float:
    rng = make_rng(seed, CHECK_STREAM, "attack")
    graph = random_graph(rng, 40, p=0.1)
    edges = edge_count(graph)
    worst = 0.0
    for kind, ratio in (("edge_add", 0.25), ("edge_add", 0.75), ("edge_delete", 0.1), ("edge_delete", 0.15)):
        attacked = attack_edges(graph, kind, ratio, rng)
        change = abs(edge_count(attacked) - edges)
        worst = max(worst, abs(change - np.floor(ratio * edges + 1e-9)))

    noisy = Graph(adjacency=np.zeros((100, 100)), features=rng.random((100, 100)))
    lam = 0.3
    r = reference_amplitude(noisy.features)
    noise_std = float(np.std(attack_features(noisy, lam, rng).features - noisy.features))
    # 3 sigma band of a sample std over 10^4 draws
    band = 3.0 * lam * r / np.sqrt(2 * noisy.features.size)
    return worst + max(0.0, abs(noise_std - lam * r) - band)


CHECKS: Dict[str, Tuple[Callable[[int], float], float]] = {
    "gradient: classification loss": (check_classifier_gradient, 1e-3),
    "gradient: MI loss": (check_mi_gradient, 1e-3),
    "gradient: structure estimator loss": (check_structure_gradient, 1e-3),
    "ppr diffusion vs power series": (check_ppr_oracle, 1e-8),
    "heat wavelet and characteristic function identities": (check_wavelet_identities, 1e-12),
    "structural roles of automorphic nodes": (check_structural_roles, 1e-9),
    "jacobi eigensolver reconstruction": (check_eigensolver, 1e-8),
    "metrics vs brute force": (check_metrics_oracle, 1e-12),
    "infonce under equal similarities": (check_infonce_uniform, 1e-9),
    "attack edge counts and noise level": (check_attack_counts, 0.0),
}


def run_checks(seed: int = 0, names: Optional[List[str]] = None) -> List[CheckResult]:
    """Run the suite (or the named subset) and log one line per check."""
    results = []
    for name, (check, tolerance) in CHECKS.items():
        if names and name not in names:
            continue
        start = time.perf_counter()
        deviation = float(check(seed))
        result = CheckResult(name, deviation <= tolerance, deviation, tolerance, time.perf_counter() - start)
        log = logger.info if result.passed else logger.error
        log("%s %s: deviation %.3e (tolerance %.0e, %.2fs)",
            "PASS" if result.passed else "FAIL", name, deviation, tolerance, result.runtime)
        results.append(result)
    return results
