"""
Graph data model and dense graph operators.
Holds the Graph/Dataset types, dataset ingestion, kNN graph construction,
normalized operators and the cyclic Jacobi eigensolver.
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from gagsl.config import (
    DEFAULT_KNN_METRIC,
    DEGREE_FLOOR,
    EIGEN_MAX_NODES,
    EIGEN_SYMMETRY_TOL,
    JACOBI_MAX_SWEEPS,
    JACOBI_TOL,
    SKLEARN_DATASETS,
    SYMMETRY_TOL,
)
from gagsl.exceptions import (
    ArtifactIntegrityError,
    ContractViolation,
    DatasetParseError,
    DatasetValidationError,
    NumericError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
SPLIT_NAMES = ("train", "val", "test", "none")


def _frozen(array: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


# ==============================================================================
# Domain Types
# ==============================================================================

@dataclass(frozen=True)
class Graph:
    """Undirected graph with dense adjacency and node features."""
    adjacency: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        adjacency = np.asarray(self.adjacency, dtype=np.float64)
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim == 1:
            features = features[:, None]
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise ContractViolation(f"adjacency must be square, got {adjacency.shape}")
        if features.ndim != 2 or features.shape[0] != adjacency.shape[0]:
            raise ContractViolation(
                f"features must have {adjacency.shape[0]} rows, got {features.shape}"
            )
        if not (np.all(np.isfinite(adjacency)) and np.all(np.isfinite(features))):
            raise ContractViolation("adjacency and features must be finite")
        if np.any(adjacency < 0):
            raise ContractViolation("adjacency entries must be nonnegative")
        if not np.allclose(adjacency, adjacency.T, rtol=0.0, atol=SYMMETRY_TOL):
            raise ContractViolation("adjacency must be symmetric")
        object.__setattr__(self, "adjacency", _frozen(adjacency))
        object.__setattr__(self, "features", _frozen(features))

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def with_adjacency(self, adjacency: np.ndarray) -> "Graph":
        return Graph(adjacency=adjacency, features=self.features)

    def with_features(self, features: np.ndarray) -> "Graph":
        return Graph(adjacency=self.adjacency, features=features)


@dataclass(frozen=True)
class Dataset:
    """A graph with node labels and disjoint train/val/test masks."""
    graph: Graph
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    class_count: int
    name: str = "dataset"

    def __post_init__(self):
        n = self.graph.node_count
        labels = np.asarray(self.labels, dtype=np.int64)
        masks = [np.asarray(m, dtype=bool) for m in (self.train_mask, self.val_mask, self.test_mask)]
        if labels.shape != (n,) or any(m.shape != (n,) for m in masks):
            raise DatasetValidationError(f"labels and masks must have length {n}")
        if self.class_count < 1:
            raise DatasetValidationError("class_count must be at least 1")
        train, val, test = masks
        if np.any(train & val) or np.any(train & test) or np.any(val & test):
            raise DatasetValidationError("train/val/test masks must be disjoint")
        if not train.any():
            raise DatasetValidationError("train mask is empty")
        labeled = train | val | test
        bad = labeled & ((labels < 0) | (labels >= self.class_count))
        if bad.any():
            raise DatasetValidationError(
                f"label out of range [0, {self.class_count}) at node {int(np.flatnonzero(bad)[0])}"
            )
        object.__setattr__(self, "labels", _frozen(labels, np.int64))
        object.__setattr__(self, "train_mask", _frozen(train, bool))
        object.__setattr__(self, "val_mask", _frozen(val, bool))
        object.__setattr__(self, "test_mask", _frozen(test, bool))

    def with_graph(self, graph: Graph) -> "Dataset":
        """Same labels and splits on a different (e.g. attacked) graph."""
        return Dataset(
            graph=graph,
            labels=self.labels,
            train_mask=self.train_mask,
            val_mask=self.val_mask,
            test_mask=self.test_mask,
            class_count=self.class_count,
            name=self.name,
        )


@dataclass(frozen=True)
class NormalizedOperators:
    """Self-loop GCN propagation matrix, normalized Laplacian and degrees."""
    sym_norm_adj: np.ndarray
    laplacian: np.ndarray
    degree: np.ndarray = field(repr=False)


# ==============================================================================
# Ingestion
# ==============================================================================

def _read_lines(path: PathLike):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            yield line_number, line.strip()


def _parse_features(path: PathLike) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for line_number, row in enumerate(csv.reader(f), 1):
            if not row:
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise DatasetParseError(path, line_number, "non-numeric feature value")
            if len(rows[-1]) != len(rows[0]):
                raise DatasetParseError(
                    path, line_number, f"expected {len(rows[0])} columns, got {len(rows[-1])}"
                )
    if not rows:
        raise DatasetParseError(path, 1, "feature file is empty")
    features = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise DatasetValidationError(f"{path}: features contain NaN or Inf")
    return features


def _parse_edges(path: PathLike, node_count: int) -> np.ndarray:
    adjacency = np.zeros((node_count, node_count))
    for line_number, line in _read_lines(path):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DatasetParseError(path, line_number, "expected 'src<TAB>dst'")
        try:
            src, dst = int(parts[0]), int(parts[1])
        except ValueError:
            raise DatasetParseError(path, line_number, "edge endpoints must be integers")
        if not (0 <= src < node_count and 0 <= dst < node_count):
            raise DatasetParseError(path, line_number, f"node index out of range [0, {node_count})")
        if src == dst:
            continue  # self-loops are re-added only during normalization
        adjacency[src, dst] = adjacency[dst, src] = 1.0
    return adjacency


def _parse_labels(path: PathLike, node_count: int) -> np.ndarray:
    labels = []
    for line_number, line in _read_lines(path):
        if not line:
            continue
        try:
            labels.append(int(line))
        except ValueError:
            raise DatasetParseError(path, line_number, "label must be an integer")
    if len(labels) != node_count:
        raise DatasetValidationError(f"{path}: expected {node_count} labels, got {len(labels)}")
    return np.array(labels, dtype=np.int64)


def _parse_splits(path: PathLike, node_count: int) -> Dict[str, np.ndarray]:
    names = []
    for line_number, line in _read_lines(path):
        if not line:
            continue
        if line not in SPLIT_NAMES:
            raise DatasetParseError(path, line_number, f"split must be one of {SPLIT_NAMES}")
        names.append(line)
    if len(names) != node_count:
        raise DatasetValidationError(f"{path}: expected {node_count} split entries, got {len(names)}")
    names = np.array(names)
    return {split: names == split for split in ("train", "val", "test")}


def load_dataset(
    edge_path: PathLike,
    feature_path: PathLike,
    label_path: PathLike,
    split_path: PathLike,
    class_count: Optional[int] = None,
    name: Optional[str] = None,
) -> Dataset:
    """
    Load a dataset from the four text artifacts.

    Args:
        edge_path: TAB-separated 0-indexed edge list
        feature_path: headerless CSV, row i = node i
        label_path: one integer class per line
        split_path: one of train/val/test/none per line
        class_count: number of classes; inferred as max label + 1 when omitted
        name: dataset name recorded in reports

    Returns:
        Dataset with duplicate edges collapsed and input self-loops dropped
    """
    for path in (edge_path, feature_path, label_path, split_path):
        if not Path(path).exists():
            raise FileNotFoundError(f"dataset file not found: {path}")

    features = _parse_features(feature_path)
    n = features.shape[0]
    adjacency = _parse_edges(edge_path, n)
    labels = _parse_labels(label_path, n)
    masks = _parse_splits(split_path, n)

    if np.any(labels < 0):
        raise DatasetValidationError(f"{label_path}: negative class id")
    if class_count is None:
        class_count = int(labels.max()) + 1
    elif np.any(labels >= class_count):
        raise DatasetValidationError(f"{label_path}: label out of range [0, {class_count})")

    dataset = Dataset(
        graph=Graph(adjacency=adjacency, features=features),
        labels=labels,
        train_mask=masks["train"],
        val_mask=masks["val"],
        test_mask=masks["test"],
        class_count=class_count,
        name=name or Path(edge_path).stem,
    )
    logger.info(
        "Loaded %s: N=%d, |E|=%d, F=%d, C=%d",
        dataset.name, n, edge_count(dataset.graph), features.shape[1], class_count,
    )
    return dataset


def stratified_split(
    labels: np.ndarray,
    rng: np.random.Generator,
    train_fraction: Optional[float] = None,
    val_fraction: Optional[float] = None,
    train_per_class: Optional[int] = None,
    val_count: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Draw train/val/test masks.

    Either per-class fractions (train_fraction, val_fraction; the rest is test)
    or the fixed roster of the non-graph datasets (train_per_class nodes of each
    class, val_count validation nodes from the remainder, the rest test).
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)

    if train_per_class is not None:
        for c in np.unique(labels):
            members = rng.permutation(np.flatnonzero(labels == c))
            train[members[:train_per_class]] = True
        rest = rng.permutation(np.flatnonzero(~train))
        val[rest[: val_count or 0]] = True
    else:
        train_fraction = 0.1 if train_fraction is None else train_fraction
        val_fraction = 0.2 if val_fraction is None else val_fraction
        for c in np.unique(labels):
            members = rng.permutation(np.flatnonzero(labels == c))
            n_train = max(1, int(round(train_fraction * len(members))))
            n_val = int(round(val_fraction * len(members)))
            train[members[:n_train]] = True
            val[members[n_train:n_train + n_val]] = True

    test = ~(train | val)
    return train, val, test


def load_sklearn_dataset(name: str, k: int, rng: np.random.Generator) -> Dataset:
    """
    Load one of the non-graph datasets bundled with scikit-learn and build its kNN graph.

    Args:
        name: "wine", "cancer" or "digits"
        k: neighbors per node for the kNN graph
        rng: generator for the split

    Returns:
        Dataset on standardized features with the Wine/Cancer/Digits split roster
    """
    from sklearn import datasets
    from sklearn.preprocessing import StandardScaler

    loaders = {
        "wine": datasets.load_wine,
        "cancer": datasets.load_breast_cancer,
        "digits": datasets.load_digits,
    }
    if name not in loaders:
        raise ContractViolation(f"unknown dataset '{name}', expected one of {sorted(loaders)}")
    bunch = loaders[name]()
    features = StandardScaler().fit_transform(bunch.data)
    labels = np.asarray(bunch.target, dtype=np.int64)
    train_per_class, val_count = SKLEARN_DATASETS[name]
    train, val, test = stratified_split(
        labels, rng, train_per_class=train_per_class, val_count=val_count
    )
    adjacency = knn_graph(features, k)
    return Dataset(
        graph=Graph(adjacency=adjacency, features=features),
        labels=labels,
        train_mask=train,
        val_mask=val,
        test_mask=test,
        class_count=int(labels.max()) + 1,
        name=name,
    )


# ==============================================================================
# Graph construction and operators
# ==============================================================================

def edge_count(graph: Union[Graph, np.ndarray]) -> int:
    """Number of undirected edges (nonzero upper-triangular entries)."""
    adjacency = graph.adjacency if isinstance(graph, Graph) else np.asarray(graph)
    return int(np.count_nonzero(np.triu(adjacency, k=1)))


def knn_graph(features: np.ndarray, k: int, metric: str = DEFAULT_KNN_METRIC) -> np.ndarray:
    """
    Symmetric 0/1 kNN adjacency.

    Node i links to its k most similar other nodes (ties broken by smaller
    index); the union of both directions is kept; no self-loops.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if k < 1:
        raise ContractViolation("k must be at least 1")
    if n < 2:
        raise ContractViolation("knn_graph needs at least 2 nodes")
    if k >= n:
        logger.warning("k=%d >= N=%d, returning the complete graph", k, n)
        return np.ones((n, n)) - np.eye(n)

    if metric == "cosine":
        norms = np.maximum(np.linalg.norm(features, axis=1, keepdims=True), DEGREE_FLOOR)
        unit = features / norms
        score = -(unit @ unit.T)  # lower is closer
    elif metric == "euclidean":
        sq = np.sum(features ** 2, axis=1)
        score = np.maximum(sq[:, None] + sq[None, :] - 2.0 * features @ features.T, 0.0)
    else:
        raise ContractViolation(f"unknown metric '{metric}'")

    np.fill_diagonal(score, np.inf)
    # stable sort keeps the smaller index first among equal scores
    order = np.argsort(score, axis=1, kind="stable")[:, :k]
    adjacency = np.zeros((n, n))
    rows = np.repeat(np.arange(n), k)
    adjacency[rows, order.ravel()] = 1.0
    return np.maximum(adjacency, adjacency.T)


def sym_normalize_dense(matrix: np.ndarray, add_self_loops: bool = True) -> np.ndarray:
    """D~^{-1/2}(M + I)D~^{-1/2} on a nonnegative symmetric weight matrix."""
    m = np.asarray(matrix, dtype=np.float64)
    if add_self_loops:
        m = m + np.eye(m.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(np.maximum(m.sum(axis=1), DEGREE_FLOOR))
    return d_inv_sqrt[:, None] * m * d_inv_sqrt[None, :]


def normalize(graph: Graph) -> NormalizedOperators:
    """
    Compute the GCN propagation matrix and the normalized Laplacian.

    The Laplacian is D^{-1/2}(D - A)D^{-1/2} with the degree floored at
    DEGREE_FLOOR, which equals I - D^{-1/2}AD^{-1/2} on non-isolated nodes and
    gives isolated nodes an all-zero row.
    """
    a = graph.adjacency
    degree = a.sum(axis=1)
    d_inv_sqrt = 1.0 / np.sqrt(np.maximum(degree, DEGREE_FLOOR))
    combinatorial = np.diag(degree) - a
    laplacian = d_inv_sqrt[:, None] * combinatorial * d_inv_sqrt[None, :]
    laplacian = (laplacian + laplacian.T) / 2.0
    return NormalizedOperators(
        sym_norm_adj=_frozen(sym_normalize_dense(a)),
        laplacian=_frozen(laplacian),
        degree=_frozen(degree),
    )


# ==============================================================================
# Eigensolver
# ==============================================================================

def _round_robin(n: int):
    """Rounds of disjoint index pairs covering every pair once (circle method)."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        if pairs:
            yield np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])
        players = [players[0], players[-1]] + players[1:-1]


def _off_norm(m: np.ndarray) -> float:
    return float(np.linalg.norm(m - np.diag(np.diag(m))))


def eigendecompose_sym(matrix: np.ndarray, max_nodes: int = EIGEN_MAX_NODES) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, in rounds of disjoint pairs
    whose rotations commute and are applied together. Iterates until
    off(M) <= JACOBI_TOL * ||M||_F or JACOBI_MAX_SWEEPS sweeps.

    Args:
        matrix: symmetric N x N matrix
        max_nodes: size cap

    Returns:
        Tuple of (eigenvalues ascending, orthonormal eigenvectors as columns)
    """
    a = np.array(matrix, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractViolation(f"matrix must be square, got {a.shape}")
    n = a.shape[0]
    if n > max_nodes:
        raise ContractViolation(f"N={n} exceeds the dense eigensolver cap {max_nodes}")
    if np.max(np.abs(a - a.T), initial=0.0) > EIGEN_SYMMETRY_TOL:
        raise ContractViolation("matrix must be symmetric")
    a = (a + a.T) / 2.0
    v = np.eye(n)

    target = JACOBI_TOL * np.linalg.norm(a)
    sweeps = 0
    while _off_norm(a) > target:
        if sweeps >= JACOBI_MAX_SWEEPS:
            logger.warning("Jacobi stopped after %d sweeps, off=%.3e", sweeps, _off_norm(a))
            break
        for p, q in _round_robin(n):
            apq = a[p, q]
            active = apq != 0.0
            if not active.any():
                continue
            app, aqq = a[p, p], a[q, q]
            # a vanishing apq sends theta to inf and t to 0
            with np.errstate(over="ignore", divide="ignore"):
                theta = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
                sign = np.where(active, np.sign(theta) + (theta == 0.0), 0.0)
                t = sign / (np.abs(theta) + np.hypot(theta, 1.0))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            # columns: A <- A P
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            # rows: A <- P^T A
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = a[q, p] = 0.0

            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        sweeps += 1

    eigenvalues = np.diag(a).copy()
    if not np.all(np.isfinite(eigenvalues)):
        raise NumericError("Jacobi eigensolver produced non-finite values")
    order = np.argsort(eigenvalues, kind="stable")
    logger.debug("Jacobi converged in %d sweeps for N=%d", sweeps, n)
    return eigenvalues[order], v[:, order]


# ==============================================================================
# CSV artifacts
# ==============================================================================

def save_matrix_csv(path: PathLike, matrix: np.ndarray) -> Path:
    """Write a matrix in the headerless CSV dialect."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")
    return path


def load_matrix_csv(path: PathLike) -> np.ndarray:
    """Read a headerless CSV matrix, raising ArtifactIntegrityError on corrupt files."""
    path = Path(path)
    if not path.exists():
        raise ArtifactIntegrityError(path, "file is missing")
    try:
        matrix = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as e:
        raise ArtifactIntegrityError(path, f"corrupt CSV matrix ({e})")
    if not np.all(np.isfinite(matrix)):
        raise ArtifactIntegrityError(path, "matrix contains NaN or Inf")
    return matrix


def block_labels(sizes: Sequence[int]) -> np.ndarray:
    """Community label per node for consecutive blocks of the given sizes."""
    return np.repeat(np.arange(len(sizes)), sizes)
