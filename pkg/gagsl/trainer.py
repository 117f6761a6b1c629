"""
GIB-guided training.

The MI calculator estimates, with InfoNCE, how much the learned structure's
embeddings share with each redefined structure's embeddings; the classifier is
a two-layer GCN on A*. Training alternates three phases per epoch: structure
estimator (Theta), MI calculator (Phi), classifier (Omega), each with the other
two groups frozen.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from gagsl.autodiff import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    glorot_init,
    set_requires_grad,
    zero_grad,
    zeros_param,
)
from gagsl.config import CHECKPOINT_FORMAT_VERSION, CONTRASTIVE_SAMPLE_CAP, COSINE_EPS
from gagsl.exceptions import ArtifactIntegrityError, ContractViolation, NumericError
from gagsl.graph import Dataset
from gagsl.models import EstimatorConfig, LossReport, TrainSchedule, Variant
from gagsl.robustness import f1_scores
from gagsl.streams import OMEGA, PHI, SAMPLING, THETA, make_rng
from gagsl.structure import FusedStructure, RedefinedStructure, StructureLearner

logger = logging.getLogger(__name__)

Structure = Union[Tensor, np.ndarray]

# dropout layer ids
_CLASSIFIER_LAYER = 0
_MI_LAYER = 1


# ==============================================================================
# MI calculator
# ==============================================================================

class MICalculator:
    """Per-graph GCN layers with a shared two-layer projection MLP (Phi)."""

    GRAPHS = ("star", "r1", "r2")

    def __init__(self, in_dim: int, hidden_dim: int, projection_dim: int, rng: np.random.Generator):
        self.params: Dict[str, Tensor] = {
            f"gcn_{g}": glorot_init(in_dim, hidden_dim, rng, name=f"mi.gcn_{g}") for g in self.GRAPHS
        }
        self.params.update({
            "proj_w1": glorot_init(hidden_dim, hidden_dim, rng, name="mi.proj_w1"),
            "proj_b1": zeros_param(1, hidden_dim, name="mi.proj_b1"),
            "proj_w2": glorot_init(hidden_dim, projection_dim, rng, name="mi.proj_w2"),
            "proj_b2": zeros_param(1, projection_dim, name="mi.proj_b2"),
        })


def mi_embed(tape: Tape, adjacency: Structure, features: np.ndarray, phi: Dict[str, Tensor], graph: str = "star",
             dropout: float = 0.0, seed: int = 0, counters: Tuple = ()) -> Tensor:
    """
    Projected embeddings H_p = MLP(GCN(adjacency, X)).

    Rows are L2-normalized inside infonce before any similarity is taken.
    Projections that collapse to the zero vector have cosine 1 with each other.
    """
    adjacency = adjacency if isinstance(adjacency, Tensor) else Tensor(adjacency)
    if adjacency.shape[0] != features.shape[0]:
        raise ContractViolation(f"adjacency {adjacency.shape} and features {features.shape} disagree")
    propagated = tape.matmul(tape.sym_normalize(adjacency), features)
    h = tape.relu(tape.matmul(propagated, phi[f"gcn_{graph}"]))
    h = tape.dropout(h, dropout, seed, _MI_LAYER, graph, *counters)
    hidden = tape.relu(tape.add_row(tape.matmul(h, phi["proj_w1"]), phi["proj_b1"]))
    projected = tape.add_row(tape.matmul(hidden, phi["proj_w2"]), phi["proj_b2"])
    if projected.shape[0] > 1 and np.allclose(projected.values, projected.values[:1], atol=1e-12):
        logger.warning("MI projections collapsed to a single vector, cosine similarities are all equal")
    return projected


def _guarded_rows(values: np.ndarray) -> np.ndarray:
    return np.linalg.norm(values, axis=1) <= COSINE_EPS


def infonce(tape: Tape, proj_a: Tensor, proj_b: Tensor, tau: float, sample_indices: np.ndarray) -> Tensor:
    """
    Symmetric InfoNCE loss over B sampled nodes with inter-view negatives.

    loss = (1/2B) sum_i [l(u_i, v_i) + l(v_i, u_i)], l the negative log-softmax
    of the positive pair's cosine similarity / tau against the sampled nodes of
    the other view.
    Two rows whose norms both fall below the cosine guard count as parallel
    (cosine 1).
    """
    idx = np.asarray(sample_indices, dtype=np.int64)
    b = idx.size
    if b < 2:
        raise ContractViolation(f"infonce needs at least 2 sampled nodes, got {b}")
    if tau <= 0:
        raise ContractViolation("tau must be positive")
    if proj_a.shape != proj_b.shape:
        raise ContractViolation(f"projections disagree: {proj_a.shape} vs {proj_b.shape}")
    u = tape.l2_normalize_rows(tape.gather_rows(proj_a, idx))
    v = tape.l2_normalize_rows(tape.gather_rows(proj_b, idx))
    cosines = tape.matmul(u, tape.transpose(v))
    degenerate = np.outer(_guarded_rows(proj_a.values[idx]), _guarded_rows(proj_b.values[idx]))
    if degenerate.any():
        cosines = tape.add(tape.elementwise_mul(cosines, (~degenerate).astype(np.float64)), degenerate.astype(np.float64))
    logits = tape.scale(cosines, 1.0 / tau)
    diagonal = np.arange(b)
    forward = tape.reduce_mean(tape.pick(tape.log_softmax_rows(logits), diagonal, diagonal))
    backward = tape.reduce_mean(tape.pick(tape.log_softmax_rows(tape.transpose(logits)), diagonal, diagonal))
    return tape.scale(tape.add(forward, backward), -0.5)


def sample_nodes(n: int, sample_count: int, rng: np.random.Generator) -> np.ndarray:
    """B nodes uniformly without replacement."""
    if not 2 <= sample_count <= n:
        raise ContractViolation(f"need 2 <= B <= N, got B={sample_count}, N={n}")
    return rng.choice(n, size=sample_count, replace=False)


def mi_loss(tape: Tape, fused: Structure, a_r1: Structure, a_r2: Structure, features: np.ndarray,
            phi: Dict[str, Tensor], tau: float, sample_count: int, rng: np.random.Generator,
            dropout: float = 0.0, seed: int = 0, counters: Tuple = ()) -> Tensor:
    """L_MI = InfoNCE(G*, G_r1) + InfoNCE(G*, G_r2) on one shared node sample."""
    idx = sample_nodes(features.shape[0], sample_count, rng)
    star = mi_embed(tape, fused, features, phi, "star", dropout, seed, counters)
    r1 = mi_embed(tape, a_r1, features, phi, "r1", dropout, seed, counters)
    r2 = mi_embed(tape, a_r2, features, phi, "r2", dropout, seed, counters)
    return tape.add(infonce(tape, star, r1, tau, idx), infonce(tape, star, r2, tau, idx))


# ==============================================================================
# Classifier
# ==============================================================================

class Classifier:
    """Two-layer GCN F -> H -> C (Omega)."""

    def __init__(self, in_dim: int, hidden_dim: int, class_count: int, rng: np.random.Generator):
        self.params: Dict[str, Tensor] = {
            "w0": glorot_init(in_dim, hidden_dim, rng, name="clf.w0"),
            "w1": glorot_init(hidden_dim, class_count, rng, name="clf.w1"),
        }


def classify(tape: Tape, structure: Structure, features: np.ndarray, omega: Dict[str, Tensor],
             dropout: float = 0.0, seed: int = 0, counters: Tuple = ()) -> Tensor:
    """Z* = norm(A*) ReLU(norm(A*) X W0) W1, dropout between the layers in training mode."""
    structure = structure if isinstance(structure, Tensor) else Tensor(structure)
    a_norm = tape.sym_normalize(structure)
    hidden = tape.relu(tape.matmul(tape.matmul(a_norm, features), omega["w0"]))
    hidden = tape.dropout(hidden, dropout, seed, _CLASSIFIER_LAYER, *counters)
    return tape.matmul(a_norm, tape.matmul(hidden, omega["w1"]))


def classification_loss(tape: Tape, logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over the masked nodes."""
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if idx.size == 0:
        raise ContractViolation("classification_loss: mask is empty")
    log_probs = tape.log_softmax_rows(tape.gather_rows(logits, idx))
    picked = tape.pick(log_probs, np.arange(idx.size), np.asarray(labels)[idx])
    return tape.scale(tape.reduce_mean(picked), -1.0)


def structure_loss(tape: Tape, l_cls: Tensor, l_mi: Tensor, beta: float) -> Tensor:
    """L = L_cls - beta * L_MI."""
    return tape.sub(l_cls, tape.scale(l_mi, beta))


# ==============================================================================
# Alternating optimization
# ==============================================================================

@dataclass
class TrainResult:
    """Best-validation snapshot of a training run."""
    structure: np.ndarray
    a_r1: np.ndarray
    a_r2: np.ndarray
    classifier: Dict[str, np.ndarray]
    logits: np.ndarray
    report: LossReport
    candidate_mask: Optional[np.ndarray] = field(default=None, repr=False)


def _check_finite(value: Tensor, phase: str, epoch: int, step: int, report: LossReport) -> float:
    loss = value.item()
    if not np.isfinite(loss):
        raise NumericError(
            f"non-finite loss in {phase} phase (epoch {epoch}, step {step})",
            {"phase": phase, "epoch": epoch, "step": step, "report": report.model_dump()},
        )
    return loss


class GIBTrainer:
    """
    State machine for one training run.

    Args:
        dataset: labels, splits and the (possibly attacked) graph
        role_features: X-hat
        diffusion: A-hat
        schedule: epochs, learning rates, beta, tau, B, dropout, seed
        estimator: structure estimator settings
        variant: "full" or an ablation ("no_feature_aug", "no_structure_aug", "no_estimator", "no_gib")
        learn_structure: False trains the plain GCN baseline on A
    """

    def __init__(self, dataset: Dataset, role_features: Optional[np.ndarray], diffusion: Optional[np.ndarray],
                 schedule: TrainSchedule, estimator: Optional[EstimatorConfig] = None,
                 variant: Variant = "full", learn_structure: bool = True):
        self.dataset = dataset
        self.schedule = schedule
        self.variant = variant
        self.learn_structure = learn_structure
        self.adjacency = dataset.graph.adjacency
        self.features = dataset.graph.features
        n = dataset.graph.node_count
        self.sample_count = schedule.sample_count or min(n, CONTRASTIVE_SAMPLE_CAP)
        if learn_structure and not 2 <= self.sample_count <= n:
            raise ContractViolation(f"need 2 <= B <= N, got B={self.sample_count}, N={n}")
        seed = schedule.seed

        self.learner: Optional[StructureLearner] = None
        self.mi: Optional[MICalculator] = None
        if learn_structure:
            estimator = estimator or EstimatorConfig()
            if variant == "no_estimator":
                estimator = estimator.model_copy(update={"gamma1": 0.0, "gamma2": 0.0})
            views_features = self.features if variant == "no_feature_aug" else role_features
            views_diffusion = self.adjacency if variant == "no_structure_aug" else diffusion
            self.learner = StructureLearner(
                self.adjacency, views_diffusion, self.features, views_features,
                estimator, make_rng(seed, THETA, "init"),
            )
            self.mi = MICalculator(self.features.shape[1], schedule.hidden_dim, schedule.projection_dim,
                                   make_rng(seed, PHI, "init"))
            self.opt_theta = AdamState(self.learner.params, schedule.lr_estimator)
            self.opt_phi = AdamState(self.mi.params, schedule.lr_mi)
        self.classifier = Classifier(self.features.shape[1], schedule.hidden_dim, dataset.class_count,
                                     make_rng(seed, OMEGA, "init"))
        self.opt_omega = AdamState(self.classifier.params, schedule.lr_classifier, weight_decay=schedule.weight_decay)

        self.report = LossReport()
        self.a_star = self.adjacency
        self.a_r1 = self.adjacency
        self.a_r2 = self.adjacency
        if learn_structure:
            self._refresh_structures()

    # parameter groups ---------------------------------------------------------

    @property
    def uses_estimator(self) -> bool:
        return self.learn_structure and self.variant != "no_estimator"

    @property
    def uses_gib(self) -> bool:
        return self.learn_structure and self.variant != "no_gib"

    def groups(self) -> Dict[str, Dict[str, Tensor]]:
        groups = {"omega": self.classifier.params}
        if self.learn_structure:
            groups["theta"] = self.learner.params
            groups["phi"] = self.mi.params
        return groups

    def _activate(self, active: str) -> None:
        for name, params in self.groups().items():
            set_requires_grad(params, name == active)

    def _refresh_structures(self) -> None:
        """Fuse A* from the current Theta (no gradients recorded)."""
        self._activate("none")
        redefined, fused = self.learner.forward(Tape(training=False))
        self.a_r1 = redefined.a_r1.values
        self.a_r2 = redefined.a_r2.values
        self.a_star = fused.values

    # phases -------------------------------------------------------------------

    def structure_phase(self, epoch: int) -> None:
        """Theta steps minimizing L_cls - beta * L_MI with Phi and Omega frozen."""
        s = self.schedule
        self._activate("theta")
        for step in range(s.estimator_epochs):
            zero_grad(self.learner.params)
            tape = Tape(training=True)
            redefined, fused = self.learner.forward(tape)
            logits = classify(tape, fused.matrix, self.features, self.classifier.params,
                              s.classifier_dropout, s.seed, ("theta", epoch, step))
            l_cls = classification_loss(tape, logits, self.dataset.labels, self.dataset.train_mask)
            if self.uses_gib:
                l_mi = mi_loss(tape, fused.matrix, redefined.a_r1, redefined.a_r2, self.features, self.mi.params,
                               s.tau, self.sample_count, make_rng(s.seed, SAMPLING, "theta", epoch, step),
                               s.mi_dropout, s.seed, ("theta", epoch, step))
                loss = structure_loss(tape, l_cls, l_mi, s.beta)
                self.report.structure_mi_loss.append(_check_finite(l_mi, "structure", epoch, step, self.report))
            else:
                loss = l_cls
            self.report.structure_cls_loss.append(_check_finite(l_cls, "structure", epoch, step, self.report))
            self.report.structure_loss.append(_check_finite(loss, "structure", epoch, step, self.report))
            tape.backward(loss)
            adam_step(self.opt_theta, self.learner.params)
            logger.debug("epoch %d theta step %d: L=%.5f", epoch, step, self.report.structure_loss[-1])
        self._refresh_structures()

    def mi_phase(self, epoch: int) -> None:
        """Phi steps minimizing L_MI with Theta and Omega frozen."""
        s = self.schedule
        self._activate("phi")
        for step in range(s.mi_epochs):
            zero_grad(self.mi.params)
            tape = Tape(training=True)
            loss = mi_loss(tape, self.a_star, self.a_r1, self.a_r2, self.features, self.mi.params,
                           s.tau, self.sample_count, make_rng(s.seed, SAMPLING, "phi", epoch, step),
                           s.mi_dropout, s.seed, ("phi", epoch, step))
            self.report.mi_loss.append(_check_finite(loss, "mi", epoch, step, self.report))
            tape.backward(loss)
            adam_step(self.opt_phi, self.mi.params)
            logger.debug("epoch %d phi step %d: L_MI=%.5f", epoch, step, self.report.mi_loss[-1])

    def classifier_phase(self, epoch: int) -> None:
        """Omega steps minimizing L_cls on A* with Theta and Phi frozen."""
        s = self.schedule
        self._activate("omega")
        for step in range(s.classifier_epochs):
            zero_grad(self.classifier.params)
            tape = Tape(training=True)
            logits = classify(tape, self.a_star, self.features, self.classifier.params,
                              s.classifier_dropout, s.seed, ("omega", epoch, step))
            loss = classification_loss(tape, logits, self.dataset.labels, self.dataset.train_mask)
            self.report.classifier_loss.append(_check_finite(loss, "classifier", epoch, step, self.report))
            tape.backward(loss)
            adam_step(self.opt_omega, self.classifier.params)
            logger.debug("epoch %d omega step %d: L_cls=%.5f", epoch, step, self.report.classifier_loss[-1])

    def predict(self) -> np.ndarray:
        """Eval-mode logits of the current classifier on the current A*."""
        self._activate("none")
        return classify(Tape(training=False), self.a_star, self.features, self.classifier.params).values

    def _selection_score(self, logits: np.ndarray) -> float:
        mask = self.dataset.val_mask if self.dataset.val_mask.any() else self.dataset.train_mask
        predictions = np.argmax(logits[mask], axis=1)
        f1_macro, _, _ = f1_scores(predictions, self.dataset.labels[mask], self.dataset.class_count)
        return f1_macro

    def fit(self, start_epoch: int = 0, checkpoint_path=None) -> TrainResult:
        """
        Run the remaining epochs and return the best-validation snapshot.

        Args:
            start_epoch: first epoch to run, after load_state on a checkpoint
            checkpoint_path: if given, the trainer state is written after every epoch
        """
        best: Optional[TrainResult] = None
        best_score = -np.inf
        if start_epoch >= self.schedule.epochs:
            raise ContractViolation(f"nothing to train: start_epoch {start_epoch} >= epochs {self.schedule.epochs}")
        for epoch in range(start_epoch, self.schedule.epochs):
            if self.uses_estimator:
                self.structure_phase(epoch)
            if self.uses_gib:
                self.mi_phase(epoch)
            self.classifier_phase(epoch)

            logits = self.predict()
            score = self._selection_score(logits)
            self.report.val_f1_macro.append(score)
            # ties go to the later epoch
            if score >= best_score:
                best_score = score
                self.report.best_epoch = epoch
                best = TrainResult(
                    structure=np.array(self.a_star, copy=True),
                    a_r1=np.array(self.a_r1, copy=True),
                    a_r2=np.array(self.a_r2, copy=True),
                    classifier={k: p.values.copy() for k, p in self.classifier.params.items()},
                    logits=logits,
                    report=self.report,
                )
            logger.debug("epoch %d: val F1-macro %.4f", epoch, score)
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, self, epoch + 1)

        if self.learner is not None:
            best.candidate_mask = self.learner.candidates1.mask() | self.learner.candidates2.mask()
        logger.info("Training finished: best epoch %d, val F1-macro %.4f", self.report.best_epoch, best_score)
        return best

    # checkpoints --------------------------------------------------------------

    def state(self, epoch: int) -> Dict[str, Any]:
        groups = {name: {k: p.values.tolist() for k, p in params.items()} for name, params in self.groups().items()}
        optimizers = {"omega": self.opt_omega.state_dict()}
        if self.learn_structure:
            optimizers.update({"theta": self.opt_theta.state_dict(), "phi": self.opt_phi.state_dict()})
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "schedule": self.schedule.model_dump(mode="json"),
            "variant": self.variant,
            "learn_structure": self.learn_structure,
            "params": groups,
            "optimizers": optimizers,
            "streams": {"seed": self.schedule.seed, "completed_epochs": epoch},
        }

    def load_state(self, state: Dict[str, Any]) -> int:
        """Restore parameters and optimizer moments; returns the completed epoch count."""
        groups = self.groups()
        for name, params in state["params"].items():
            if name not in groups:
                raise ArtifactIntegrityError("checkpoint", f"unexpected parameter group '{name}'")
            for key, values in params.items():
                groups[name][key].values = np.array(values, dtype=np.float64)
        self.opt_omega.load_state_dict(state["optimizers"]["omega"])
        if self.learn_structure:
            self.opt_theta.load_state_dict(state["optimizers"]["theta"])
            self.opt_phi.load_state_dict(state["optimizers"]["phi"])
            self._refresh_structures()
        return int(state["streams"]["completed_epochs"])


def train(dataset: Dataset, role_features: np.ndarray, diffusion: np.ndarray, schedule: TrainSchedule,
          estimator: Optional[EstimatorConfig] = None, variant: Variant = "full") -> TrainResult:
    """Algorithm: T epochs of (Theta phase, fuse A*, Phi phase, Omega phase); best validation snapshot."""
    return GIBTrainer(dataset, role_features, diffusion, schedule, estimator, variant).fit()


def train_gcn_baseline(dataset: Dataset, schedule: TrainSchedule) -> TrainResult:
    """Plain two-layer GCN on A with the classifier stream, cadence and snapshot rule of train."""
    return GIBTrainer(dataset, None, None, schedule, learn_structure=False).fit()


def save_checkpoint(path, trainer: GIBTrainer, epoch: int) -> Path:
    """Write parameters, schedule, optimizer moments and stream position as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(trainer.state(epoch)), encoding="utf-8")
    return path


def load_checkpoint(path) -> Dict[str, Any]:
    """Read and version-check a checkpoint."""
    path = Path(path)
    if not path.exists():
        raise ArtifactIntegrityError(path, "checkpoint is missing")
    try:
        state = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ArtifactIntegrityError(path, f"corrupt checkpoint ({e})")
    if state.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ArtifactIntegrityError(path, f"unsupported checkpoint version {state.get('format_version')}")
    return state
