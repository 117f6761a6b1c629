"""
Pydantic models for GaGSL experiments.
Defines configuration schemas and report/manifest documents for every pipeline.
"""
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from gagsl.config import (
    ARTIFACT_VERSION,
    BETA,
    CANDIDATE_TOP_K,
    CLASSIFIER_DROPOUT,
    CLASSIFIER_EPOCHS,
    DEFAULT_KNN_K,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_SEED,
    DEFAULT_TRIALS,
    EPOCHS,
    ESTIMATOR_EPOCHS,
    ESTIMATOR_LEARNING_RATE,
    GAMMA1,
    GAMMA2,
    HIDDEN_DIM,
    LEARNING_RATE,
    MI_DROPOUT,
    MI_EPOCHS,
    MLP_HIDDEN_DIM,
    MU,
    NEIGHBOR_HOPS,
    PPR_ALPHA,
    PPR_TOP_K,
    PROJECTION_DIM,
    TAU,
    TRAIN_FRACTION,
    VAL_FRACTION,
    WAVELET_SAMPLE_POINTS,
    WAVELET_T_MAX,
    WEIGHT_DECAY,
)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ==============================================================================
# Augmentation Models
# ==============================================================================

class WaveletConfig(_Strict):
    """Heat-kernel scales and characteristic-function sample points."""
    scales: Optional[List[float]] = Field(None, description="Diffusion scales s_1..s_m; spectral-gap heuristic when omitted")
    sample_points: Optional[List[float]] = Field(None, description="Evaluation points t_1..t_d; evenly spaced on [0, t_max] when omitted")
    n_sample_points: int = Field(WAVELET_SAMPLE_POINTS, ge=1, description="d when sample_points is omitted")
    t_max: float = Field(WAVELET_T_MAX, gt=0, description="Upper end of the default t grid")

    @field_validator("scales")
    @classmethod
    def _scales_ascending(cls, v):
        if v is not None:
            if not v or any(s <= 0 for s in v):
                raise ValueError("scales must be nonempty and strictly positive")
            if any(b <= a for a, b in zip(v, v[1:])):
                raise ValueError("scales must be strictly ascending")
        return v

    @field_validator("sample_points")
    @classmethod
    def _points_ascending(cls, v):
        if v is not None:
            if not v:
                raise ValueError("sample_points must be nonempty")
            if any(b < a for a, b in zip(v, v[1:])):
                raise ValueError("sample_points must be ascending")
        return v


class DiffusionConfig(_Strict):
    """Personalized PageRank diffusion settings."""
    alpha: float = Field(PPR_ALPHA, gt=0, le=1, description="Restart probability")
    sparsify: bool = Field(False, description="Keep only the top_k affinities per node")
    top_k: int = Field(PPR_TOP_K, ge=1, description="Entries kept per row when sparsifying")


# ==============================================================================
# Model Configuration
# ==============================================================================

class EstimatorConfig(_Strict):
    """Structure estimator and redefinition settings."""
    hops: int = Field(NEIGHBOR_HOPS, ge=1, description="h: candidate neighbors of view 1 lie within h hops")
    top_k: int = Field(CANDIDATE_TOP_K, ge=1, description="k: candidate neighbors of view 2 from the diffusion rows")
    hidden_dim: int = Field(HIDDEN_DIM, ge=1, description="GCN width of each estimator")
    mlp_hidden_dim: int = Field(MLP_HIDDEN_DIM, ge=1, description="Hidden width of the pair-scoring MLP")
    gamma1: float = Field(GAMMA1, ge=0, le=1, description="Weight of S^1 in A_r1")
    gamma2: float = Field(GAMMA2, ge=0, le=1, description="Weight of S^2 in A_r2")
    mu: float = Field(MU, ge=0, le=1, description="Mix of A against A-hat in A_r2")


class TrainSchedule(_Strict):
    """Alternating optimization schedule and loss settings."""
    epochs: int = Field(EPOCHS, ge=1, description="T: outer epochs")
    estimator_epochs: int = Field(ESTIMATOR_EPOCHS, ge=1, description="T_v: structure estimator steps per epoch")
    mi_epochs: int = Field(MI_EPOCHS, ge=1, description="T_m: MI calculator steps per epoch")
    classifier_epochs: int = Field(CLASSIFIER_EPOCHS, ge=1, description="T_c: classifier steps per epoch")
    lr_estimator: float = Field(ESTIMATOR_LEARNING_RATE, gt=0)
    lr_mi: float = Field(LEARNING_RATE, gt=0)
    lr_classifier: float = Field(LEARNING_RATE, gt=0)
    weight_decay: float = Field(WEIGHT_DECAY, ge=0, description="Decoupled weight decay of the classifier")
    beta: float = Field(BETA, ge=0, description="Balance between sufficiency and minimality")
    tau: float = Field(TAU, gt=0, description="InfoNCE temperature")
    sample_count: Optional[int] = Field(None, ge=2, description="B; min(N, 256) when omitted")
    classifier_dropout: float = Field(CLASSIFIER_DROPOUT, ge=0, lt=1)
    mi_dropout: float = Field(MI_DROPOUT, ge=0, lt=1)
    hidden_dim: int = Field(HIDDEN_DIM, ge=1, description="Classifier and MI calculator GCN width")
    projection_dim: int = Field(PROJECTION_DIM, ge=1, description="MI calculator projection width")
    seed: int = Field(DEFAULT_SEED, description="Base seed of the training streams")


Variant = Literal["full", "no_feature_aug", "no_structure_aug", "no_estimator", "no_gib"]


# ==============================================================================
# Robustness Models
# ==============================================================================

class AttackSpec(_Strict):
    """A random poisoning perturbation."""
    kind: Literal["edge_add", "edge_delete", "feature_noise"]
    rate: float = Field(..., ge=0, description="Edge ratio relative to |E|, or lambda for feature noise")
    seed: Optional[int] = Field(None, description="Perturbation seed; derived from the trial seed when omitted")

    @model_validator(mode="after")
    def _delete_ratio(self):
        if self.kind == "edge_delete" and self.rate > 1:
            raise ValueError("edge_delete rate must be <= 1")
        return self

    @property
    def label(self) -> str:
        return f"{self.kind}@{self.rate:g}"


class MetricSummary(BaseModel):
    """Mean and population standard deviation over trials."""
    mean: float
    std: float = Field(..., ge=0)


class TrialMetrics(BaseModel):
    """Test metrics of one trial."""
    seed: int
    auc: float = Field(..., ge=0, le=1)
    f1_macro: float = Field(..., ge=0, le=1)
    f1_micro: float = Field(..., ge=0, le=1)


class MetricsReport(BaseModel):
    """Aggregated metrics of one model over independent trials."""
    model: str = Field(..., description="gagsl, gcn, or an ablation variant")
    auc: MetricSummary
    f1_macro: MetricSummary
    f1_micro: MetricSummary
    trials: List[TrialMetrics] = Field(default_factory=list)
    trial_seeds: List[int] = Field(default_factory=list)
    auc_convention: str = Field("one-vs-rest macro over softmax scores")
    attack: Optional[AttackSpec] = None


class SweepRow(BaseModel):
    """One row of a rate/value -> metric table."""
    model: str
    parameter: str
    value: float
    f1_macro_mean: float
    f1_macro_std: float
    f1_micro_mean: float
    f1_micro_std: float
    auc_mean: float
    auc_std: float


class LossReport(BaseModel):
    """Training traces, one entry per completed phase iteration."""
    structure_loss: List[float] = Field(default_factory=list, description="L = L_cls - beta * L_MI per estimator step")
    structure_cls_loss: List[float] = Field(default_factory=list, description="L_cls inside each estimator step")
    structure_mi_loss: List[float] = Field(default_factory=list, description="L_MI inside each estimator step")
    mi_loss: List[float] = Field(default_factory=list, description="L_MI per MI calculator step")
    classifier_loss: List[float] = Field(default_factory=list, description="L_cls per classifier step")
    val_f1_macro: List[float] = Field(default_factory=list, description="Validation F1-macro per outer epoch")
    best_epoch: int = Field(-1, description="Outer epoch of the returned snapshot")


# ==============================================================================
# Experiment Configuration
# ==============================================================================

class DatasetSource(_Strict):
    """Where the dataset of an experiment comes from."""
    kind: Literal["files", "sklearn", "sbm"] = "sbm"
    # files
    edge_path: Optional[str] = None
    feature_path: Optional[str] = None
    label_path: Optional[str] = None
    split_path: Optional[str] = None
    class_count: Optional[int] = Field(None, ge=1)
    # sklearn
    name: Optional[Literal["wine", "cancer", "digits"]] = None
    knn_k: int = Field(DEFAULT_KNN_K, ge=1)
    # sbm
    n: int = Field(200, ge=4)
    n_blocks: int = Field(2, ge=1)
    p_in: float = Field(0.1, ge=0, le=1)
    p_out: float = Field(0.01, ge=0, le=1)
    feat_dim: int = Field(8, ge=1)
    feat_shift: float = Field(1.0, ge=0)
    train_fraction: float = Field(TRAIN_FRACTION, gt=0, lt=1)
    val_fraction: float = Field(VAL_FRACTION, ge=0, lt=1)

    @model_validator(mode="after")
    def _complete(self):
        if self.kind == "files":
            missing = [f for f in ("edge_path", "feature_path", "label_path", "split_path") if getattr(self, f) is None]
            if missing:
                raise ValueError(f"files source needs {', '.join(missing)}")
        if self.kind == "sklearn" and self.name is None:
            raise ValueError("sklearn source needs a dataset name")
        if self.kind == "sbm" and self.p_out > self.p_in:
            raise ValueError("sbm source needs p_out <= p_in")
        return self

    def missing_paths(self) -> List[str]:
        """Configured dataset files that do not exist."""
        if self.kind != "files":
            return []
        paths = [self.edge_path, self.feature_path, self.label_path, self.split_path]
        return [p for p in paths if not Path(p).exists()]


class ExperimentConfig(_Strict):
    """A complete, reproducible experiment description."""
    dataset: DatasetSource = Field(default_factory=DatasetSource)
    wavelet: WaveletConfig = Field(default_factory=WaveletConfig)
    diffusion: DiffusionConfig = Field(default_factory=DiffusionConfig)
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    schedule: TrainSchedule = Field(default_factory=TrainSchedule)
    attacks: List[AttackSpec] = Field(default_factory=list)
    variant: Variant = "full"
    baseline: bool = Field(True, description="Also train the plain GCN baseline on the same splits")
    trials: int = Field(DEFAULT_TRIALS, ge=1)
    base_seed: int = DEFAULT_SEED
    workers: int = Field(1, ge=1, description="Process pool size for trials")
    output_dir: str = DEFAULT_OUTPUT_DIR

    def canonical(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def canonical_json(self) -> str:
        return json.dumps(self.canonical(), sort_keys=True, indent=2)

    def config_hash(self) -> str:
        """SHA-256 of the canonical form, independent of key order in the source file."""
        payload = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None, trials: Optional[int] = None) -> "ExperimentConfig":
        """CLI flags override config keys."""
        updates: Dict[str, Any] = {}
        if seed is not None:
            updates["base_seed"] = seed
        if out is not None:
            updates["output_dir"] = out
        if trials is not None:
            updates["trials"] = trials
        return self.model_validate({**self.canonical(), **updates})


def load_config(path) -> ExperimentConfig:
    """Parse a JSON experiment config."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return ExperimentConfig.model_validate_json(path.read_text(encoding="utf-8"))


# ==============================================================================
# Run Manifest
# ==============================================================================

class RunManifest(BaseModel):
    """Provenance of a run directory."""
    config_hash: str
    artifact_version: str = ARTIFACT_VERSION
    command: str = Field(..., description="run, sweep, sensitivity or ablation")
    config: Dict[str, Any] = Field(..., description="Canonical config including every default")
    trial_seeds: List[int] = Field(default_factory=list)
    started_at: str
    finished_at: Optional[str] = None
    status: Literal["running", "completed", "failed"] = "running"
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    files: List[str] = Field(default_factory=list, description="Output file inventory, relative to the run directory")
