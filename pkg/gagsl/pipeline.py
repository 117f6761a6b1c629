"""
Experiment orchestration.

Every entry point builds the dataset once from the base seed, runs independent
trials (attack -> augment -> train -> evaluate) and writes its outputs into a
run directory owned by the calling process: manifest, metrics JSON, training
traces, CSV matrices and the SQLite trial log.
"""
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError
from tqdm import tqdm

from gagsl.augmentation import diffuse, structural_embedding
from gagsl.config import progress_disabled
from gagsl.exceptions import ArtifactIntegrityError, ContractViolation, StageError, stage
from gagsl.graph import Dataset, load_dataset, load_matrix_csv, load_sklearn_dataset, save_matrix_csv
from gagsl.models import (
    AttackSpec,
    ExperimentConfig,
    LossReport,
    MetricsReport,
    RunManifest,
    SweepRow,
    TrialMetrics,
    Variant,
)
from gagsl.monitoring import TrialTracker, get_trial_tracker
from gagsl.robustness import (
    aggregate,
    apply_attack,
    community_prob_matrix,
    evaluate,
    intra_inter_mean_weight,
    sbm_generate,
    weight_histogram,
)
from gagsl.streams import DATA, make_rng, trial_seeds
from gagsl.trainer import train, train_gcn_baseline

logger = logging.getLogger(__name__)

# Run directory layout
MANIFEST_FILE = "manifest.json"
CONFIG_FILE = "config.json"
METRICS_FILE = "metrics.json"
TRACES_FILE = "traces.json"
ADJACENCY_FILE = "adjacency.csv"
ATTACKED_FILE = "attacked_adjacency.csv"
STRUCTURE_FILE = "structure.csv"
COMMUNITIES_FILE = "communities.txt"
HEATMAP_FILES = {
    "original": "heatmap_original.csv",
    "attacked": "heatmap_attacked.csv",
    "learned": "heatmap_learned.csv",
}
HISTOGRAM_FILE = "weight_histogram.json"

BASELINE_MODEL = "gcn"
ABLATION_VARIANTS: Tuple[Variant, ...] = ("full", "no_feature_aug", "no_structure_aug", "no_estimator", "no_gib")
SENSITIVITY_PARAMETERS = ("gamma1", "gamma2", "beta")


def model_name(variant: Variant) -> str:
    return "gagsl" if variant == "full" else f"gagsl_{variant}"


# ==============================================================================
# Datasets
# ==============================================================================

def build_dataset(config: ExperimentConfig) -> Dataset:
    """Materialize the configured dataset; randomness comes from the data stream of the base seed."""
    source = config.dataset
    rng = make_rng(config.base_seed, DATA, source.kind)
    if source.kind == "files":
        return load_dataset(
            source.edge_path, source.feature_path, source.label_path, source.split_path,
            class_count=source.class_count,
        )
    if source.kind == "sklearn":
        return load_sklearn_dataset(source.name, source.knn_k, rng)
    return sbm_generate(
        source.n, source.n_blocks, source.p_in, source.p_out, source.feat_dim, source.feat_shift, rng,
        train_fraction=source.train_fraction, val_fraction=source.val_fraction,
    )


# ==============================================================================
# Trials
# ==============================================================================

@dataclass
class TrialOutcome:
    """Everything one trial hands back to the single writer."""
    index: int
    seed: int
    metrics: Dict[str, TrialMetrics]
    traces: Dict[str, LossReport]
    best_epochs: Dict[str, int]
    attacked_adjacency: np.ndarray = field(repr=False)
    structure: Optional[np.ndarray] = field(default=None, repr=False)
    intra_mean: Optional[float] = None
    inter_mean: Optional[float] = None
    runtime: float = 0.0


def run_trial(config: ExperimentConfig, dataset: Dataset, index: int, seed: int) -> TrialOutcome:
    """One independent trial: poison, augment, train GaGSL (and the GCN baseline), evaluate on test."""
    start = time.perf_counter()
    with stage("attack"):
        attacked = dataset
        for spec in config.attacks:
            attacked = apply_attack(attacked, spec, seed)

    with stage("augment"):
        variant = config.variant
        role_features = None
        if variant != "no_feature_aug":
            role_features = structural_embedding(attacked.graph, config.wavelet).matrix
        diffusion = None
        if variant != "no_structure_aug":
            diffusion = diffuse(attacked.graph, config.diffusion).matrix

    schedule = config.schedule.model_copy(update={"seed": seed})
    with stage("train"):
        result = train(attacked, role_features, diffusion, schedule, config.estimator, variant)
        baseline = train_gcn_baseline(attacked, schedule) if config.baseline else None

    name = model_name(variant)
    with stage("evaluate"):
        labels, mask, classes = attacked.labels, attacked.test_mask, attacked.class_count
        metrics = {name: evaluate(result.logits, labels, mask, classes, seed)}
        traces = {name: result.report}
        best_epochs = {name: result.report.best_epoch}
        if baseline is not None:
            metrics[BASELINE_MODEL] = evaluate(baseline.logits, labels, mask, classes, seed)
            traces[BASELINE_MODEL] = baseline.report
            best_epochs[BASELINE_MODEL] = baseline.report.best_epoch
        intra_mean, inter_mean = intra_inter_mean_weight(result.structure, labels, result.candidate_mask)

    return TrialOutcome(
        index=index,
        seed=seed,
        metrics=metrics,
        traces=traces,
        best_epochs=best_epochs,
        attacked_adjacency=np.array(attacked.graph.adjacency),
        structure=result.structure,
        intra_mean=intra_mean,
        inter_mean=inter_mean,
        runtime=time.perf_counter() - start,
    )


def _log_outcome(tracker: TrialTracker, stage_name: str, outcome: TrialOutcome, attack: Optional[AttackSpec]):
    for model, metrics in outcome.metrics.items():
        tracker.log_trial(
            stage=stage_name,
            trial=outcome.index,
            seed=outcome.seed,
            model=model,
            runtime=outcome.runtime,
            attack=attack.kind if attack else None,
            rate=attack.rate if attack else None,
            auc=metrics.auc,
            f1_macro=metrics.f1_macro,
            f1_micro=metrics.f1_micro,
            best_epoch=outcome.best_epochs[model],
            extra={"intra_mean": outcome.intra_mean, "inter_mean": outcome.inter_mean},
        )


def run_trials(config: ExperimentConfig, dataset: Dataset, tracker: TrialTracker, stage_name: str,
               attack: Optional[AttackSpec] = None) -> List[TrialOutcome]:
    """
    Run config.trials trials, in a process pool when config.workers > 1.

    Results are merged in seed order, so the output does not depend on the pool.
    """
    seeds = trial_seeds(config.base_seed, config.trials)
    outcomes: List[TrialOutcome] = []
    progress = dict(total=len(seeds), desc=stage_name, disable=progress_disabled())

    def record(index: int, seed: int, compute: Callable[[], TrialOutcome]):
        try:
            outcome = compute()
        except StageError as e:
            tracker.log_trial(stage_name, index, seed, model_name(config.variant), 0.0,
                              attack=attack.kind if attack else None, rate=attack.rate if attack else None,
                              success=False, error_message=str(e))
            raise
        _log_outcome(tracker, stage_name, outcome, attack)
        logger.info(
            "%s trial %d (seed %d): %s", stage_name, index, seed,
            ", ".join(f"{m} F1-micro {t.f1_micro:.4f}" for m, t in outcome.metrics.items()),
        )
        outcomes.append(outcome)

    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = pool.map(run_trial, [config] * len(seeds), [dataset] * len(seeds), range(len(seeds)), seeds)
            for index, seed in tqdm(list(enumerate(seeds)), **progress):
                record(index, seed, lambda: next(results))
    else:
        for index, seed in tqdm(list(enumerate(seeds)), **progress):
            record(index, seed, lambda: run_trial(config, dataset, index, seed))
    return outcomes


def _reports(outcomes: Sequence[TrialOutcome], attack: Optional[AttackSpec] = None) -> Dict[str, MetricsReport]:
    models = list(outcomes[0].metrics)
    return {m: aggregate(m, [o.metrics[m] for o in outcomes], attack) for m in models}


def _single_attack(config: ExperimentConfig) -> Optional[AttackSpec]:
    return config.attacks[0] if len(config.attacks) == 1 else None


# ==============================================================================
# Run directory
# ==============================================================================

def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_json(path: Path, payload) -> Path:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def _inventory(run_dir: Path) -> List[str]:
    return sorted(
        str(p.relative_to(run_dir)) for p in run_dir.rglob("*") if p.is_file() and p.name != MANIFEST_FILE
    )


def load_manifest(run_dir) -> RunManifest:
    path = Path(run_dir) / MANIFEST_FILE
    if not path.exists():
        raise ArtifactIntegrityError(path, "manifest is missing")
    try:
        return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise ArtifactIntegrityError(path, f"corrupt manifest ({e.error_count()} errors)")


@contextmanager
def tracked_run(config: ExperimentConfig, command: str) -> Iterator[Tuple[Path, TrialTracker]]:
    """
    Own a run directory for the duration of a command.

    Dataset files are checked first; a missing one fails before the
    directory is created. The manifest is written before any compute and
    finalized afterwards, with status "failed" and the failing stage when a
    StageError escapes.
    """
    with stage("load_config"):
        missing = config.dataset.missing_paths()
        if missing:
            raise ContractViolation(f"dataset files not found: {', '.join(missing)}")
    run_dir = Path(config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        config_hash=config.config_hash(),
        command=command,
        config=config.canonical(),
        trial_seeds=list(trial_seeds(config.base_seed, config.trials)),
        started_at=_now(),
    )
    (run_dir / CONFIG_FILE).write_text(config.canonical_json() + "\n", encoding="utf-8")
    _write_json(run_dir / MANIFEST_FILE, manifest.model_dump(mode="json"))
    logger.info("Run %s: %s in %s (config %s)", command, config.dataset.kind, run_dir, manifest.config_hash[:12])

    try:
        yield run_dir, get_trial_tracker(run_dir)
    except StageError as e:
        manifest.status = "failed"
        manifest.failed_stage = e.stage
        manifest.error = str(e.cause)
        logger.error("Stage '%s' failed: %s", e.stage, e.cause)
        raise
    except Exception as e:
        manifest.status = "failed"
        manifest.error = str(e)
        raise
    else:
        manifest.status = "completed"
    finally:
        manifest.finished_at = _now()
        manifest.files = _inventory(run_dir)
        _write_json(run_dir / MANIFEST_FILE, manifest.model_dump(mode="json"))


# ==============================================================================
# Commands
# ==============================================================================

def run_experiment(config: ExperimentConfig) -> RunManifest:
    """
    Run all trials of one configuration and export its artifacts.

    Writes metrics.json (MetricsReport per model), traces.json (LossReport per
    trial and model), the learned structure of the first trial, the original
    and attacked adjacency, community labels, heatmaps and the weight histogram.
    """
    with tracked_run(config, "run") as (run_dir, tracker):
        with stage("load_dataset"):
            dataset = build_dataset(config)
        outcomes = run_trials(config, dataset, tracker, "run", _single_attack(config))

        with stage("export"):
            reports = _reports(outcomes, _single_attack(config))
            _write_json(run_dir / METRICS_FILE, {m: r.model_dump(mode="json") for m, r in reports.items()})
            _write_json(run_dir / TRACES_FILE, [
                {
                    "trial": o.index,
                    "seed": o.seed,
                    "intra_mean_weight": o.intra_mean,
                    "inter_mean_weight": o.inter_mean,
                    "losses": {m: t.model_dump(mode="json") for m, t in o.traces.items()},
                }
                for o in outcomes
            ])
            first = outcomes[0]
            save_matrix_csv(run_dir / ADJACENCY_FILE, dataset.graph.adjacency)
            if config.attacks:
                save_matrix_csv(run_dir / ATTACKED_FILE, first.attacked_adjacency)
            save_matrix_csv(run_dir / STRUCTURE_FILE, first.structure)
            np.savetxt(run_dir / COMMUNITIES_FILE, dataset.labels, fmt="%d")

        with stage("plot_data"):
            emit_plot_data(run_dir)

        for model, report in reports.items():
            logger.info(
                "%s: F1-macro %.4f +/- %.4f, F1-micro %.4f +/- %.4f, AUC %.4f +/- %.4f", model,
                report.f1_macro.mean, report.f1_macro.std, report.f1_micro.mean, report.f1_micro.std,
                report.auc.mean, report.auc.std,
            )
    return load_manifest(run_dir)


def _sweep_row(model: str, parameter: str, value: float, report: MetricsReport) -> SweepRow:
    return SweepRow(
        model=model,
        parameter=parameter,
        value=value,
        f1_macro_mean=report.f1_macro.mean,
        f1_macro_std=report.f1_macro.std,
        f1_micro_mean=report.f1_micro.mean,
        f1_micro_std=report.f1_micro.std,
        auc_mean=report.auc.mean,
        auc_std=report.auc.std,
    )


def _write_table(run_dir: Path, stem: str, rows: Sequence[SweepRow], reports: Dict[str, Dict]) -> Path:
    path = run_dir / f"{stem}.csv"
    pd.DataFrame([r.model_dump() for r in rows]).to_csv(path, index=False)
    _write_json(run_dir / f"{stem}.json", reports)
    return path


def attack_spec(kind: str, rate: float) -> AttackSpec:
    try:
        return AttackSpec(kind=kind, rate=rate)
    except ValidationError as e:
        raise ContractViolation(f"invalid attack {kind}@{rate}: {e.errors()[0]['msg']}")


def run_attack_sweep(config: ExperimentConfig, kind: str, rates: Sequence[float]) -> List[SweepRow]:
    """
    Per-rate MetricsReport for GaGSL and the plain GCN on the same attacked graphs.

    Writes sweep_<kind>.csv (rate -> metric table) and sweep_<kind>.json.
    """
    config = config.model_copy(update={"baseline": True})
    with tracked_run(config, "sweep") as (run_dir, tracker):
        with stage("validate"):
            specs = [attack_spec(kind, rate) for rate in rates]
        with stage("load_dataset"):
            dataset = build_dataset(config)

        rows: List[SweepRow] = []
        payload: Dict[str, Dict] = {}
        for spec in tqdm(specs, desc=f"{kind} sweep", disable=progress_disabled()):
            rate_config = config.model_copy(update={"attacks": [spec]})
            reports = _reports(run_trials(rate_config, dataset, tracker, f"sweep:{spec.label}", spec), spec)
            payload[spec.label] = {m: r.model_dump(mode="json") for m, r in reports.items()}
            rows.extend(_sweep_row(m, kind, spec.rate, r) for m, r in reports.items())

        with stage("export"):
            _write_table(run_dir, f"sweep_{kind}", rows, payload)
    return rows


def run_sensitivity_sweep(config: ExperimentConfig, parameter: str, values: Sequence[float]) -> List[SweepRow]:
    """GaGSL metrics as gamma1, gamma2 or beta varies; writes sensitivity_<parameter>.csv."""
    config = config.model_copy(update={"baseline": False})
    with tracked_run(config, "sensitivity") as (run_dir, tracker):
        with stage("validate"):
            if parameter not in SENSITIVITY_PARAMETERS:
                raise ContractViolation(f"unknown parameter '{parameter}', expected one of {SENSITIVITY_PARAMETERS}")
            try:
                configs = []
                for value in values:
                    if parameter == "beta":
                        schedule = config.schedule.model_validate({**config.schedule.model_dump(), "beta": value})
                        configs.append(config.model_copy(update={"schedule": schedule}))
                    else:
                        estimator = config.estimator.model_validate({**config.estimator.model_dump(), parameter: value})
                        configs.append(config.model_copy(update={"estimator": estimator}))
            except ValidationError as e:
                raise ContractViolation(f"invalid {parameter} value: {e.errors()[0]['msg']}")
        with stage("load_dataset"):
            dataset = build_dataset(config)

        rows: List[SweepRow] = []
        payload: Dict[str, Dict] = {}
        for value, value_config in tqdm(list(zip(values, configs)), desc=f"{parameter} sensitivity",
                                        disable=progress_disabled()):
            reports = _reports(run_trials(value_config, dataset, tracker, f"sensitivity:{parameter}={value:g}"))
            payload[f"{parameter}={value:g}"] = {m: r.model_dump(mode="json") for m, r in reports.items()}
            rows.extend(_sweep_row(m, parameter, value, r) for m, r in reports.items())

        with stage("export"):
            _write_table(run_dir, f"sensitivity_{parameter}", rows, payload)
    return rows


def run_ablation(config: ExperimentConfig, variants: Sequence[Variant] = ABLATION_VARIANTS) -> List[SweepRow]:
    """The full model and each ablated variant on the same dataset; writes ablation.csv."""
    config = config.model_copy(update={"baseline": False})
    with tracked_run(config, "ablation") as (run_dir, tracker):
        with stage("load_dataset"):
            dataset = build_dataset(config)

        rows: List[SweepRow] = []
        payload: Dict[str, Dict] = {}
        attack = _single_attack(config)
        for index, variant in enumerate(tqdm(variants, desc="ablation", disable=progress_disabled())):
            variant_config = config.model_copy(update={"variant": variant})
            reports = _reports(run_trials(variant_config, dataset, tracker, f"ablation:{variant}", attack), attack)
            payload[variant] = {m: r.model_dump(mode="json") for m, r in reports.items()}
            rows.extend(_sweep_row(m, "variant", index, r) for m, r in reports.items())

        with stage("export"):
            _write_table(run_dir, "ablation", rows, payload)
    return rows


# ==============================================================================
# Plot data
# ==============================================================================

def emit_plot_data(run_dir) -> List[Path]:
    """
    Heatmap CSVs (community probability matrices) and the weight histogram JSON of a run.

    Writes heatmaps of the original, attacked (runs with attacks only) and
    learned structures plus the intra/inter weight histogram of the learned one.

    Raises:
        ArtifactIntegrityError: listing every missing artifact, or naming a corrupt one
    """
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    attacked = bool(manifest.config.get("attacks"))

    required = [ADJACENCY_FILE, STRUCTURE_FILE, COMMUNITIES_FILE] + ([ATTACKED_FILE] if attacked else [])
    missing = [name for name in required if not (run_dir / name).exists()]
    if missing:
        raise ArtifactIntegrityError(run_dir, f"missing artifacts: {', '.join(missing)}")

    try:
        communities = np.loadtxt(run_dir / COMMUNITIES_FILE, dtype=np.int64, ndmin=1)
    except ValueError as e:
        raise ArtifactIntegrityError(run_dir / COMMUNITIES_FILE, f"corrupt community labels ({e})")

    sources = {"original": ADJACENCY_FILE, "attacked": ATTACKED_FILE, "learned": STRUCTURE_FILE}
    if not attacked:
        del sources["attacked"]
    matrices = {}
    for name, file_name in sources.items():
        matrix = load_matrix_csv(run_dir / file_name)
        if matrix.shape != (communities.size, communities.size):
            raise ArtifactIntegrityError(run_dir / file_name, f"shape {matrix.shape} does not match {communities.size} nodes")
        matrices[name] = matrix

    written = [save_matrix_csv(run_dir / HEATMAP_FILES[name], community_prob_matrix(m, communities))
               for name, m in matrices.items()]
    try:
        histogram = weight_histogram(matrices["learned"], communities)
    except ContractViolation as e:
        raise ArtifactIntegrityError(run_dir / STRUCTURE_FILE, str(e))
    written.append(_write_json(run_dir / HISTOGRAM_FILE, histogram.model_dump(mode="json")))
    logger.info("Plot data written: %s", ", ".join(p.name for p in written))
    return written
