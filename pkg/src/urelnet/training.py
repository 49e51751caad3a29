"""Training and evaluation runs: pools, batches, optimization, reports.

A run builds the training pair pools once (features precomputed as stacked
matrices), then repeats sample -> forward -> joint loss -> backward -> Adam.
The four loss terms are logged every step; with a validation split present,
the parameters with the best validation recall are kept. Runs are fully
reproducible from their seeds.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import Dataset
from .errors import DivergenceError, InsufficientDataError, UndefinedMetricError
from .evaluation import EvalConfig, ModelScorer, evaluate_scenes
from .features import FeatureExtractor, FeatureMatrix, build_triplet_statistics
from .model import MODAL_LINGUISTIC_EXTERNAL, ModelConfig, build_model, required_streams
from .nn import AdamState, adam_step
from .pairs import BatchSpec, PairSampler, generate_for_scene, gt_pairs_for_scene


@dataclass(frozen=True)
class Schedule:
    base_lr: float
    decay_rate: float
    decay_interval: int


SCHEDULE_PRESETS = {
    "vrd": Schedule(base_lr=3e-4, decay_rate=0.5, decay_interval=4000),
    "vg": Schedule(base_lr=3e-4, decay_rate=0.7, decay_interval=35000),
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a training run needs beyond the dataset itself."""

    model: ModelConfig
    task: str = "relation"
    batch_size: int = 32
    undetermined_ratio: float = 3.0
    schedule: Schedule = SCHEDULE_PRESETS["vrd"]
    epochs: int = 10
    steps: Optional[int] = None
    seed: int = 0
    validation_interval: Optional[int] = None
    validation_n: int = 50
    per_scene_undetermined_cap: Optional[int] = None


def make_run_config(model: ModelConfig, task: str = "relation", **overrides) -> RunConfig:
    """Apply the task presets: the predicate task trains on ground-truth
    pairs only, with zero undetermined weights and no undetermined quota."""
    if task == "predicate":
        model = replace(model, rel_undetermined_weight=0.0, dc_loss_weight=0.0)
        overrides.setdefault("undetermined_ratio", 0.0)
    return RunConfig(model=model, task=task, **overrides)


def build_extractor(dataset: Dataset) -> FeatureExtractor:
    stats = build_triplet_statistics(dataset.split("train"), dataset.vocabulary)
    return FeatureExtractor(dataset.features, stats, dataset.embeddings, dataset.vocabulary)


@dataclass
class TrainingPool:
    """Precomputed features and labels for every training pair."""

    features: FeatureMatrix
    labels: np.ndarray
    determinate: np.ndarray
    determinate_indices: np.ndarray
    undetermined_indices: np.ndarray


def build_training_pool(
    dataset: Dataset, extractor: FeatureExtractor, run_config: RunConfig
) -> TrainingPool:
    m = dataset.vocabulary.predicate_count
    streams = required_streams(run_config.model)
    cap_rng = np.random.default_rng(run_config.seed)
    matrices, labels, mask = [], [], []
    for scene in dataset.split("train"):
        if run_config.task == "predicate":
            pairs = gt_pairs_for_scene(scene, m, annotated_only=True)
        else:
            pairs = generate_for_scene(scene, m)
            cap = run_config.per_scene_undetermined_cap
            if cap is not None:
                determinate = [p for p in pairs if p.determinate]
                undetermined = [p for p in pairs if not p.determinate]
                if len(undetermined) > cap:
                    keep = cap_rng.choice(len(undetermined), size=cap, replace=False)
                    undetermined = [undetermined[i] for i in sorted(keep)]
                pairs = determinate + undetermined
        if not pairs:
            continue
        matrices.append(extractor.matrix(pairs, scene, streams=streams))
        labels.extend(p.predicate_labels for p in pairs)
        mask.extend(p.determinate for p in pairs)
    if not matrices:
        raise InsufficientDataError("no training pairs could be generated")
    features = FeatureMatrix.concatenate(matrices)
    determinate = np.array(mask, dtype=bool)
    return TrainingPool(
        features=features,
        labels=np.stack(labels),
        determinate=determinate,
        determinate_indices=np.flatnonzero(determinate),
        undetermined_indices=np.flatnonzero(~determinate),
    )


@dataclass
class TrainingResult:
    model: object
    run_config: RunConfig
    log_records: List[dict]
    total_steps: int
    best_validation_recall: Optional[float] = None


def _steps_per_epoch(pool: TrainingPool, spec: BatchSpec) -> int:
    if spec.determinate_quota > 0:
        return max(1, math.ceil(len(pool.determinate_indices) / spec.determinate_quota))
    return max(1, math.ceil(len(pool.undetermined_indices) / spec.undetermined_quota))


def run_training(dataset: Dataset, run_config: RunConfig) -> TrainingResult:
    extractor = build_extractor(dataset)
    pool = build_training_pool(dataset, extractor, run_config)
    spec = BatchSpec(
        batch_size=run_config.batch_size,
        undetermined_ratio=run_config.undetermined_ratio,
        rng_seed=run_config.seed,
    )
    sampler = PairSampler(
        pool.determinate_indices.tolist(), pool.undetermined_indices.tolist(), spec
    )
    model = build_model(run_config.model, np.random.default_rng(run_config.seed))
    params = model.parameters()
    adam = AdamState.create(
        params,
        base_lr=run_config.schedule.base_lr,
        decay_rate=run_config.schedule.decay_rate,
        decay_interval=run_config.schedule.decay_interval,
    )
    per_epoch = _steps_per_epoch(pool, spec)
    total_steps = run_config.steps if run_config.steps is not None else run_config.epochs * per_epoch
    val_interval = run_config.validation_interval or per_epoch
    val_scenes = dataset.split("validation")

    records: List[dict] = []
    best_recall: Optional[float] = None
    best_params: Optional[Dict[str, np.ndarray]] = None

    def validate() -> float:
        scorer = ModelScorer(model, extractor)
        recalls = evaluate_scenes(
            val_scenes,
            scorer,
            EvalConfig(task=run_config.task, n_values=(run_config.validation_n,)),
            dataset.vocabulary.predicate_count,
        )
        return recalls[str(run_config.validation_n)]

    for step in range(total_steps):
        idx = np.array(sampler.sample_batch(), dtype=int)
        lr = adam.learning_rate()
        loss, terms, grads = model.loss_and_gradients(
            pool.features.rows(idx), pool.labels[idx], pool.determinate[idx]
        )
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss {loss!r} at step {step}")
        adam_step(params, grads, adam)
        record = {"step": step, "learning_rate": lr, "loss": loss}
        record.update(terms)
        records.append(record)
        if val_scenes and (step + 1) % val_interval == 0:
            recall = validate()
            records.append({"step": step, "validation_recall": recall})
            if best_recall is None or recall > best_recall:
                best_recall = recall
                best_params = copy.deepcopy(params)
    if best_params is not None:
        model.load_parameters(best_params)
    return TrainingResult(
        model=model,
        run_config=run_config,
        log_records=records,
        total_steps=total_steps,
        best_validation_recall=best_recall,
    )


def write_log(records: Sequence[dict], path) -> None:
    """JSONL, sorted keys; byte-identical across identical runs."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def check_model_compatibility(config: ModelConfig, dataset: Dataset) -> None:
    """Model/dataset dimension mismatches surface as a load error."""
    from .errors import CheckpointError

    problems = []
    if config.predicate_count != dataset.vocabulary.predicate_count:
        problems.append(
            f"predicate_count {config.predicate_count} != {dataset.vocabulary.predicate_count}"
        )
    if config.object_count != dataset.vocabulary.object_count:
        problems.append(
            f"object_count {config.object_count} != {dataset.vocabulary.object_count}"
        )
    if config.visual_dim != dataset.features.dim:
        problems.append(f"visual_dim {config.visual_dim} != {dataset.features.dim}")
    if MODAL_LINGUISTIC_EXTERNAL in config.enabled_modals:
        if dataset.embeddings is None:
            problems.append("model uses external linguistic features but the dataset has no embeddings")
        elif config.embedding_dim != dataset.embeddings.dim:
            problems.append(
                f"embedding_dim {config.embedding_dim} != {dataset.embeddings.dim}"
            )
    if problems:
        raise CheckpointError("model does not fit dataset: " + "; ".join(problems))


def run_evaluation(
    dataset: Dataset,
    model,
    tasks: Sequence[str] = ("relation",),
    n_values: Tuple[int, ...] = (50, 100),
    k: int = 1,
    zero_shot: bool = False,
    macro_average: bool = False,
    split: str = "test",
) -> dict:
    """Metrics report over the chosen split; stable keys for CI assertions.

    A zero-shot block with no unseen triplet types degrades to an error
    entry without affecting the other blocks.
    """
    check_model_compatibility(model.config, dataset)
    scenes = dataset.split(split)
    if not scenes:
        raise UndefinedMetricError(f"no scenes in split {split!r}")
    extractor = build_extractor(dataset)
    scorer = ModelScorer(model, extractor)
    training_types = extractor.stats.triplet_types()
    report = {"schema_version": 1, "split": split, "k": k, "tasks": {}}
    for task in tasks:
        config = EvalConfig(task=task, n_values=tuple(n_values), k=k, macro_average=macro_average)
        block = {
            "recall": evaluate_scenes(
                scenes, scorer, config, dataset.vocabulary.predicate_count
            )
        }
        if zero_shot:
            zs_config = replace(config, zero_shot_only=True)
            try:
                block["zero_shot"] = evaluate_scenes(
                    scenes,
                    scorer,
                    zs_config,
                    dataset.vocabulary.predicate_count,
                    training_types=training_types,
                )
            except UndefinedMetricError as exc:
                block["zero_shot"] = {"error": exc.category, "message": str(exc)}
        report["tasks"][task] = block
    return report
