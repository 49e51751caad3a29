"""Prediction ranking, ground-truth matching, and recall@N.

The three tasks differ in where candidate pairs come from and in what a
hit requires: the predicate task pairs ground-truth objects and checks
categories and predicate only; the phrase task checks IoU of the union
boxes; the relation task checks both individual box IoUs. Evaluation
thresholds are inclusive (>= 0.5), unlike the strict generator threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Set, Tuple

import numpy as np

from .errors import DimensionError, DivergenceError, UndefinedMetricError
from .features import FeatureExtractor
from .pairs import ObjectPair, generate_for_scene, gt_pairs_for_scene
from .scene import AnnotatedTriplet, BoundingBox, SceneRecord, iou, union_box

TASKS = ("predicate", "phrase", "relation")


@dataclass(frozen=True)
class EvalConfig:
    task: str = "relation"
    n_values: Tuple[int, ...] = (50, 100)
    k: int = 1
    iou_threshold: float = 0.5
    zero_shot_only: bool = False
    macro_average: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if any(n <= 0 for n in self.n_values):
            raise ValueError("N values must be positive")


@dataclass(frozen=True)
class PredictedTriplet:
    """One ranked output triplet; pair_index preserves the enumeration order
    for deterministic tie-breaking."""

    subject_box: BoundingBox
    subject_category: int
    predicate: int
    object_box: BoundingBox
    object_category: int
    score: float
    pair_index: int


@dataclass
class PredictionSet:
    """Ranked triplets for one image, highest score first; ties broken by
    pair enumeration index then predicate index."""

    image_id: str
    triplets: List[PredictedTriplet]


# Scorer protocol: callable(pairs, scene) -> (len(pairs), M) relation scores.
Scorer = Callable[[Sequence[ObjectPair], SceneRecord], np.ndarray]


class ModelScorer:
    """Scores pairs with a trained model: assembles the features the model
    consumes, runs forward, and multiplies in the detector confidences."""

    def __init__(self, model, extractor: FeatureExtractor):
        from .model import required_streams

        self.model = model
        self.extractor = extractor
        self.streams = required_streams(model.config)

    def __call__(self, pairs: Sequence[ObjectPair], scene: SceneRecord) -> np.ndarray:
        features = self.extractor.matrix(pairs, scene, streams=self.streams)
        subject_confs = np.array([p.subject.confidence for p in pairs])
        object_confs = np.array([p.object.confidence for p in pairs])
        return self.model.relation_scores(features, subject_confs, object_confs)


class UniformRandomScorer:
    """Baseline: uniform random scores, deterministic per (seed, image id)."""

    def __init__(self, predicate_count: int, seed: int = 0):
        self.predicate_count = predicate_count
        self.seed = seed

    def __call__(self, pairs: Sequence[ObjectPair], scene: SceneRecord) -> np.ndarray:
        import zlib

        image_seed = zlib.crc32(scene.image_id.encode("utf-8"))
        rng = np.random.default_rng((self.seed, image_seed))
        return rng.uniform(size=(len(pairs), self.predicate_count))


def candidate_pairs(scene: SceneRecord, task: str, predicate_count: int) -> List[ObjectPair]:
    """Pairs to score: ground-truth object pairs (confidence 1) for the
    predicate task, detector pairs otherwise."""
    if task == "predicate":
        return gt_pairs_for_scene(scene, predicate_count, annotated_only=False)
    return generate_for_scene(scene, predicate_count)


def predict_scene(
    scene: SceneRecord,
    scorer: Scorer,
    task: str = "relation",
    k: int = 1,
    predicate_count: int | None = None,
    pairs: Sequence[ObjectPair] | None = None,
) -> PredictionSet:
    """Rank the top-k predicates of every candidate pair in one image."""
    if pairs is None:
        if predicate_count is None:
            raise ValueError("predicate_count is required when pairs are not given")
        pairs = candidate_pairs(scene, task, predicate_count)
    if not pairs:
        return PredictionSet(scene.image_id, [])
    scores = np.asarray(scorer(pairs, scene), dtype=np.float64)
    if scores.shape[0] != len(pairs):
        raise DimensionError(
            f"scorer returned {scores.shape[0]} rows for {len(pairs)} pairs"
        )
    if not np.isfinite(scores).all():
        raise DivergenceError(f"non-finite relation scores for image {scene.image_id!r}")
    triplets = []
    for idx, pair in enumerate(pairs):
        row = scores[idx]
        top = np.argsort(-row, kind="stable")[:k]
        for predicate in top:
            triplets.append(
                PredictedTriplet(
                    subject_box=pair.subject.box,
                    subject_category=pair.subject.category,
                    predicate=int(predicate),
                    object_box=pair.object.box,
                    object_category=pair.object.category,
                    score=float(row[predicate]),
                    pair_index=idx,
                )
            )
    triplets.sort(key=lambda t: (-t.score, t.pair_index, t.predicate))
    return PredictionSet(scene.image_id, triplets)


def _hit_condition(
    pred: PredictedTriplet, gt: AnnotatedTriplet, task: str, threshold: float
) -> bool:
    if (
        pred.predicate != gt.predicate
        or pred.subject_category != gt.subject_category
        or pred.object_category != gt.object_category
    ):
        return False
    if task == "predicate":
        # Boxes come from the ground truth itself; categories and predicate decide.
        return True
    if task == "phrase":
        pred_union = union_box(pred.subject_box, pred.object_box)
        gt_union = union_box(gt.subject_box, gt.object_box)
        return iou(pred_union, gt_union) >= threshold
    return (
        iou(pred.subject_box, gt.subject_box) >= threshold
        and iou(pred.object_box, gt.object_box) >= threshold
    )


def match_predictions(
    predictions: PredictionSet,
    ground_truth: Sequence[AnnotatedTriplet],
    task: str = "relation",
    iou_threshold: float = 0.5,
) -> List[bool]:
    """Greedy matching in rank order; each ground-truth triplet is consumed
    by at most one prediction (first eligible in annotation order)."""
    consumed = [False] * len(ground_truth)
    hits = []
    for pred in predictions.triplets:
        hit = False
        for g, gt in enumerate(ground_truth):
            if consumed[g]:
                continue
            if _hit_condition(pred, gt, task, iou_threshold):
                consumed[g] = True
                hit = True
                break
        hits.append(hit)
    return hits


def recall_at_n(
    image_hits: Sequence[Sequence[bool]],
    gt_counts: Sequence[int],
    n: int,
    macro_average: bool = False,
) -> float:
    """Fraction of ground-truth triplets recovered among each image's top n.

    Micro-averaged by default (total hits / total ground truth); the macro
    flag averages per-image recalls instead.
    """
    if len(image_hits) != len(gt_counts):
        raise ValueError("image_hits and gt_counts must align")
    if macro_average:
        recalls = [
            sum(hits[:n]) / count
            for hits, count in zip(image_hits, gt_counts)
            if count > 0
        ]
        if not recalls:
            raise UndefinedMetricError("no image has ground-truth triplets")
        return float(np.mean(recalls))
    total_gt = sum(gt_counts)
    if total_gt == 0:
        raise UndefinedMetricError("no ground-truth triplets in the evaluation set")
    total_hits = sum(sum(hits[:n]) for hits in image_hits)
    return total_hits / total_gt


def zero_shot_filter(
    ground_truth: Sequence[AnnotatedTriplet],
    training_types: Set[Tuple[int, int, int]],
) -> List[AnnotatedTriplet]:
    """Keep only triplets whose category-level type never occurs in training."""
    return [gt for gt in ground_truth if gt.type_key() not in training_types]


def evaluate_scenes(
    scenes: Sequence[SceneRecord],
    scorer: Scorer,
    config: EvalConfig,
    predicate_count: int,
    training_types: Set[Tuple[int, int, int]] | None = None,
) -> Dict[str, float]:
    """Recall@N over a scene collection for one task.

    With zero_shot_only, ground truth is filtered to triplet types unseen in
    training before counting.
    """
    if config.zero_shot_only and training_types is None:
        raise ValueError("zero-shot evaluation requires the training triplet types")
    image_hits = []
    gt_counts = []
    for scene in scenes:
        gt = list(scene.annotations)
        if config.zero_shot_only:
            gt = zero_shot_filter(gt, training_types)
        predictions = predict_scene(
            scene, scorer, task=config.task, k=config.k, predicate_count=predicate_count
        )
        image_hits.append(match_predictions(predictions, gt, config.task, config.iou_threshold))
        gt_counts.append(len(gt))
    return {
        str(n): recall_at_n(image_hits, gt_counts, n, config.macro_average)
        for n in config.n_values
    }
