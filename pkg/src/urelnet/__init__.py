"""Visual relationship detection with undetermined-relationship learning."""

from .scene import (
    AnnotatedTriplet,
    BoundingBox,
    DetectedObject,
    SceneRecord,
    Vocabulary,
    enumerate_pairs,
    iou,
    union_box,
)
from .pairs import BatchSpec, ObjectPair, PairSampler, PairStatus, classify_pair, generate_for_scene
from .features import (
    EmbeddingTable,
    FeatureBundle,
    FeatureExtractor,
    FeatureStore,
    TripletStatistics,
    build_triplet_statistics,
    external_linguistic,
    internal_linguistic,
    spatial_features,
)
from .model import InferringModel, ModelConfig, PairPrediction, RelationNetwork, build_model, joint_loss, score_relation
from .evaluation import EvalConfig, PredictionSet, match_predictions, predict_scene, recall_at_n, zero_shot_filter
from .dataset import Dataset, load_dataset, save_dataset
from .synthetic import SyntheticConfig, generate_synthetic
from .training import RunConfig, Schedule, run_evaluation, run_training
from .checkpoint import load_checkpoint, load_model, save_checkpoint

__all__ = [
    "AnnotatedTriplet",
    "BatchSpec",
    "BoundingBox",
    "Dataset",
    "DetectedObject",
    "EmbeddingTable",
    "EvalConfig",
    "FeatureBundle",
    "FeatureExtractor",
    "FeatureStore",
    "InferringModel",
    "ModelConfig",
    "ObjectPair",
    "PairPrediction",
    "PairSampler",
    "PairStatus",
    "PredictionSet",
    "RelationNetwork",
    "RunConfig",
    "SceneRecord",
    "Schedule",
    "SyntheticConfig",
    "TripletStatistics",
    "Vocabulary",
    "build_model",
    "build_triplet_statistics",
    "classify_pair",
    "enumerate_pairs",
    "external_linguistic",
    "generate_for_scene",
    "generate_synthetic",
    "internal_linguistic",
    "iou",
    "joint_loss",
    "load_checkpoint",
    "load_dataset",
    "load_model",
    "match_predictions",
    "predict_scene",
    "recall_at_n",
    "run_evaluation",
    "run_training",
    "save_checkpoint",
    "save_dataset",
    "score_relation",
    "spatial_features",
    "union_box",
    "zero_shot_filter",
]

__version__ = "0.1.0"
