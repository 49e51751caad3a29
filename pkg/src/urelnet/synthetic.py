"""Seeded synthetic scenes with planted relational structure.

Each predicate gets a characteristic geometric layout (object placed
below/above/beside/inside/... the subject) and a directional category
affinity (preferred subject-group -> object-group), so spatial, internal
linguistic, and external linguistic features all carry learnable signal.
Detections are noisy copies of the ground-truth objects (box jitter, label
flips, misses) plus spurious boxes, which populates the undetermined pool.
A configurable number of triplet types is held out of the training split
and injected only into test scenes for zero-shot evaluation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np

from .dataset import Dataset
from .features import EmbeddingTable, FeatureStore
from .pairs import detection_union_key, gt_feature_key, gt_union_key
from .scene import (
    AnnotatedTriplet,
    BoundingBox,
    DetectedObject,
    SceneRecord,
    Vocabulary,
    union_box,
)

CATEGORY_GROUPS = 4
LAYOUT_COUNT = 8


@dataclass(frozen=True)
class SyntheticConfig:
    object_count: int = 20
    predicate_count: int = 8
    train_scenes: int = 400
    validation_scenes: int = 0
    test_scenes: int = 100
    min_relations: int = 4
    max_relations: int = 6
    visual_dim: int = 24
    embedding_dim: int = 16
    image_width: float = 640.0
    image_height: float = 480.0
    box_jitter: float = 0.08
    label_flip_rate: float = 0.05
    miss_rate: float = 0.03
    spurious_rate: float = 2.0
    affinity_strength: float = 0.8
    multi_label_rate: float = 0.08
    zero_shot_types: int = 5
    zero_shot_rate: float = 0.15
    visual_noise: float = 0.35
    embedding_noise: float = 0.3
    seed: int = 7

    def __post_init__(self):
        if self.object_count < CATEGORY_GROUPS:
            raise ValueError(f"object_count must be >= {CATEGORY_GROUPS}")
        if self.predicate_count < 1:
            raise ValueError("predicate_count must be >= 1")
        if self.min_relations < 1 or self.max_relations < self.min_relations:
            raise ValueError("invalid relations-per-scene range")


def _hash_vector(seed: int, tag: str, dim: int, scale: float) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}|{tag}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.standard_normal(dim) * scale


def _box_tag(box: BoundingBox) -> str:
    return "{:.4f},{:.4f},{:.4f},{:.4f}".format(*box.as_tuple())


def _unit_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    rows = rng.standard_normal((count, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _clamp_box(x1: float, y1: float, x2: float, y2: float, w: float, h: float) -> BoundingBox:
    """Shift a box into [0, w] x [0, h], preserving its extent where possible."""
    if x1 < 0:
        x2 -= x1
        x1 = 0.0
    if x2 > w:
        x1 -= x2 - w
        x2 = w
    if y1 < 0:
        y2 -= y1
        y1 = 0.0
    if y2 > h:
        y1 -= y2 - h
        y2 = h
    x1, y1 = max(x1, 0.0), max(y1, 0.0)
    if x2 - x1 < 2.0:
        x2 = min(w, x1 + 2.0)
        x1 = x2 - 2.0
    if y2 - y1 < 2.0:
        y2 = min(h, y1 + 2.0)
        y1 = y2 - 2.0
    return BoundingBox(x1, y1, x2, y2)


def _layout_object_box(
    layout: int, subject: BoundingBox, rng: np.random.Generator
) -> BoundingBox:
    """Object box in the layout's characteristic position relative to the subject."""
    w, h = subject.width, subject.height
    x1, y1, x2, y2 = subject.as_tuple()
    ow = w * rng.uniform(0.7, 1.3)
    oh = h * rng.uniform(0.7, 1.3)
    gx = rng.uniform(4.0, 0.3 * w)
    gy = rng.uniform(4.0, 0.3 * h)
    dx = rng.uniform(-0.2, 0.2) * w
    if layout == 0:    # object directly below
        return BoundingBox(x1 + dx, y2 + gy, x1 + dx + ow, y2 + gy + oh)
    if layout == 1:    # object directly above
        return BoundingBox(x1 + dx, y1 - gy - oh, x1 + dx + ow, y1 - gy)
    if layout == 2:    # object to the right
        return BoundingBox(x2 + gx, y1 + dx, x2 + gx + ow, y1 + dx + oh)
    if layout == 3:    # object to the left
        return BoundingBox(x1 - gx - ow, y1 + dx, x1 - gx, y1 + dx + oh)
    if layout == 4:    # object surrounds the subject
        mx = w * rng.uniform(0.15, 0.35)
        my = h * rng.uniform(0.15, 0.35)
        return BoundingBox(x1 - mx, y1 - my, x2 + mx, y2 + my)
    if layout == 5:    # object inside the subject
        mx = w * rng.uniform(0.15, 0.3)
        my = h * rng.uniform(0.15, 0.3)
        return BoundingBox(x1 + mx, y1 + my, x2 - mx, y2 - my)
    if layout == 6:    # diagonal overlap
        sx = 0.5 * w * (1 if rng.random() < 0.5 else -1)
        sy = 0.5 * h * (1 if rng.random() < 0.5 else -1)
        return BoundingBox(x1 + sx, y1 + sy, x2 + sx, y2 + sy)
    # layout 7: close beside, similar size
    ow = w * rng.uniform(0.9, 1.1)
    oh = h * rng.uniform(0.9, 1.1)
    return BoundingBox(x2 + 3.0, y1, x2 + 3.0 + ow, y1 + oh)


class _Blueprint:
    """Deterministic dataset-level structure drawn once from the seed."""

    def __init__(self, config: SyntheticConfig, rng: np.random.Generator):
        n, m = config.object_count, config.predicate_count
        self.groups = np.arange(n) % CATEGORY_GROUPS
        self.layouts = np.arange(m) % LAYOUT_COUNT
        self.affinity = [
            (int(rng.integers(CATEGORY_GROUPS)), int(rng.integers(CATEGORY_GROUPS)))
            for _ in range(m)
        ]
        self.prototypes = _unit_rows(rng, n, config.visual_dim)
        group_dirs = _unit_rows(rng, CATEGORY_GROUPS, config.embedding_dim)
        self.embeddings = group_dirs[self.groups] + rng.standard_normal(
            (n, config.embedding_dim)
        ) * config.embedding_noise
        self.held_out = self._sample_held_out(config, rng)

    def categories_in_group(self, group: int) -> np.ndarray:
        return np.flatnonzero(self.groups == group)

    def sample_type(
        self, config: SyntheticConfig, rng: np.random.Generator
    ) -> Tuple[int, int, int]:
        predicate = int(rng.integers(config.predicate_count))
        gs, go = self.affinity[predicate]
        if rng.random() < config.affinity_strength:
            s_cat = int(rng.choice(self.categories_in_group(gs)))
            o_cat = int(rng.choice(self.categories_in_group(go)))
        else:
            s_cat = int(rng.integers(config.object_count))
            o_cat = int(rng.integers(config.object_count))
        return s_cat, predicate, o_cat

    def _sample_held_out(
        self, config: SyntheticConfig, rng: np.random.Generator
    ) -> List[Tuple[int, int, int]]:
        held: Set[Tuple[int, int, int]] = set()
        attempts = 0
        while len(held) < config.zero_shot_types and attempts < 1000:
            held.add(self.sample_type(config, rng))
            attempts += 1
        return sorted(held)


def _build_scene(
    image_id: str,
    split: str,
    config: SyntheticConfig,
    blueprint: _Blueprint,
    rng: np.random.Generator,
) -> SceneRecord:
    w, h = config.image_width, config.image_height
    held_out = set(blueprint.held_out)
    annotations: List[AnnotatedTriplet] = []
    n_rel = int(rng.integers(config.min_relations, config.max_relations + 1))
    for _ in range(n_rel):
        if split == "test" and held_out and rng.random() < config.zero_shot_rate:
            s_cat, predicate, o_cat = blueprint.held_out[
                int(rng.integers(len(blueprint.held_out)))
            ]
        else:
            s_cat, predicate, o_cat = blueprint.sample_type(config, rng)
            tries = 0
            while split != "test" and (s_cat, predicate, o_cat) in held_out and tries < 50:
                s_cat, predicate, o_cat = blueprint.sample_type(config, rng)
                tries += 1
        sw = rng.uniform(40.0, 120.0)
        sh = rng.uniform(40.0, 120.0)
        subject = BoundingBox(0.0, 0.0, sw, sh)
        obj = _layout_object_box(int(blueprint.layouts[predicate]), subject, rng)
        lo_x = min(subject.x_min, obj.x_min)
        lo_y = min(subject.y_min, obj.y_min)
        hi_x = max(subject.x_max, obj.x_max)
        hi_y = max(subject.y_max, obj.y_max)
        dx = rng.uniform(-lo_x, w - hi_x) if w - hi_x > -lo_x else -lo_x
        dy = rng.uniform(-lo_y, h - hi_y) if h - hi_y > -lo_y else -lo_y
        subject = _clamp_box(
            subject.x_min + dx, subject.y_min + dy, subject.x_max + dx, subject.y_max + dy, w, h
        )
        obj = _clamp_box(obj.x_min + dx, obj.y_min + dy, obj.x_max + dx, obj.y_max + dy, w, h)
        annotations.append(AnnotatedTriplet(subject, s_cat, predicate, obj, o_cat))
        if rng.random() < config.multi_label_rate and config.predicate_count > 1:
            other = int(rng.integers(config.predicate_count - 1))
            if other >= predicate:
                other += 1
            annotations.append(AnnotatedTriplet(subject, s_cat, other, obj, o_cat))

    # Noisy detections: jittered ground-truth objects plus spurious boxes.
    seen: Dict[Tuple, Tuple[BoundingBox, int]] = {}
    for ann in annotations:
        for box, cat in ((ann.subject_box, ann.subject_category), (ann.object_box, ann.object_category)):
            seen.setdefault((box.as_tuple(), cat), (box, cat))
    detections: List[Tuple[DetectedObject, int]] = []  # (detection, true category)
    for box, cat in seen.values():
        if rng.random() < config.miss_rate:
            continue
        j = config.box_jitter
        bw, bh = box.width, box.height
        noisy = _clamp_box(
            box.x_min + rng.uniform(-j, j) * bw,
            box.y_min + rng.uniform(-j, j) * bh,
            box.x_max + rng.uniform(-j, j) * bw,
            box.y_max + rng.uniform(-j, j) * bh,
            w,
            h,
        )
        label = cat
        if rng.random() < config.label_flip_rate and config.object_count > 1:
            label = int(rng.integers(config.object_count - 1))
            if label >= cat:
                label += 1
        confidence = float(rng.uniform(0.55, 0.98))
        detections.append((DetectedObject(noisy, label, confidence), cat))
    for _ in range(int(rng.poisson(config.spurious_rate))):
        bw = rng.uniform(30.0, 100.0)
        bh = rng.uniform(30.0, 100.0)
        bx = rng.uniform(0.0, w - bw)
        by = rng.uniform(0.0, h - bh)
        cat = int(rng.integers(config.object_count))
        detections.append(
            (
                DetectedObject(
                    BoundingBox(bx, by, bx + bw, by + bh), cat, float(rng.uniform(0.25, 0.8))
                ),
                cat,
            )
        )
    final = tuple(
        DetectedObject(d.box, d.category, d.confidence, feature_key=f"{image_id}|det|{i}")
        for i, (d, _) in enumerate(detections)
    )
    scene = SceneRecord(
        image_id=image_id,
        width=w,
        height=h,
        detections=final,
        annotations=tuple(annotations),
        split=split,
    )
    return scene, [true for _, true in detections]


def _scene_features(
    scene: SceneRecord,
    true_categories: Sequence[int],
    config: SyntheticConfig,
    blueprint: _Blueprint,
    store: FeatureStore,
) -> None:
    """Visual vectors: category prototype plus box-hash noise for objects
    (label flips keep the true category's prototype), pure hash noise for
    union boxes."""
    seed = config.seed

    def box_vector(box: BoundingBox, category: int) -> np.ndarray:
        noise = _hash_vector(
            seed, f"{scene.image_id}|{_box_tag(box)}", config.visual_dim, config.visual_noise
        )
        return blueprint.prototypes[category] + noise

    for i, det in enumerate(scene.detections):
        store.add(det.feature_key, box_vector(det.box, true_categories[i]))
    gt_objects = scene.gt_objects()
    for i, (box, cat) in enumerate(gt_objects):
        store.add(gt_feature_key(scene.image_id, i), box_vector(box, cat))
    # Union-box vectors are content-free noise derived from the box and image.
    for boxes, key_fn in (
        ([d.box for d in scene.detections], detection_union_key),
        ([b for b, _ in gt_objects], gt_union_key),
    ):
        for i in range(len(boxes)):
            for j in range(len(boxes)):
                if i == j:
                    continue
                u = union_box(boxes[i], boxes[j])
                store.add(
                    key_fn(scene.image_id, i, j),
                    _hash_vector(
                        seed,
                        f"{scene.image_id}|union|{_box_tag(u)}",
                        config.visual_dim,
                        config.visual_noise,
                    ),
                )


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Seeded, reproducible dataset with ground truth, noisy detections,
    visual features, and an embedding table."""
    rng = np.random.default_rng(config.seed)
    blueprint = _Blueprint(config, rng)
    vocab = Vocabulary(
        tuple(f"obj{i:02d}" for i in range(config.object_count)),
        tuple(f"rel{j}" for j in range(config.predicate_count)),
    )
    store = FeatureStore(config.visual_dim, {})
    scenes: List[SceneRecord] = []
    for split, count in (
        ("train", config.train_scenes),
        ("validation", config.validation_scenes),
        ("test", config.test_scenes),
    ):
        for i in range(count):
            scene, true_categories = _build_scene(
                f"synth-{split}-{i:04d}", split, config, blueprint, rng
            )
            _scene_features(scene, true_categories, config, blueprint, store)
            scenes.append(scene)
    embeddings = EmbeddingTable(
        {vocab.object_names[i]: blueprint.embeddings[i].copy() for i in range(config.object_count)},
        config.embedding_dim,
    )
    return Dataset(vocabulary=vocab, scenes=scenes, features=store, embeddings=embeddings)


def held_out_types(config: SyntheticConfig) -> List[Tuple[int, int, int]]:
    """The triplet types excluded from this configuration's training split."""
    rng = np.random.default_rng(config.seed)
    return _Blueprint(config, rng).held_out
