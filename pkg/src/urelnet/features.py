"""Per-pair feature extraction: visual (ingested), spatial, linguistic.

Visual vectors are ingested from a feature store, never computed here.
Spatial features are the 8 closed-form union-relative box offsets. The
internal linguistic feature is a smoothed predicate distribution estimated
from training-set triplet frequencies; the external one averages word
vectors of the (lowercased) category name tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Set, Tuple

import numpy as np

from .errors import DatasetValidationError, DimensionError, GeometryError, IngestionError
from .pairs import ObjectPair
from .scene import BoundingBox, SceneRecord, Vocabulary, union_box

SPATIAL_DIM = 8

# Canonical stream order used for batched matrices and model wiring.
STREAMS = (
    "visual_subject",
    "visual_object",
    "visual_union",
    "spatial",
    "external_subject",
    "external_object",
    "internal",
)


def spatial_features(subject: BoundingBox, obj: BoundingBox) -> np.ndarray:
    """8-vector of subject and object corner offsets relative to their union.

    Entries are (min-corner and max-corner offsets) / union extent, subject
    first then object. Invariant under joint translation and uniform
    scaling; swapping the roles swaps the two halves.
    """
    u = union_box(subject, obj)
    w, h = u.width, u.height
    if w <= 0 or h <= 0:
        raise GeometryError(f"degenerate union box {u.as_tuple()}")
    return np.array(
        [
            (subject.x_min - u.x_min) / w,
            (subject.y_min - u.y_min) / h,
            (subject.x_max - u.x_max) / w,
            (subject.y_max - u.y_max) / h,
            (obj.x_min - u.x_min) / w,
            (obj.y_min - u.y_min) / h,
            (obj.x_max - u.x_max) / w,
            (obj.y_max - u.y_max) / h,
        ],
        dtype=np.float64,
    )


@dataclass
class TripletStatistics:
    """Raw (subject, predicate, object) co-occurrence counts from training data."""

    counts: np.ndarray  # (N, M, N) int64

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 3 or self.counts.shape[0] != self.counts.shape[2]:
            raise DimensionError(f"counts must be (N, M, N), got {self.counts.shape}")
        if (self.counts < 0).any():
            raise DatasetValidationError("negative triplet counts")
        # Marginals used by the smoothed factorization.
        self.predicate_totals = self.counts.sum(axis=(0, 2))
        self.subject_predicate = self.counts.sum(axis=2)
        self.predicate_object = self.counts.sum(axis=0)
        self.total = int(self.counts.sum())

    @property
    def object_count(self) -> int:
        return self.counts.shape[0]

    @property
    def predicate_count(self) -> int:
        return self.counts.shape[1]

    def triplet_types(self) -> Set[Tuple[int, int, int]]:
        s, p, o = np.nonzero(self.counts)
        return {(int(a), int(b), int(c)) for a, b, c in zip(s, p, o)}

    def to_json_dict(self) -> dict:
        s, p, o = np.nonzero(self.counts)
        entries = sorted(
            [int(a), int(b), int(c), int(self.counts[a, b, c])]
            for a, b, c in zip(s, p, o)
        )
        return {
            "schema_version": 1,
            "object_count": self.object_count,
            "predicate_count": self.predicate_count,
            "total": self.total,
            "counts": entries,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "TripletStatistics":
        counts = np.zeros(
            (data["object_count"], data["predicate_count"], data["object_count"]),
            dtype=np.int64,
        )
        for s, p, o, c in data["counts"]:
            counts[s, p, o] = c
        return cls(counts)


def build_triplet_statistics(
    scenes: Iterable[SceneRecord], vocab: Vocabulary
) -> TripletStatistics:
    """Count every training annotation occurrence (duplicates count multiply)."""
    counts = np.zeros(
        (vocab.object_count, vocab.predicate_count, vocab.object_count), dtype=np.int64
    )
    for scene in scenes:
        if scene.split != "train":
            raise DatasetValidationError(
                f"scene {scene.image_id!r} has split {scene.split!r}; "
                "statistics are built from the train split only"
            )
        for ann in scene.annotations:
            if not (0 <= ann.subject_category < vocab.object_count):
                raise IngestionError(
                    f"scene {scene.image_id!r}: subject category {ann.subject_category} "
                    f"out of range [0, {vocab.object_count})"
                )
            if not (0 <= ann.object_category < vocab.object_count):
                raise IngestionError(
                    f"scene {scene.image_id!r}: object category {ann.object_category} "
                    f"out of range [0, {vocab.object_count})"
                )
            if not (0 <= ann.predicate < vocab.predicate_count):
                raise IngestionError(
                    f"scene {scene.image_id!r}: predicate {ann.predicate} "
                    f"out of range [0, {vocab.predicate_count})"
                )
            counts[ann.subject_category, ann.predicate, ann.object_category] += 1
    return TripletStatistics(counts)


def internal_linguistic(
    stats: TripletStatistics, subject_category: int, object_category: int
) -> np.ndarray:
    """Smoothed predicate distribution given the pair's category labels.

    Factorizes as P(p) * P(subject|p) * P(object|p) with add-one smoothing
    on every factor, renormalized; smoothing keeps unseen category pairs
    strictly positive.
    """
    n, m = stats.object_count, stats.predicate_count
    if not (0 <= subject_category < n and 0 <= object_category < n):
        raise IngestionError(
            f"category pair ({subject_category}, {object_category}) out of range [0, {n})"
        )
    cp = stats.predicate_totals.astype(np.float64)
    prior = (cp + 1.0) / (stats.total + m)
    subj = (stats.subject_predicate[subject_category] + 1.0) / (cp + n)
    obj = (stats.predicate_object[:, object_category] + 1.0) / (cp + n)
    raw = prior * subj * obj
    return raw / raw.sum()


class EmbeddingTable:
    """Token -> vector table loaded from a plain-text embedding file."""

    def __init__(self, vectors: Dict[str, np.ndarray], dim: int):
        self.vectors = vectors
        self.dim = dim

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    @classmethod
    def from_file(cls, path) -> "EmbeddingTable":
        """Parse "token v1 v2 ... vD" lines; dimension fixed by the first line."""
        vectors: Dict[str, np.ndarray] = {}
        dim = None
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                token, values = parts[0], parts[1:]
                try:
                    vec = np.array([float(v) for v in values], dtype=np.float64)
                except ValueError as exc:
                    raise IngestionError(
                        f"{path}: line {lineno}: non-numeric embedding value ({exc})"
                    ) from None
                if dim is None:
                    dim = len(vec)
                    if dim == 0:
                        raise IngestionError(f"{path}: line {lineno}: empty vector")
                elif len(vec) != dim:
                    raise IngestionError(
                        f"{path}: line {lineno}: expected {dim} values, got {len(vec)}"
                    )
                vectors[token] = vec
        if dim is None:
            raise IngestionError(f"{path}: no embedding entries found")
        return cls(vectors, dim)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for token in sorted(self.vectors):
                values = " ".join(repr(float(v)) for v in self.vectors[token])
                fh.write(f"{token} {values}\n")


def external_linguistic(embeddings: EmbeddingTable, category_name: str) -> np.ndarray:
    """Mean of the name's token vectors; unknown tokens contribute zeros.

    Names are lowercased before lookup. A name with no known token maps to
    the all-zero vector.
    """
    tokens = category_name.lower().split()
    out = np.zeros(embeddings.dim, dtype=np.float64)
    if not tokens:
        return out
    for token in tokens:
        if token in embeddings.vectors:
            out += embeddings.vectors[token]
    return out / len(tokens)


class FeatureStore:
    """In-memory visual feature vectors keyed by string.

    Binary layout on disk: rows of little-endian float64 in key order given
    by the sidecar JSON index.
    """

    def __init__(self, dim: int, vectors: Dict[str, np.ndarray]):
        self.dim = dim
        self.vectors = vectors

    def __contains__(self, key: str) -> bool:
        return key in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def add(self, key: str, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise DimensionError(
                f"feature {key!r} has shape {vector.shape}, expected ({self.dim},)"
            )
        self.vectors[key] = vector

    def vector(self, key: str) -> np.ndarray:
        try:
            return self.vectors[key]
        except KeyError:
            raise IngestionError(f"missing visual feature vector for key {key!r}") from None

    @classmethod
    def from_files(cls, data_path, index_path) -> "FeatureStore":
        import json

        with open(index_path, "r", encoding="utf-8") as fh:
            index = json.load(fh)
        dim = int(index["dim"])
        keys = index["keys"]
        flat = np.fromfile(data_path, dtype="<f8")
        expected = len(keys) * dim
        if flat.size != expected:
            raise IngestionError(
                f"{data_path}: expected {expected} float64 values "
                f"({len(keys)} rows x {dim}), found {flat.size}"
            )
        rows = flat.reshape(len(keys), dim)
        vectors = {key: rows[row].copy() for key, row in keys.items()}
        return cls(dim, vectors)

    def save(self, data_path, index_path) -> None:
        import json

        keys = sorted(self.vectors)
        rows = np.stack([self.vectors[k] for k in keys]) if keys else np.zeros((0, self.dim))
        rows.astype("<f8").tofile(data_path)
        index = {
            "schema_version": 1,
            "dim": self.dim,
            "count": len(keys),
            "keys": {k: i for i, k in enumerate(keys)},
        }
        with open(index_path, "w", encoding="utf-8") as fh:
            json.dump(index, fh, sort_keys=True, indent=1)


@dataclass
class FeatureBundle:
    """Raw per-pair features of the three modals, before any learned transform."""

    visual_subject: np.ndarray
    visual_object: np.ndarray
    visual_union: np.ndarray
    spatial: np.ndarray
    external_subject: np.ndarray
    external_object: np.ndarray
    internal: np.ndarray

    def __post_init__(self):
        if self.spatial.shape != (SPATIAL_DIM,):
            raise DimensionError(f"spatial features must be 8-dim, got {self.spatial.shape}")
        for name in STREAMS:
            arr = getattr(self, name)
            if not np.isfinite(arr).all():
                raise IngestionError(f"non-finite values in feature stream {name!r}")
        if abs(float(self.internal.sum()) - 1.0) > 1e-9 or (self.internal < 0).any():
            raise DatasetValidationError("internal linguistic feature is not a distribution")


@dataclass
class FeatureMatrix:
    """Batched feature streams, one row per pair."""

    streams: Dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.streams[name]
        except KeyError:
            raise DimensionError(
                f"feature stream {name!r} was not assembled "
                f"(available: {sorted(self.streams)})"
            ) from None

    @property
    def count(self) -> int:
        return next(iter(self.streams.values())).shape[0]

    def rows(self, indices) -> "FeatureMatrix":
        return FeatureMatrix({k: v[indices] for k, v in self.streams.items()})

    @classmethod
    def concatenate(cls, matrices: Sequence["FeatureMatrix"]) -> "FeatureMatrix":
        names = list(matrices[0].streams)
        return cls(
            {name: np.concatenate([m.streams[name] for m in matrices]) for name in names}
        )


class FeatureExtractor:
    """Assembles per-pair bundles from the store, statistics, and embeddings.

    Internal linguistic vectors depend only on the category pair and are
    cached, as are per-category external embeddings.
    """

    def __init__(
        self,
        store: FeatureStore,
        stats: TripletStatistics,
        embeddings: EmbeddingTable | None,
        vocab: Vocabulary,
    ):
        self.store = store
        self.stats = stats
        self.embeddings = embeddings
        self.vocab = vocab
        self._internal_cache: Dict[Tuple[int, int], np.ndarray] = {}
        self._external_cache: Dict[int, np.ndarray] = {}

    @property
    def visual_dim(self) -> int:
        return self.store.dim

    @property
    def embedding_dim(self) -> int:
        return self.embeddings.dim if self.embeddings is not None else 0

    def _internal(self, subject_category: int, object_category: int) -> np.ndarray:
        key = (subject_category, object_category)
        if key not in self._internal_cache:
            self._internal_cache[key] = internal_linguistic(self.stats, *key)
        return self._internal_cache[key]

    def _external(self, category: int) -> np.ndarray:
        if category not in self._external_cache:
            if self.embeddings is None:
                raise IngestionError(
                    "external linguistic features requested but no embedding table loaded"
                )
            name = self.vocab.object_names[category]
            self._external_cache[category] = external_linguistic(self.embeddings, name)
        return self._external_cache[category]

    def bundle(self, pair: ObjectPair, scene: SceneRecord) -> FeatureBundle:
        if pair.subject.feature_key is None or pair.object.feature_key is None:
            raise IngestionError(
                f"scene {scene.image_id!r}: pair ({pair.subject_index}, "
                f"{pair.object_index}) has detections without feature keys"
            )
        if pair.union_feature_key is None:
            raise IngestionError(
                f"scene {scene.image_id!r}: pair ({pair.subject_index}, "
                f"{pair.object_index}) has no union feature key"
            )
        return FeatureBundle(
            visual_subject=self.store.vector(pair.subject.feature_key),
            visual_object=self.store.vector(pair.object.feature_key),
            visual_union=self.store.vector(pair.union_feature_key),
            spatial=spatial_features(pair.subject.box, pair.object.box),
            external_subject=self._external(pair.subject.category),
            external_object=self._external(pair.object.category),
            internal=self._internal(pair.subject.category, pair.object.category),
        )

    def _stream_rows(self, name: str, pairs, scene) -> List[np.ndarray]:
        if name == "visual_subject":
            return [self._visual(p.subject.feature_key, p, scene) for p in pairs]
        if name == "visual_object":
            return [self._visual(p.object.feature_key, p, scene) for p in pairs]
        if name == "visual_union":
            return [self._visual(p.union_feature_key, p, scene) for p in pairs]
        if name == "spatial":
            return [spatial_features(p.subject.box, p.object.box) for p in pairs]
        if name == "external_subject":
            return [self._external(p.subject.category) for p in pairs]
        if name == "external_object":
            return [self._external(p.object.category) for p in pairs]
        if name == "internal":
            return [self._internal(p.subject.category, p.object.category) for p in pairs]
        raise DimensionError(f"unknown feature stream {name!r}")

    def _visual(self, key, pair, scene) -> np.ndarray:
        if key is None:
            raise IngestionError(
                f"scene {scene.image_id!r}: pair ({pair.subject_index}, "
                f"{pair.object_index}) is missing a feature key"
            )
        return self.store.vector(key)

    def _stream_dim(self, name: str) -> int:
        if name.startswith("visual"):
            return self.visual_dim
        if name == "spatial":
            return SPATIAL_DIM
        if name.startswith("external"):
            return self.embedding_dim
        return self.stats.predicate_count

    def matrix(
        self,
        pairs: Sequence[ObjectPair],
        scene: SceneRecord,
        streams: Sequence[str] | None = None,
    ) -> FeatureMatrix:
        """Stacked rows for the requested streams (all of them by default)."""
        names = list(streams) if streams is not None else list(STREAMS)
        if not pairs:
            return FeatureMatrix(
                {name: np.zeros((0, self._stream_dim(name))) for name in names}
            )
        return FeatureMatrix(
            {name: np.stack(self._stream_rows(name, pairs, scene)) for name in names}
        )


def assemble_bundle(
    pair: ObjectPair,
    scene: SceneRecord,
    stats: TripletStatistics,
    embeddings: EmbeddingTable | None,
    store: FeatureStore,
    vocab: Vocabulary,
) -> FeatureBundle:
    """One-shot bundle assembly; use FeatureExtractor for repeated calls."""
    return FeatureExtractor(store, stats, embeddings, vocab).bundle(pair, scene)
