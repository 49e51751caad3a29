"""Two-subnetwork relation model with multi-modal feature fusion.

The network transforms each enabled feature stream, fuses within and then
across modalities, and feeds the fused vector to (a) a determinate
confidence head producing P(pair is human-labeled) and (b) a relation head
producing M independent sigmoid predicate probabilities, which also sees
the confidence signal. Losses on determinate and undetermined pairs are
averaged per status and combined with configurable weights. Backward
passes are explicit; gradients from the relation loss flow through the
confidence subnetwork.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .errors import DimensionError, ModeError
from .features import SPATIAL_DIM, FeatureMatrix
from .nn import DenseLayer, sigmoid, sigmoid_ce

MODAL_VISUAL = "visual"
MODAL_SPATIAL = "spatial"
MODAL_LINGUISTIC_EXTERNAL = "linguistic_external"
MODAL_LINGUISTIC_INTERNAL = "linguistic_internal"
ALL_MODALS = (
    MODAL_VISUAL,
    MODAL_SPATIAL,
    MODAL_LINGUISTIC_EXTERNAL,
    MODAL_LINGUISTIC_INTERNAL,
)

FUSION_MODES = ("transforming", "concatenating")
DC_FEEDS = ("probability", "hidden")
NETWORK_ROLES = ("union", "subject", "object")

LOSS_TERMS = ("rel_determinate", "rel_undetermined", "dc_determinate", "dc_undetermined")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and loss weights.

    ``dc_undetermined_weight`` balances the undetermined term inside the
    confidence loss, ``rel_undetermined_weight`` scales the undetermined
    relation term, and ``dc_loss_weight`` trades off the confidence loss
    against the relation loss in the joint objective.
    """

    predicate_count: int
    object_count: int
    visual_dim: int = 4096
    embedding_dim: int = 300
    transform_dim: int = 500
    dc_hidden_dim: int = 100
    rel_hidden_dim: int = 500
    enabled_modals: Tuple[str, ...] = ALL_MODALS
    fusion_mode: str = "transforming"
    dc_feed: str = "probability"
    dc_undetermined_weight: float = 1.0
    rel_undetermined_weight: float = 0.5
    dc_loss_weight: float = 1.0
    im_mode: bool = False

    def __post_init__(self):
        if not self.enabled_modals:
            raise ValueError("at least one modal must be enabled")
        unknown = set(self.enabled_modals) - set(ALL_MODALS)
        if unknown:
            raise ValueError(f"unknown modals {sorted(unknown)}")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.dc_feed not in DC_FEEDS:
            raise ValueError(f"dc_feed must be one of {DC_FEEDS}")
        for name in (
            "predicate_count",
            "object_count",
            "visual_dim",
            "embedding_dim",
            "transform_dim",
            "dc_hidden_dim",
            "rel_hidden_dim",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("dc_undetermined_weight", "rel_undetermined_weight", "dc_loss_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        # Normalize modal order so configurations compare and serialize stably.
        object.__setattr__(
            self,
            "enabled_modals",
            tuple(m for m in ALL_MODALS if m in self.enabled_modals),
        )

    def stream_dims(self) -> Dict[str, int]:
        return {
            "visual_subject": self.visual_dim,
            "visual_object": self.visual_dim,
            "visual_union": self.visual_dim,
            "spatial": SPATIAL_DIM,
            "external_subject": self.embedding_dim,
            "external_object": self.embedding_dim,
            "internal": self.predicate_count,
        }

    def to_json_dict(self) -> dict:
        return {
            "predicate_count": self.predicate_count,
            "object_count": self.object_count,
            "visual_dim": self.visual_dim,
            "embedding_dim": self.embedding_dim,
            "transform_dim": self.transform_dim,
            "dc_hidden_dim": self.dc_hidden_dim,
            "rel_hidden_dim": self.rel_hidden_dim,
            "enabled_modals": list(self.enabled_modals),
            "fusion_mode": self.fusion_mode,
            "dc_feed": self.dc_feed,
            "dc_undetermined_weight": self.dc_undetermined_weight,
            "rel_undetermined_weight": self.rel_undetermined_weight,
            "dc_loss_weight": self.dc_loss_weight,
            "im_mode": self.im_mode,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        data["enabled_modals"] = tuple(data["enabled_modals"])
        return cls(**data)


def stream_spec(config: ModelConfig, role: str = "union") -> List[Tuple[str, List[str]]]:
    """Ordered (modality, streams) wiring for one network role.

    The auxiliary subject/object networks use only their own box's visual
    and external-linguistic streams plus the shared spatial stream; union
    visual and internal linguistic streams carry information about both
    boxes and are excluded from them.
    """
    if role not in NETWORK_ROLES:
        raise ValueError(f"role must be one of {NETWORK_ROLES}")
    enabled = set(config.enabled_modals)
    spec: List[Tuple[str, List[str]]] = []
    if MODAL_VISUAL in enabled:
        if role == "union":
            spec.append((MODAL_VISUAL, ["visual_subject", "visual_object", "visual_union"]))
        elif role == "subject":
            spec.append((MODAL_VISUAL, ["visual_subject"]))
        else:
            spec.append((MODAL_VISUAL, ["visual_object"]))
    if MODAL_SPATIAL in enabled:
        spec.append((MODAL_SPATIAL, ["spatial"]))
    linguistic: List[str] = []
    if MODAL_LINGUISTIC_EXTERNAL in enabled:
        if role == "union":
            linguistic.extend(["external_subject", "external_object"])
        elif role == "subject":
            linguistic.append("external_subject")
        else:
            linguistic.append("external_object")
    if MODAL_LINGUISTIC_INTERNAL in enabled and role == "union":
        linguistic.append("internal")
    if linguistic:
        spec.append(("linguistic", linguistic))
    if not spec:
        raise ModeError(f"no feature streams available for the {role!r} network")
    return spec


def required_streams(config: ModelConfig) -> Tuple[str, ...]:
    """Feature streams the model consumes (all three networks in IM mode)."""
    roles = NETWORK_ROLES if config.im_mode else ("union",)
    seen = []
    for role in roles:
        for _, streams in stream_spec(config, role):
            for s in streams:
                if s not in seen:
                    seen.append(s)
    return tuple(seen)


@dataclass
class PairPrediction:
    """Model outputs for one pair: confidence scalar and M sigmoid probabilities."""

    determinate_confidence: float
    predicate_probabilities: np.ndarray


def score_relation(
    prediction: PairPrediction, subject_conf: float, object_conf: float
) -> np.ndarray:
    """Relation scores: predicate probabilities scaled by pair confidence
    and the two detector confidences."""
    return (
        prediction.predicate_probabilities
        * prediction.determinate_confidence
        * subject_conf
        * object_conf
    )


def score_relations(
    rel_probs: np.ndarray,
    dc_probs: np.ndarray,
    subject_confs: np.ndarray,
    object_confs: np.ndarray,
) -> np.ndarray:
    """Batched score_relation: (B, M) scores."""
    scale = dc_probs * subject_confs * object_confs
    return rel_probs * scale[:, None]


class RelationNetwork:
    """One fused-feature network with confidence and relation heads."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, role: str = "union"):
        self.config = config
        self.role = role
        self.spec = stream_spec(config, role)
        dims = config.stream_dims()
        t = config.transform_dim
        self.streams = [s for _, streams in self.spec for s in streams]
        self.modalities = [m for m, _ in self.spec]
        self.fused_dim = len(self.spec) * t
        self.layers: Dict[str, DenseLayer] = {}
        if config.fusion_mode == "transforming":
            for _, streams in self.spec:
                for s in streams:
                    self.layers[f"transform.{s}"] = DenseLayer.create(dims[s], t, "relu", rng)
            for modality, streams in self.spec:
                self.layers[f"fuse.{modality}"] = DenseLayer.create(
                    len(streams) * t, t, "relu", rng
                )
        else:
            raw_dim = sum(dims[s] for s in self.streams)
            self.layers["concat.stage1"] = DenseLayer.create(
                raw_dim, len(self.streams) * t, "relu", rng
            )
            self.layers["concat.stage2"] = DenseLayer.create(
                len(self.streams) * t, self.fused_dim, "relu", rng
            )
        self.layers["dc.hidden"] = DenseLayer.create(
            self.fused_dim, config.dc_hidden_dim, "relu", rng
        )
        self.layers["dc.out"] = DenseLayer.create(config.dc_hidden_dim, 1, "identity", rng)
        signal_dim = 1 if config.dc_feed == "probability" else config.dc_hidden_dim
        self.layers["rel.hidden"] = DenseLayer.create(
            self.fused_dim + signal_dim, config.rel_hidden_dim, "relu", rng
        )
        self.layers["rel.out"] = DenseLayer.create(
            config.rel_hidden_dim, config.predicate_count, "identity", rng
        )
        self._cache: dict = {}

    # -- forward -----------------------------------------------------------

    def fuse_features(self, features: FeatureMatrix) -> np.ndarray:
        """Fused feature vector of dimension (#modalities * transform_dim).

        Transforming mode transforms each stream, concatenates within each
        modality, transforms again, and concatenates the modality outputs.
        Concatenating mode concatenates raw streams first and applies two
        dense layers with the same stage widths.
        """
        if self.config.fusion_mode == "transforming":
            parts = []
            for modality, streams in self.spec:
                transformed = [
                    self.layers[f"transform.{s}"].forward(features[s]) for s in streams
                ]
                parts.append(self.layers[f"fuse.{modality}"].forward(np.concatenate(transformed, axis=1)))
            return np.concatenate(parts, axis=1)
        raw = np.concatenate([features[s] for s in self.streams], axis=1)
        return self.layers["concat.stage2"].forward(self.layers["concat.stage1"].forward(raw))

    def dc_forward(self, fused: np.ndarray) -> np.ndarray:
        """Determinate confidence in (0, 1), shape (B,)."""
        hidden = self.layers["dc.hidden"].forward(fused)
        logits = self.layers["dc.out"].forward(hidden)[:, 0]
        probs = sigmoid(logits)
        self._cache["dc_hidden"] = hidden
        self._cache["dc_probs"] = probs
        return probs

    def rel_forward(self, fused: np.ndarray, dc_signal: np.ndarray) -> np.ndarray:
        """Predicate probabilities (B, M); independent sigmoids, no softmax."""
        rel_in = np.concatenate([fused, dc_signal], axis=1)
        logits = self.layers["rel.out"].forward(self.layers["rel.hidden"].forward(rel_in))
        return sigmoid(logits)

    def forward(self, features: FeatureMatrix) -> Tuple[np.ndarray, np.ndarray]:
        """Returns (dc_probs (B,), rel_probs (B, M)); caches for backward."""
        fused = self.fuse_features(features)
        dc_probs = self.dc_forward(fused)
        if self.config.dc_feed == "probability":
            signal = dc_probs[:, None]
        else:
            signal = self._cache["dc_hidden"]
        rel_probs = self.rel_forward(fused, signal)
        self._cache["fused"] = fused
        self._cache["rel_probs"] = rel_probs
        return dc_probs, rel_probs

    def predict(self, features: FeatureMatrix) -> List[PairPrediction]:
        dc_probs, rel_probs = self.forward(features)
        return [
            PairPrediction(float(dc_probs[b]), rel_probs[b].copy())
            for b in range(features.count)
        ]

    # -- backward ----------------------------------------------------------

    def backward(self, d_rel_logits: np.ndarray, d_dc_logits: np.ndarray) -> Dict[str, np.ndarray]:
        """Backpropagate loss gradients w.r.t. the two heads' pre-sigmoid outputs.

        The confidence signal fed to the relation head is part of the graph,
        so its gradient is routed back into the confidence subnetwork.
        """
        fused = self._cache["fused"]
        dc_probs = self._cache["dc_probs"]
        d_rel_hidden = self.layers["rel.out"].backward(d_rel_logits)
        d_rel_in = self.layers["rel.hidden"].backward(d_rel_hidden)
        d_fused = d_rel_in[:, : self.fused_dim].copy()
        d_signal = d_rel_in[:, self.fused_dim :]
        if self.config.dc_feed == "probability":
            d_dc_total = d_dc_logits + d_signal[:, 0] * dc_probs * (1.0 - dc_probs)
            d_dc_hidden_extra = 0.0
        else:
            d_dc_total = d_dc_logits
            d_dc_hidden_extra = d_signal
        d_dc_hidden = self.layers["dc.out"].backward(d_dc_total[:, None]) + d_dc_hidden_extra
        d_fused += self.layers["dc.hidden"].backward(d_dc_hidden)

        t = self.config.transform_dim
        if self.config.fusion_mode == "transforming":
            for idx, (modality, streams) in enumerate(self.spec):
                d_mod = self.layers[f"fuse.{modality}"].backward(
                    d_fused[:, idx * t : (idx + 1) * t]
                )
                for sidx, s in enumerate(streams):
                    self.layers[f"transform.{s}"].backward(d_mod[:, sidx * t : (sidx + 1) * t])
        else:
            self.layers["concat.stage1"].backward(
                self.layers["concat.stage2"].backward(d_fused)
            )
        return self.gradients()

    # -- parameter access ----------------------------------------------------

    def parameters(self) -> Dict[str, np.ndarray]:
        out = {}
        for name, layer in self.layers.items():
            out[f"{name}.weight"] = layer.weight
            out[f"{name}.bias"] = layer.bias
        return out

    def gradients(self) -> Dict[str, np.ndarray]:
        out = {}
        for name, layer in self.layers.items():
            out[f"{name}.weight"] = layer.grad_weight
            out[f"{name}.bias"] = layer.grad_bias
        return out

    def load_parameters(self, params: Dict[str, np.ndarray]) -> None:
        own = self.parameters()
        if set(own) != set(params):
            missing = sorted(set(own) - set(params))
            extra = sorted(set(params) - set(own))
            raise DimensionError(
                f"parameter name mismatch (missing {missing}, unexpected {extra})"
            )
        for name, value in params.items():
            if own[name].shape != value.shape:
                raise DimensionError(
                    f"parameter {name!r}: shape {value.shape} != expected {own[name].shape}"
                )
            own[name][...] = value

    def stage_widths(self) -> List[int]:
        """Total output width of each layer stage (fusion stages, then heads).

        Transforming and concatenating modes of the same configuration must
        agree on these (same depth, same total widths).
        """
        if self.config.fusion_mode == "transforming":
            stage1 = sum(
                self.layers[f"transform.{s}"].out_dim for s in self.streams
            )
            stage2 = sum(self.layers[f"fuse.{m}"].out_dim for m in self.modalities)
        else:
            stage1 = self.layers["concat.stage1"].out_dim
            stage2 = self.layers["concat.stage2"].out_dim
        return [
            stage1,
            stage2,
            self.layers["dc.hidden"].out_dim,
            self.layers["dc.out"].out_dim,
            self.layers["rel.hidden"].out_dim,
            self.layers["rel.out"].out_dim,
        ]

    # -- training ------------------------------------------------------------

    def loss_and_gradients(
        self, features: FeatureMatrix, labels: np.ndarray, determinate_mask: np.ndarray
    ) -> Tuple[float, Dict[str, float], Dict[str, np.ndarray]]:
        dc_probs, rel_probs = self.forward(features)
        loss, breakdown = joint_loss(dc_probs, rel_probs, labels, determinate_mask, self.config)
        d_rel, d_dc = joint_loss_gradients(
            dc_probs, rel_probs, labels, determinate_mask, self.config
        )
        grads = self.backward(d_rel, d_dc)
        return loss, breakdown, grads

    def relation_scores(
        self, features: FeatureMatrix, subject_confs: np.ndarray, object_confs: np.ndarray
    ) -> np.ndarray:
        dc_probs, rel_probs = self.forward(features)
        return score_relations(rel_probs, dc_probs, subject_confs, object_confs)


def joint_loss(
    dc_probs: np.ndarray,
    rel_probs: np.ndarray,
    labels: np.ndarray,
    determinate_mask: np.ndarray,
    config: ModelConfig,
) -> Tuple[float, Dict[str, float]]:
    """Weighted joint objective and its four unweighted terms.

    Determinate pairs contribute CE(confidence, 1) and per-predicate CE
    against their multi-hot labels; undetermined pairs contribute
    CE(confidence, 0) and all-negative predicate CE. Each term is the mean
    over the pairs of its status, so the weights act on balanced magnitudes
    regardless of the batch ratio.
    """
    det = np.asarray(determinate_mask, dtype=bool)
    und = ~det
    n_det = int(det.sum())
    n_und = int(und.sum())
    per_pair_rel_pos = sigmoid_ce(rel_probs, np.asarray(labels, dtype=np.float64)).sum(axis=1)
    per_pair_rel_neg = sigmoid_ce(rel_probs, np.zeros_like(rel_probs)).sum(axis=1)
    breakdown = {
        "rel_determinate": float(per_pair_rel_pos[det].mean()) if n_det else 0.0,
        "rel_undetermined": float(per_pair_rel_neg[und].mean()) if n_und else 0.0,
        "dc_determinate": float(sigmoid_ce(dc_probs[det], 1.0).mean()) if n_det else 0.0,
        "dc_undetermined": float(sigmoid_ce(dc_probs[und], 0.0).mean()) if n_und else 0.0,
    }
    total = (
        breakdown["rel_determinate"]
        + config.rel_undetermined_weight * breakdown["rel_undetermined"]
        + config.dc_loss_weight * breakdown["dc_determinate"]
        + config.dc_loss_weight * config.dc_undetermined_weight * breakdown["dc_undetermined"]
    )
    return total, breakdown


def joint_loss_gradients(
    dc_probs: np.ndarray,
    rel_probs: np.ndarray,
    labels: np.ndarray,
    determinate_mask: np.ndarray,
    config: ModelConfig,
) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of the joint loss w.r.t. the heads' pre-sigmoid logits.

    Uses the fused sigmoid cross-entropy form (p - y), so the clamp inside
    the loss value never distorts derivatives.
    """
    det = np.asarray(determinate_mask, dtype=bool)
    n_det = max(int(det.sum()), 1)
    n_und = max(int((~det).sum()), 1)
    labels = np.asarray(labels, dtype=np.float64)
    d_rel = np.where(
        det[:, None],
        (rel_probs - labels) / n_det,
        config.rel_undetermined_weight * rel_probs / n_und,
    )
    d_dc = np.where(
        det,
        config.dc_loss_weight * (dc_probs - 1.0) / n_det,
        config.dc_loss_weight * config.dc_undetermined_weight * dc_probs / n_und,
    )
    return d_rel, d_dc


class InferringModel:
    """Three-network variant: union, subject-only, and object-only networks.

    All networks share the architecture and hyperparameters but consume
    different feature subsets; they are trained jointly on the sum of their
    losses, and inference multiplies their predictions elementwise (the
    detector confidences enter the combined score exactly once).
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        if not config.im_mode:
            raise ModeError("InferringModel requires im_mode=True in the configuration")
        self.config = config
        self.networks = {role: RelationNetwork(config, rng, role) for role in NETWORK_ROLES}

    def forward(self, features: FeatureMatrix) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
        return {role: net.forward(features) for role, net in self.networks.items()}

    def loss_and_gradients(
        self, features: FeatureMatrix, labels: np.ndarray, determinate_mask: np.ndarray
    ) -> Tuple[float, Dict[str, float], Dict[str, np.ndarray]]:
        total = 0.0
        breakdown: Dict[str, float] = {}
        grads: Dict[str, np.ndarray] = {}
        for role, net in self.networks.items():
            loss, terms, g = net.loss_and_gradients(features, labels, determinate_mask)
            total += loss
            breakdown[f"{role}.loss"] = loss
            for term, value in terms.items():
                breakdown[f"{role}.{term}"] = value
            for name, grad in g.items():
                grads[f"{role}.{name}"] = grad
        return total, breakdown, grads

    def relation_scores(
        self, features: FeatureMatrix, subject_confs: np.ndarray, object_confs: np.ndarray
    ) -> np.ndarray:
        outputs = self.forward(features)
        dc_u, rel_u = outputs["union"]
        combined = score_relations(rel_u, dc_u, subject_confs, object_confs)
        for role in ("subject", "object"):
            dc, rel = outputs[role]
            combined = combined * rel * dc[:, None]
        return combined

    def parameters(self) -> Dict[str, np.ndarray]:
        return {
            f"{role}.{name}": p
            for role, net in self.networks.items()
            for name, p in net.parameters().items()
        }

    def load_parameters(self, params: Dict[str, np.ndarray]) -> None:
        for role, net in self.networks.items():
            prefix = f"{role}."
            subset = {
                name[len(prefix) :]: value
                for name, value in params.items()
                if name.startswith(prefix)
            }
            net.load_parameters(subset)


def combine_im_scores(
    union_scores: np.ndarray,
    subject_prediction: PairPrediction,
    object_prediction: PairPrediction,
) -> np.ndarray:
    """Elementwise product of the union scores with both auxiliary predictions."""
    return (
        union_scores
        * subject_prediction.predicate_probabilities
        * subject_prediction.determinate_confidence
        * object_prediction.predicate_probabilities
        * object_prediction.determinate_confidence
    )


def build_model(config: ModelConfig, rng: np.random.Generator):
    """RelationNetwork, or the three-network InferringModel in IM mode."""
    if config.im_mode:
        return InferringModel(config, rng)
    return RelationNetwork(config, rng)


def _relu_margin(model) -> float:
    """Smallest |pre-activation| over all relu layers after a forward pass.

    Finite differencing is only meaningful away from relu kinks; a zero
    margin occurs with real probability at zero-initialized biases (an
    all-dead upstream row leaves the pre-activation exactly at the bias).
    """
    networks = model.networks.values() if isinstance(model, InferringModel) else [model]
    margin = np.inf
    for net in networks:
        for layer in net.layers.values():
            if layer.activation == "relu" and layer._pre is not None and layer._pre.size:
                margin = min(margin, float(np.abs(layer._pre).min()))
    return margin


def make_gradient_check_problem(
    config: ModelConfig, rng: np.random.Generator, batch: int = 6, margin: float = 1e-4
):
    """Random model and batch suitable for finite-difference verification.

    Biases are randomized (general position: the zero-bias initialization
    puts dead rows exactly on a relu kink) and inputs are redrawn until all
    relu pre-activations clear the kink by ``margin``.

    Returns (model, features, labels, determinate_mask).
    """
    model = build_model(config, rng)
    for name, param in model.parameters().items():
        if name.endswith(".bias"):
            param[...] = rng.uniform(-0.2, 0.2, size=param.shape)
    for _ in range(50):
        internal = rng.uniform(0.1, 1.0, size=(batch, config.predicate_count))
        internal /= internal.sum(axis=1, keepdims=True)
        features = FeatureMatrix(
            {
                "visual_subject": rng.standard_normal((batch, config.visual_dim)),
                "visual_object": rng.standard_normal((batch, config.visual_dim)),
                "visual_union": rng.standard_normal((batch, config.visual_dim)),
                "spatial": rng.uniform(-1, 1, size=(batch, 8)),
                "external_subject": rng.standard_normal((batch, config.embedding_dim)),
                "external_object": rng.standard_normal((batch, config.embedding_dim)),
                "internal": internal,
            }
        )
        labels = np.zeros((batch, config.predicate_count))
        mask = np.zeros(batch, dtype=bool)
        mask[: batch // 2] = True
        for b in range(batch // 2):
            labels[b, rng.integers(config.predicate_count)] = 1.0
        model.forward(features)
        if _relu_margin(model) > margin:
            return model, features, labels, mask
    return model, features, labels, mask
