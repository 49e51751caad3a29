import itertools
import math

import numpy as np
import pytest

from urelnet.errors import ModeError
from urelnet.features import STREAMS, FeatureMatrix
from urelnet.model import (
    ALL_MODALS,
    InferringModel,
    ModelConfig,
    PairPrediction,
    RelationNetwork,
    build_model,
    combine_im_scores,
    joint_loss,
    joint_loss_gradients,
    score_relation,
    score_relations,
    stream_spec,
)
from urelnet.nn import gradient_check

TOY = dict(
    predicate_count=4,
    object_count=5,
    visual_dim=12,
    embedding_dim=6,
    transform_dim=7,
    dc_hidden_dim=5,
    rel_hidden_dim=9,
)

MODAL_SUBSETS = [
    ("visual",),
    ("spatial",),
    ("linguistic_external", "linguistic_internal"),
    ("visual", "spatial"),
    ("visual", "linguistic_external", "linguistic_internal"),
    ("linguistic_external", "linguistic_internal", "spatial"),
    ("visual", "spatial", "linguistic_internal"),
    ("visual", "spatial", "linguistic_external"),
    ALL_MODALS,
]


def toy_config(**overrides):
    return ModelConfig(**{**TOY, **overrides})


def random_features(config, batch, rng):
    internal = rng.uniform(0.1, 1.0, size=(batch, config.predicate_count))
    internal /= internal.sum(axis=1, keepdims=True)
    return FeatureMatrix(
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


def random_batch(config, rng, batch=6):
    features = random_features(config, batch, rng)
    labels = np.zeros((batch, config.predicate_count))
    mask = np.zeros(batch, dtype=bool)
    mask[: batch // 2] = True
    for b in range(batch // 2):
        labels[b, rng.integers(config.predicate_count)] = 1.0
    return features, labels, mask


def check_model_gradients(model, features, labels, mask, tolerance=1e-4):
    _, _, grads = model.loss_and_gradients(features, labels, mask)
    params = model.parameters()

    def loss_fn():
        loss, _, _ = model.loss_and_gradients(features, labels, mask)
        return loss

    # step 1e-6: small enough that relu kink crossings are vanishingly rare,
    # large enough that float64 roundoff stays orders below the tolerance.
    return gradient_check(loss_fn, params, grads, tolerance=tolerance, step=1e-6)


def test_config_defaults():
    config = ModelConfig(predicate_count=70, object_count=100)
    assert config.visual_dim == 4096
    assert config.embedding_dim == 300
    assert config.transform_dim == 500
    assert config.dc_hidden_dim == 100
    assert config.rel_hidden_dim == 500
    assert config.dc_undetermined_weight == 1.0
    assert config.rel_undetermined_weight == 0.5
    assert config.dc_loss_weight == 1.0
    assert config.enabled_modals == ALL_MODALS
    assert config.fusion_mode == "transforming"
    assert not config.im_mode


def test_fused_dim_three_modals_transforming():
    config = ModelConfig(
        predicate_count=70, object_count=100, visual_dim=16, embedding_dim=8,
        transform_dim=500,
    )
    net = RelationNetwork(config, np.random.default_rng(0))
    features = random_features(config, 2, np.random.default_rng(1))
    assert net.fuse_features(features).shape == (2, 1500)
    _, rel = net.forward(features)
    assert rel.shape == (2, 70)


def test_fused_dim_single_modal():
    config = toy_config(enabled_modals=("spatial",), transform_dim=500)
    net = RelationNetwork(config, np.random.default_rng(0))
    features = random_features(config, 3, np.random.default_rng(1))
    assert net.fuse_features(features).shape == (3, 500)


def test_dc_forward_range_and_zero_weights():
    config = toy_config()
    net = RelationNetwork(config, np.random.default_rng(0))
    features = random_features(config, 4, np.random.default_rng(1))
    fused = net.fuse_features(features)
    dc = net.dc_forward(fused)
    assert np.all((dc > 0) & (dc < 1))
    net.layers["dc.hidden"].weight[...] = 0.0
    net.layers["dc.hidden"].bias[...] = 0.0
    net.layers["dc.out"].weight[...] = 0.0
    net.layers["dc.out"].bias[...] = 0.0
    np.testing.assert_allclose(net.dc_forward(fused), 0.5)


def test_rel_forward_shape_and_zero_head():
    config = toy_config()
    net = RelationNetwork(config, np.random.default_rng(0))
    features = random_features(config, 4, np.random.default_rng(1))
    dc, rel = net.forward(features)
    assert rel.shape == (4, config.predicate_count)
    assert np.all((rel > 0) & (rel < 1))
    net.layers["rel.out"].weight[...] = 0.0
    net.layers["rel.out"].bias[...] = 0.0
    _, rel = net.forward(features)
    np.testing.assert_allclose(rel, 0.5)


def test_rel_forward_sensitive_to_dc_signal():
    config = toy_config()
    net = RelationNetwork(config, np.random.default_rng(0))
    features = random_features(config, 2, np.random.default_rng(1))
    fused = net.fuse_features(features)
    low = net.rel_forward(fused, np.full((2, 1), 0.1))
    high = net.rel_forward(fused, np.full((2, 1), 0.9))
    assert np.abs(low - high).max() > 1e-6


def test_joint_loss_hand_example():
    # One determinate pair, every prediction 0.5, M=2, one positive label.
    config = ModelConfig(predicate_count=2, object_count=2, visual_dim=2, embedding_dim=2)
    dc = np.array([0.5])
    rel = np.full((1, 2), 0.5)
    labels = np.array([[1.0, 0.0]])
    mask = np.array([True])
    total, terms = joint_loss(dc, rel, labels, mask, config)
    assert terms["rel_determinate"] == pytest.approx(2 * math.log(2), abs=1e-12)
    assert terms["dc_determinate"] == pytest.approx(math.log(2), abs=1e-12)
    assert terms["rel_undetermined"] == 0.0
    assert terms["dc_undetermined"] == 0.0


def test_joint_loss_collapses_when_weights_zero():
    config = toy_config(rel_undetermined_weight=0.0, dc_loss_weight=0.0)
    rng = np.random.default_rng(0)
    dc = rng.uniform(0.1, 0.9, size=6)
    rel = rng.uniform(0.1, 0.9, size=(6, config.predicate_count))
    labels = (rng.random((6, config.predicate_count)) < 0.3).astype(float)
    mask = np.array([True, True, True, False, False, False])
    total, terms = joint_loss(dc, rel, labels, mask, config)
    assert total == pytest.approx(terms["rel_determinate"], abs=1e-15)


def test_joint_loss_breakdown_recombines():
    config = toy_config(rel_undetermined_weight=0.37, dc_loss_weight=2.25,
                        dc_undetermined_weight=0.6)
    rng = np.random.default_rng(1)
    dc = rng.uniform(0.05, 0.95, size=8)
    rel = rng.uniform(0.05, 0.95, size=(8, config.predicate_count))
    labels = (rng.random((8, config.predicate_count)) < 0.4).astype(float)
    mask = rng.random(8) < 0.5
    total, terms = joint_loss(dc, rel, labels, mask, config)
    expected = (
        terms["rel_determinate"]
        + 0.37 * terms["rel_undetermined"]
        + 2.25 * terms["dc_determinate"]
        + 2.25 * 0.6 * terms["dc_undetermined"]
    )
    assert total == pytest.approx(expected, abs=1e-15)


def test_dc_loss_symmetry_on_mirrored_batches():
    # CE(q, 1) on a determinate pair equals CE(1-q, 0) on an undetermined one,
    # and with unit undetermined weight both terms enter the loss equally.
    config = toy_config()
    q = 0.73
    rel = np.full((1, config.predicate_count), 0.5)
    zeros = np.zeros((1, config.predicate_count))
    _, det_terms = joint_loss(np.array([q]), rel, zeros, np.array([True]), config)
    _, und_terms = joint_loss(np.array([1 - q]), rel, zeros, np.array([False]), config)
    assert det_terms["dc_determinate"] == pytest.approx(und_terms["dc_undetermined"], abs=1e-12)


def test_score_relation_identity_and_scaling():
    pred = PairPrediction(1.0, np.array([0.2, 0.7, 0.1]))
    np.testing.assert_allclose(score_relation(pred, 1.0, 1.0), [0.2, 0.7, 0.1])
    half = PairPrediction(0.5, np.array([0.2, 0.7, 0.1]))
    np.testing.assert_allclose(score_relation(half, 1.0, 1.0), [0.1, 0.35, 0.05])


def test_score_relation_argmax_invariant():
    rng = np.random.default_rng(5)
    for _ in range(20):
        probs = rng.uniform(0.01, 0.99, size=6)
        pred_a = PairPrediction(float(rng.uniform(0.01, 1)), probs)
        pred_b = PairPrediction(float(rng.uniform(0.01, 1)), probs)
        sa = score_relation(pred_a, float(rng.uniform(0.01, 1)), float(rng.uniform(0.01, 1)))
        sb = score_relation(pred_b, float(rng.uniform(0.01, 1)), float(rng.uniform(0.01, 1)))
        assert np.argmax(sa) == np.argmax(sb)


def test_full_graph_gradient_check_transforming():
    config = toy_config()
    rng = np.random.default_rng(0)
    net = RelationNetwork(config, rng)
    features, labels, mask = random_batch(config, rng)
    report = check_model_gradients(net, features, labels, mask)
    assert report.passed, report.lines()


def test_full_graph_gradient_check_concatenating():
    config = toy_config(fusion_mode="concatenating")
    rng = np.random.default_rng(1)
    net = RelationNetwork(config, rng)
    features, labels, mask = random_batch(config, rng)
    report = check_model_gradients(net, features, labels, mask)
    assert report.passed, report.lines()


def test_gradient_check_dc_hidden_feed():
    config = toy_config(dc_feed="hidden")
    rng = np.random.default_rng(2)
    net = RelationNetwork(config, rng)
    features, labels, mask = random_batch(config, rng)
    report = check_model_gradients(net, features, labels, mask)
    assert report.passed, report.lines()


@pytest.mark.parametrize("subset_index", range(len(MODAL_SUBSETS)))
@pytest.mark.parametrize("fusion", ["transforming", "concatenating"])
def test_gradient_check_modal_subsets(subset_index, fusion):
    modals = MODAL_SUBSETS[subset_index]
    config = toy_config(enabled_modals=tuple(modals), fusion_mode=fusion)
    rng = np.random.default_rng(1000 + 2 * subset_index + (fusion == "concatenating"))
    net = RelationNetwork(config, rng)
    features, labels, mask = random_batch(config, rng, batch=4)
    report = check_model_gradients(net, features, labels, mask)
    assert report.passed, report.lines()


def test_gradient_check_im_mode():
    config = toy_config(im_mode=True)
    rng = np.random.default_rng(3)
    model = InferringModel(config, rng)
    features, labels, mask = random_batch(config, rng, batch=4)
    report = check_model_gradients(model, features, labels, mask)
    assert report.passed, report.lines()


def test_gradient_flows_into_fusion_from_dc():
    config = toy_config()
    rng = np.random.default_rng(4)
    net = RelationNetwork(config, rng)
    features, labels, mask = random_batch(config, rng)
    # Only the confidence loss: relation gradients switched off.
    dc, rel = net.forward(features)
    d_rel = np.zeros_like(rel)
    d_dc = (dc - mask.astype(float)) / len(dc)
    grads = net.backward(d_rel, d_dc)
    assert np.abs(grads["transform.visual_subject.weight"]).max() > 0


def test_modes_have_identical_stage_widths():
    for modals in MODAL_SUBSETS:
        a = RelationNetwork(
            toy_config(enabled_modals=tuple(modals)), np.random.default_rng(0)
        )
        b = RelationNetwork(
            toy_config(enabled_modals=tuple(modals), fusion_mode="concatenating"),
            np.random.default_rng(0),
        )
        assert a.stage_widths() == b.stage_widths()


def test_disabling_modal_removes_exactly_its_parameters():
    full = RelationNetwork(toy_config(), np.random.default_rng(0))
    no_spatial = RelationNetwork(
        toy_config(enabled_modals=("visual", "linguistic_external", "linguistic_internal")),
        np.random.default_rng(0),
    )
    removed = set(full.parameters()) - set(no_spatial.parameters())
    assert removed == {
        "transform.spatial.weight",
        "transform.spatial.bias",
        "fuse.spatial.weight",
        "fuse.spatial.bias",
    }


def test_im_mode_requires_flag():
    with pytest.raises(ModeError):
        InferringModel(toy_config(im_mode=False), np.random.default_rng(0))
    assert isinstance(build_model(toy_config(im_mode=True), np.random.default_rng(0)),
                      InferringModel)


def test_im_auxiliary_networks_use_reduced_streams():
    config = toy_config(im_mode=True)
    spec = dict(stream_spec(config, "subject"))
    assert spec["visual"] == ["visual_subject"]
    assert spec["linguistic"] == ["external_subject"]
    spec_o = dict(stream_spec(config, "object"))
    assert spec_o["visual"] == ["visual_object"]
    assert "internal" not in [s for streams in spec_o.values() for s in streams]


def test_im_combine_identity():
    union_scores = np.array([0.3, 0.1, 0.6])
    ones = PairPrediction(1.0, np.ones(3))
    np.testing.assert_array_equal(combine_im_scores(union_scores, ones, ones), union_scores)


def test_im_combined_bounded_by_factors():
    rng = np.random.default_rng(6)
    config = toy_config(im_mode=True)
    model = InferringModel(config, rng)
    features, _, _ = random_batch(config, rng, batch=5)
    confs = np.ones(5)
    combined = model.relation_scores(features, confs, confs)
    dc_u, rel_u = model.networks["union"].forward(features)
    union_only = score_relations(rel_u, dc_u, confs, confs)
    assert np.all(combined <= union_only + 1e-15)


def test_im_loss_is_sum_of_network_losses():
    rng = np.random.default_rng(7)
    config = toy_config(im_mode=True)
    model = InferringModel(config, rng)
    features, labels, mask = random_batch(config, rng, batch=4)
    total, terms, _ = model.loss_and_gradients(features, labels, mask)
    assert total == pytest.approx(
        terms["union.loss"] + terms["subject.loss"] + terms["object.loss"], abs=1e-12
    )


def test_im_union_loss_equals_non_im_loss():
    rng = np.random.default_rng(8)
    config = toy_config(im_mode=True)
    model = InferringModel(config, rng)
    features, labels, mask = random_batch(config, rng, batch=4)
    _, terms, _ = model.loss_and_gradients(features, labels, mask)
    plain = RelationNetwork(toy_config(), np.random.default_rng(99))
    plain.load_parameters(model.networks["union"].parameters())
    plain_loss, _, _ = plain.loss_and_gradients(features, labels, mask)
    assert terms["union.loss"] == pytest.approx(plain_loss, abs=1e-12)


def test_loss_gradients_vanish_for_missing_status():
    # All-determinate batch: undetermined terms contribute nothing.
    config = toy_config()
    rng = np.random.default_rng(9)
    net = RelationNetwork(config, rng)
    features, labels, _ = random_batch(config, rng, batch=4)
    mask = np.ones(4, dtype=bool)
    report = check_model_gradients(net, features, labels, mask)
    assert report.passed, report.lines()
