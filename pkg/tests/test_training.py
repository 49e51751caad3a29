import json

import numpy as np
import pytest

from urelnet.checkpoint import load_checkpoint, load_model, save_checkpoint
from urelnet.errors import CheckpointError, UndefinedMetricError
from urelnet.model import ModelConfig, build_model
from urelnet.synthetic import SyntheticConfig, generate_synthetic
from urelnet.training import (
    SCHEDULE_PRESETS,
    RunConfig,
    Schedule,
    build_extractor,
    build_training_pool,
    make_run_config,
    run_evaluation,
    run_training,
    write_log,
)

QUICK_DATA = SyntheticConfig(
    train_scenes=15, validation_scenes=4, test_scenes=5, min_relations=2, max_relations=3,
    seed=11,
)


@pytest.fixture(scope="module")
def dataset():
    return generate_synthetic(QUICK_DATA)


def small_model(dataset, **overrides):
    return ModelConfig(
        predicate_count=dataset.vocabulary.predicate_count,
        object_count=dataset.vocabulary.object_count,
        visual_dim=dataset.features.dim,
        embedding_dim=dataset.embeddings.dim,
        transform_dim=12,
        dc_hidden_dim=6,
        rel_hidden_dim=12,
        **overrides,
    )


def quick_run(dataset, **overrides):
    defaults = dict(
        model=small_model(dataset),
        steps=30,
        seed=0,
        schedule=Schedule(1e-3, 0.5, 1000),
        batch_size=16,
    )
    defaults.update(overrides)
    return RunConfig(**defaults)


def test_schedule_presets_encode_expected_constants():
    assert SCHEDULE_PRESETS["vrd"] == Schedule(base_lr=3e-4, decay_rate=0.5, decay_interval=4000)
    assert SCHEDULE_PRESETS["vg"] == Schedule(base_lr=3e-4, decay_rate=0.7, decay_interval=35000)


def test_predicate_preset_zeroes_undetermined_terms(dataset):
    rc = make_run_config(small_model(dataset), task="predicate", steps=5, seed=0)
    assert rc.model.rel_undetermined_weight == 0.0
    assert rc.model.dc_loss_weight == 0.0
    assert rc.undetermined_ratio == 0.0


def test_relation_preset_keeps_defaults(dataset):
    rc = make_run_config(small_model(dataset), task="relation", steps=5, seed=0)
    assert rc.model.rel_undetermined_weight == 0.5
    assert rc.model.dc_loss_weight == 1.0
    assert rc.undetermined_ratio == 3.0


def test_predicate_pool_is_all_determinate(dataset):
    rc = make_run_config(small_model(dataset), task="predicate", steps=5, seed=0)
    pool = build_training_pool(dataset, build_extractor(dataset), rc)
    assert pool.determinate.all()
    assert pool.labels.sum() >= len(pool.labels)


def test_undetermined_cap_limits_pool(dataset):
    rc_uncapped = quick_run(dataset)
    rc_capped = quick_run(dataset, per_scene_undetermined_cap=5)
    extractor = build_extractor(dataset)
    uncapped = build_training_pool(dataset, extractor, rc_uncapped)
    capped = build_training_pool(dataset, extractor, rc_capped)
    n_train = len(dataset.split("train"))
    assert len(capped.undetermined_indices) <= 5 * n_train
    assert len(capped.undetermined_indices) < len(uncapped.undetermined_indices)
    assert len(capped.determinate_indices) == len(uncapped.determinate_indices)


def test_training_loss_decreases(dataset):
    result = run_training(dataset, quick_run(dataset, steps=150))
    losses = [r["loss"] for r in result.log_records if "loss" in r]
    assert losses[-1] < losses[0]


def test_training_logs_all_terms(dataset):
    result = run_training(dataset, quick_run(dataset, steps=3))
    record = result.log_records[0]
    for key in ("step", "learning_rate", "loss", "rel_determinate", "rel_undetermined",
                "dc_determinate", "dc_undetermined"):
        assert key in record


def test_training_is_reproducible(dataset, tmp_path):
    a = run_training(dataset, quick_run(dataset, steps=25))
    b = run_training(dataset, quick_run(dataset, steps=25))
    write_log(a.log_records, tmp_path / "a.jsonl")
    write_log(b.log_records, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    for name, param in a.model.parameters().items():
        np.testing.assert_array_equal(param, b.model.parameters()[name])


def test_validation_tracking(dataset):
    result = run_training(dataset, quick_run(dataset, steps=20, validation_interval=10))
    assert result.best_validation_recall is not None
    val_records = [r for r in result.log_records if "validation_recall" in r]
    assert len(val_records) == 2


@pytest.mark.filterwarnings("ignore:invalid value encountered")
@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_divergent_features_raise():
    # Non-finite visual features blow up the loss; the run must abort.
    from urelnet.errors import DivergenceError

    ds = generate_synthetic(
        SyntheticConfig(train_scenes=6, test_scenes=1, min_relations=2, max_relations=3, seed=14)
    )
    for key in ds.features.vectors:
        ds.features.vectors[key] = np.full(ds.features.dim, np.inf)
    rc = RunConfig(
        model=ModelConfig(
            predicate_count=ds.vocabulary.predicate_count,
            object_count=ds.vocabulary.object_count,
            visual_dim=ds.features.dim,
            embedding_dim=ds.embeddings.dim,
            transform_dim=12,
            dc_hidden_dim=6,
            rel_hidden_dim=12,
        ),
        steps=5,
        seed=0,
    )
    with pytest.raises(DivergenceError):
        run_training(ds, rc)


def test_checkpoint_roundtrip_bit_exact(dataset, tmp_path):
    result = run_training(dataset, quick_run(dataset, steps=5))
    path_a = tmp_path / "a.bin"
    path_b = tmp_path / "b.bin"
    save_checkpoint(path_a, result.model.config, result.model.parameters())
    config, params = load_checkpoint(path_a)
    assert config == result.model.config
    save_checkpoint(path_b, config, params)
    assert path_a.read_bytes() == path_b.read_bytes()
    for name, param in result.model.parameters().items():
        np.testing.assert_array_equal(params[name], param)


def test_checkpoint_loads_runnable_model(dataset, tmp_path):
    result = run_training(dataset, quick_run(dataset, steps=5))
    path = tmp_path / "model.bin"
    save_checkpoint(path, result.model.config, result.model.parameters())
    model = load_model(path)
    report = run_evaluation(dataset, model, tasks=("relation",), n_values=(10,))
    assert "relation" in report["tasks"]


def test_checkpoint_im_mode_roundtrip(dataset, tmp_path):
    rc = quick_run(dataset, model=small_model(dataset, im_mode=True), steps=4)
    result = run_training(dataset, rc)
    path = tmp_path / "im.bin"
    save_checkpoint(path, result.model.config, result.model.parameters())
    model = load_model(path)
    for name, param in result.model.parameters().items():
        np.testing.assert_array_equal(param, model.parameters()[name])
    # The three-network model must run the whole evaluation path too.
    report = run_evaluation(model=model, dataset=dataset,
                            tasks=("relation", "predicate"), n_values=(20,))
    assert set(report["tasks"]) == {"relation", "predicate"}


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_truncated(dataset, tmp_path):
    result = run_training(dataset, quick_run(dataset, steps=2))
    path = tmp_path / "t.bin"
    save_checkpoint(path, result.model.config, result.model.parameters())
    data = path.read_bytes()
    path.write_bytes(data[:-16])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_evaluation_mismatched_model_errors(dataset):
    config = small_model(dataset)
    wrong = ModelConfig(**{**config.to_json_dict(), "visual_dim": config.visual_dim + 3,
                           "enabled_modals": config.enabled_modals})
    model = build_model(wrong, np.random.default_rng(0))
    with pytest.raises(CheckpointError, match="visual_dim"):
        run_evaluation(dataset, model, tasks=("relation",))


def test_evaluation_empty_split_errors(dataset):
    result = run_training(dataset, quick_run(dataset, steps=2))
    ds_no_test = generate_synthetic(
        SyntheticConfig(train_scenes=5, test_scenes=0, min_relations=2, max_relations=3, seed=12)
    )
    with pytest.raises(UndefinedMetricError):
        run_evaluation(ds_no_test, result.model, tasks=("relation",))


def test_zero_shot_block_degrades_gracefully(dataset):
    # A dataset whose test types all appear in training: zero-shot block
    # reports the undefined-metric error, the plain block is unaffected.
    config = SyntheticConfig(
        train_scenes=40, test_scenes=5, zero_shot_types=0, min_relations=2, max_relations=3,
        seed=13,
    )
    ds = generate_synthetic(config)
    rc = quick_run(ds, model=small_model(ds), steps=5)
    result = run_training(ds, rc)
    report = run_evaluation(ds, result.model, tasks=("relation",), zero_shot=True)
    block = report["tasks"]["relation"]
    assert "recall" in block and "50" in block["recall"]
    zs = block["zero_shot"]
    assert isinstance(zs["50"], float) or zs.get("error") == "undefined-metric"
