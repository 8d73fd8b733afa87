"""Smoke tests for the Python bindings: the main operations end to end."""

import math

import numpy as np
import pytest

import kdctc


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "ds"
    kdctc.generate_synthetic_texture_dataset(3, 8, 64, 7, root)
    return root


@pytest.fixture(scope="module")
def splits(dataset):
    index = kdctc.scan_dataset(dataset)
    return kdctc.stratified_split(index, 0)


def test_scan_and_split(dataset, splits):
    index = kdctc.scan_dataset(dataset)
    assert index.classes == ["class_00", "class_01", "class_02"]
    assert len(index.samples) == 24
    assert index.image_size_hint == (64, 64)

    train, test = splits
    assert train.role == "train"
    assert train.per_class_count == 4
    assert test.per_class_count == 4
    train_paths = {p for p, _ in train.entries}
    test_paths = {p for p, _ in test.entries}
    assert not train_paths & test_paths


def test_low_data_counts_follow_the_table():
    assert [kdctc.low_data_count(p, 312) for p in (1, 3, 5, 10, 20, 30, 40, 50, 75, 100)] == [
        3, 9, 15, 30, 62, 93, 124, 156, 234, 312,
    ]


def test_manifest_roundtrip(tmp_path, splits):
    train, _ = splits
    path = tmp_path / "train.manifest"
    kdctc.write_manifest(train, path)
    back = kdctc.read_manifest(path)
    assert back.entries == train.entries
    assert back.classes == train.classes


def test_losses_match_numpy():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(6, 4)) * 3
    labels = rng.integers(0, 4, size=6).tolist()

    z = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    p_true = probs[np.arange(6), labels]
    expected_ce = float(np.mean(-np.log(p_true)))
    expected_focal = float(np.mean(-((1 - p_true) ** 2) * np.log(p_true)))

    assert kdctc.cross_entropy(logits, labels) == pytest.approx(expected_ce, abs=1e-9)
    assert kdctc.focal_loss(logits, labels, 2.0) == pytest.approx(expected_focal, abs=1e-9)
    assert kdctc.focal_loss(logits, labels, 0.0) == pytest.approx(expected_ce, abs=1e-9)

    assert kdctc.teacher_hard_label(logits) == probs.argmax(axis=1).tolist()

    cfg = kdctc.LossConfig()
    loss, variant = kdctc.distillation_loss(logits, labels, 15, cfg)
    assert variant == "focal"
    _, variant = kdctc.distillation_loss(logits, labels, 62, cfg)
    assert variant == "cross_entropy"
    assert kdctc.total_loss(2.0, 1.0, cfg) == pytest.approx(1.05, abs=0)


def test_model_forward_and_checkpoint(tmp_path):
    model = kdctc.build_model("tiny_cnn2", 3, seed=0)
    x = np.random.default_rng(1).normal(size=(2, 3, 32, 32))
    logits = model.forward(x)
    assert logits.shape == (2, 3)
    assert np.isfinite(logits).all()

    twin = kdctc.build_model("tiny_cnn2", 3, seed=0)
    np.testing.assert_array_equal(logits, twin.forward(x))

    ckpt = tmp_path / "m.ckpt"
    kdctc.save_checkpoint(model, ckpt)
    loaded = kdctc.load_checkpoint(ckpt)
    np.testing.assert_array_equal(logits, loaded.forward(x))

    with pytest.raises(kdctc.KdctcError):
        kdctc.build_model("nope", 3)


def test_train_and_evaluate(dataset, splits):
    train_manifest, test_manifest = splits
    model = kdctc.build_model("tiny_cnn2", 3, seed=0)
    config = {
        "batch_size": "6",
        "total_steps": "30",
        "global_size": "32",
        "local_size": "16",
        "method": "kd_ctcnet",
    }
    history = kdctc.train(model, train_manifest, dataset, config)
    assert len(history) == 30
    assert history[0]["dist_variant"] == "focal"  # 4 images/class <= 20
    assert all(step["total"] >= 0 and math.isfinite(step["total"]) for step in history)
    # The combined objective respects the configured weighting.
    for step in history:
        assert step["total"] == pytest.approx(0.5 * step["main_loss"] + 0.1 * 0.5 * step["dist_loss"], abs=1e-9)

    result = kdctc.evaluate(model, test_manifest, dataset, {"global_size": "32", "local_size": "16"})
    assert 0.0 <= result["accuracy"] <= 1.0
    confusion = np.array(result["confusion"])
    assert confusion.sum() == result["n_test"] == len(test_manifest.entries)
    assert np.trace(confusion) / confusion.sum() == pytest.approx(result["accuracy"], abs=1e-9)


def test_experiment_and_report(tmp_path, dataset):
    results_dir = tmp_path / "results"
    outcome = kdctc.run_experiment(
        dataset,
        results_dir,
        methods=["vanilla", "kd_ctcnet"],
        percentages=[100],
        seeds=[0],
        config={
            "arch": "tiny_cnn1",
            "total_steps": "2",
            "batch_size": "4",
            "global_size": "16",
            "local_size": "8",
        },
    )
    assert outcome["failures"] == []
    assert outcome["n_runs"] == 2
    assert {row["method"] for row in outcome["aggregates"]} == {"vanilla", "kd_ctcnet"}

    report_dir = tmp_path / "report"
    kdctc.write_report(results_dir, report_dir)
    assert (report_dir / "accuracy_table.txt").exists()
    assert (report_dir / "accuracy_table.csv").exists()
