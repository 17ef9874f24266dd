"""Smoke tests for the python bindings."""

import numpy as np
import pytest

import attnlens


@pytest.fixture(scope="module")
def vit_model():
    cfg = attnlens.ModelConfig.vit_toy()
    weights = attnlens.random_weights(cfg, seed=7)
    return cfg, attnlens.Model(cfg, weights)


@pytest.fixture(scope="module")
def dataset():
    return attnlens.make_synthetic_dataset(seed=3, n=4, grid=8, noise=0.1)


def test_config_roundtrip():
    cfg = attnlens.ModelConfig.swin_toy()
    back = attnlens.ModelConfig.from_json(cfg.to_json())
    assert back.variant == "swin"
    assert back.stage_depths == [2, 2]
    assert back.tokens(0) == 16
    assert back.tokens(1) == 4


def test_logits_shape_and_determinism(vit_model, dataset):
    cfg, model = vit_model
    image = dataset[0]["image"]
    logits = model.logits(image)
    assert logits.shape == (cfg.num_classes,)
    assert np.array_equal(logits, model.logits(image))
    assert model.predict(image) == int(np.argmax(logits))


def test_attribute_output(vit_model, dataset):
    cfg, model = vit_model
    image = dataset[0]["image"]
    result = model.attribute(image, upsample="nearest")
    assert result["grid"].shape == (2, 2)
    assert result["pixels"].shape == (8, 8)
    assert (result["grid"] >= 0).all()
    assert result["pixels"].min() >= 0.0 and result["pixels"].max() <= 1.0
    again = model.attribute(image, upsample="nearest")
    assert np.array_equal(result["pixels"], again["pixels"])


def test_rollout_matches_no_gradient_chain_shape(vit_model, dataset):
    _, model = vit_model
    grid = model.rollout(dataset[0]["image"])
    assert grid.shape == (2, 2)
    assert (grid >= 0).all()


def test_sum_normalize():
    value, degenerate = attnlens.sum_normalize(np.array([[1.0, 3.0]]))
    assert not degenerate
    assert np.allclose(value, [[0.25, 0.75]])
    zero, flagged = attnlens.sum_normalize(np.zeros((2, 2)))
    assert flagged
    assert np.array_equal(zero, np.zeros((2, 2)))


def test_merge_rows():
    merged = attnlens.merge_rows(np.eye(4), [[0, 1], [2, 3]])
    assert np.allclose(merged, [[0.5, 0.5, 0, 0], [0, 0, 0.5, 0.5]])


def test_seg_metrics_perfect():
    gt = np.array([[1.0, 0.0], [0.0, 1.0]])
    metrics = attnlens.seg_metrics(gt, gt)
    assert metrics["miou"] == pytest.approx(1.0)
    assert metrics["map"] == pytest.approx(1.0)
    assert metrics["pixel_acc"] == pytest.approx(1.0)
    assert metrics["mf1"] == pytest.approx(1.0)


def test_perturbation_curve(vit_model, dataset):
    _, model = vit_model
    curve = attnlens.perturbation_curve(model, dataset, polarity="negative", target="top")
    assert len(curve["fractions"]) == 10
    assert curve["accuracy"][0] == pytest.approx(1.0)
    assert 0.0 <= curve["auc"] <= 1.0


def test_trapezoid_auc():
    fractions = [round(0.1 * i, 1) for i in range(10)]
    linear = [1.0 - i / 9.0 for i in range(10)]
    assert attnlens.trapezoid_auc(fractions, linear) == pytest.approx(0.45)


def test_errors_are_typed():
    with pytest.raises(attnlens.AttnlensError):
        attnlens.seg_metrics(np.zeros((2, 2)), np.zeros((2, 2)))
