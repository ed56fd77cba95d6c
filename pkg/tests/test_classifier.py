"""Evaluation classifier training, freezing, and feature extraction."""
import numpy as np
import pytest

from quanvdiff import data
from quanvdiff.classifier import (
    ClassifierTrainingError,
    train_eval_classifier,
)
from quanvdiff.cli import load_classifier, save_classifier


@pytest.fixture(scope="module")
def toy_classifier():
    ds = data.make_toy_dataset(60, seed=0)
    train, val = data.split_dataset(ds, (0.9, 0.1), seed=1)
    clf = train_eval_classifier(train, val, seed=0)
    return clf, train, val


def test_reaches_target_validation_accuracy(toy_classifier):
    clf, _, _ = toy_classifier
    assert clf.val_accuracy >= 0.99
    assert "acc" in clf.extractor_id


def test_frozen_model_is_bitwise_repeatable(toy_classifier):
    clf, _, val = toy_classifier
    a = clf.probabilities(val.images)
    b = clf.probabilities(val.images)
    assert np.array_equal(a, b)


def test_feature_dim_matches_declaration(toy_classifier):
    clf, _, val = toy_classifier
    feats = clf.features(val.images)
    assert feats.shape == (len(val), clf.feature_dim)
    assert np.isfinite(feats).all()


def test_probabilities_are_distributions(toy_classifier):
    clf, _, val = toy_classifier
    probs = clf.probabilities(val.images)
    assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-9
    assert probs.min() >= 0.0


def test_budget_floor_failure():
    # two-step budget cannot reach the floor on fresh data
    ds = data.make_toy_dataset(30, seed=3)
    train, val = data.split_dataset(ds, (0.9, 0.1), seed=1)
    with pytest.raises(ClassifierTrainingError, match="below floor"):
        train_eval_classifier(train, val, seed=0, max_steps=2,
                              floor_accuracy=0.95)


def test_classifier_checkpoint_round_trip(toy_classifier, tmp_path):
    clf, _, val = toy_classifier
    path = tmp_path / "clf.qckpt"
    save_classifier(path, clf)
    loaded = load_classifier(path)
    assert loaded.num_classes == clf.num_classes
    assert loaded.val_accuracy == pytest.approx(clf.val_accuracy, abs=1e-6)
    assert np.array_equal(loaded.predict(val.images), clf.predict(val.images))
