import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from numtag.metrics import (
    EmptyEvalSet,
    ShapeMismatch,
    accuracy,
    constant_baseline,
    evaluate,
    one_hot,
    report_from_predictions,
    soft_dice,
    soft_dice_batch,
)
from numtag.tagger import ModelConfig, init_model


def test_uniform_two_positions_class_terms():
    dice, terms = soft_dice(np.full((2, 3), 1 / 3), one_hot([0, 1]), per_class=True)
    np.testing.assert_allclose(terms, [0.5454582644323819, 0.5454582644323819, 4.49979750911209e-05], atol=1e-15)
    assert dice == pytest.approx(0.3636538422799517, abs=1e-15)


def test_perfect_and_absent_class():
    t = one_hot([0, 2, 2, 1])
    assert soft_dice(t, t) == 1.0
    assert soft_dice(one_hot([0]), one_hot([0])) == 1.0


def test_integer_labels_accepted():
    p = np.full((2, 3), 1 / 3)
    assert soft_dice(p, np.array([0, 1])) == soft_dice(p, one_hot([0, 1]))


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        soft_dice(np.zeros((4, 3)), one_hot([0, 1, 2]))


def test_accuracy_examples():
    labels = np.zeros(50, dtype=int)
    labels[:5] = [1, 2, 1, 2, 2]
    assert accuracy(one_hot(labels), labels) == 1.0
    off = labels.copy()
    off[20] = 1
    assert accuracy(one_hot(off), labels) == pytest.approx(0.98)
    assert accuracy(constant_baseline(labels), labels) == pytest.approx(0.90)


def test_accuracy_ties_go_to_lowest_class():
    assert accuracy(np.array([[0.4, 0.4, 0.2]]), np.array([0])) == 1.0
    assert accuracy(np.array([[0.2, 0.4, 0.4]]), np.array([2])) == 0.0


def test_single_instance_report_equals_instance():
    p = np.random.default_rng(0).dirichlet(np.ones(3), size=(1, 50))
    labels = np.random.default_rng(1).integers(0, 3, (1, 50))
    report = report_from_predictions(p, labels)
    assert report.dice == soft_dice(p[0], labels[0])
    assert report.accuracy == accuracy(p[0], labels[0])
    assert report.n_instances == 1


def test_report_invariants_and_json():
    rng = np.random.default_rng(2)
    p = rng.dirichlet(np.ones(3), size=(8, 50))
    labels = rng.integers(0, 3, (8, 50))
    report = report_from_predictions(p, labels)
    assert report.dice == pytest.approx(np.mean(report.per_class_dice), abs=1e-12)
    assert all(0 <= v <= 1 for v in [report.dice, report.accuracy, *report.per_class_dice])
    assert json.loads(report.to_json())["n_instances"] == 8
    assert report.summary().startswith("dice=")
    pooled = report_from_predictions(p, labels, pooled=True)
    assert pooled.accuracy == report.accuracy and pooled.dice != report.dice


def test_evaluate_empty():
    with pytest.raises(EmptyEvalSet):
        evaluate(init_model(ModelConfig(vocab_size=20, seq_len=5, embed_dim=4, hidden_dim=3)), [])


def test_evaluate_matches_predictions(small_encoded):
    vocab, instances = small_encoded
    model = init_model(ModelConfig(vocab_size=len(vocab), embed_dim=8, hidden_dim=4), seed=0)
    report = evaluate(model, instances[:10])
    assert report.n_instances == 10 and 0 < report.dice <= 1


probs = arrays(np.float64, (6, 3), elements=st.floats(0.01, 1.0)).map(lambda a: a / a.sum(axis=1, keepdims=True))
labelings = arrays(np.int64, 6, elements=st.integers(0, 2))


@settings(max_examples=200, deadline=None)
@given(probs, labelings)
def test_dice_bounds_and_iff(p, labels):
    t = one_hot(labels)
    d = soft_dice(p, t)
    assert 0 < d <= 1
    assert (d == 1.0) == bool(np.array_equal(p, t))
    assert soft_dice(t, t) == 1.0


@settings(max_examples=200, deadline=None)
@given(probs, labelings, st.permutations([0, 1, 2]))
def test_dice_class_permutation(p, labels, perm):
    t = one_hot(labels)
    assert soft_dice(p[:, perm], t[:, perm]) == pytest.approx(soft_dice(p, t), abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(probs, labelings, st.floats(1.0, 50.0))
def test_accuracy_only_sees_argmax(p, labels, factor):
    boosted = p.copy()
    rows = np.arange(len(p))
    boosted[rows, p.argmax(axis=1)] *= factor
    assert accuracy(boosted, labels) == accuracy(p, labels)


def test_batch_matches_single():
    rng = np.random.default_rng(3)
    p = rng.dirichlet(np.ones(3), size=(5, 50))
    labels = rng.integers(0, 3, (5, 50))
    per_seq, _ = soft_dice_batch(p, labels)
    np.testing.assert_allclose(per_seq, [soft_dice(p[i], labels[i]) for i in range(5)], atol=1e-15)
