import json

import numpy as np
import pytest

from cascade_attn.exceptions import ArgumentError
from cascade_attn.metrics import (
    accuracy,
    average_precision,
    confusion_matrix,
    evaluation_report,
    format_confusion,
    mean_average_precision,
    rater_disagreement,
)

from oracles import brute_force_ap, brute_force_map, hand_confusion


def test_accuracy_examples():
    assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    labels = np.arange(12) % 4
    assert accuracy((labels + 1) % 4, labels) == 0.0
    assert accuracy([1, 2, 3, 0], [1, 2, 3, 3]) == 0.75
    with pytest.raises(ArgumentError):
        accuracy([1, 2], [1])
    with pytest.raises(ArgumentError):
        accuracy([], [])


def test_ap_examples():
    assert average_precision([0.9, 0.8, 0.2, 0.1], [True, True, False, False]) == 1.0
    assert average_precision([0.3], [True]) == 1.0
    assert average_precision([0.9, 0.8, 0.7], [True, False, True]) == pytest.approx((1 + 2 / 3) / 2, rel=1e-15)
    assert average_precision([0.9, 0.8, 0.7], [True, False, True]) == pytest.approx(0.83333, abs=5e-6)
    with pytest.raises(ArgumentError):
        average_precision([0.1, 0.2], [False, False])


def test_ap_ties_break_by_index():
    # positive first among equal scores -> 1.0; positive last -> 1/2
    assert average_precision([0.5, 0.5], [True, False]) == 1.0
    assert average_precision([0.5, 0.5], [False, True]) == 0.5


def test_ap_is_rank_only():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = rng.normal(size=15)
        pos = rng.random(15) < 0.4
        pos[0] = True
        ap = average_precision(s, pos)
        assert average_precision(np.exp(2 * s) + 3, pos) == ap
        assert average_precision(np.arctan(s), pos) == ap


def test_map_examples():
    probs = np.eye(3)[[0, 1, 2, 0, 1, 2]]
    m, per_class = mean_average_precision(probs, [0, 1, 2, 0, 1, 2])
    assert m == 1.0 and per_class == [1.0, 1.0, 1.0]

    probs = np.full((6, 3), 1 / 3)
    labels = [2, 0, 1, 0, 2, 1]
    assert mean_average_precision(probs, labels) == pytest.approx(brute_force_map(probs, labels), abs=0)

    probs = np.random.default_rng(1).dirichlet(np.ones(4), size=6)
    with pytest.warns(UserWarning, match="skipped"):
        m, per_class = mean_average_precision(probs, [0, 1, 3, 3, 0, 1])
    assert per_class[2] is None
    assert m == pytest.approx(np.mean([a for a in per_class if a is not None]))


def test_map_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(200):
        N, K = int(rng.integers(1, 21)), int(rng.integers(1, 6))
        # coarse values force plenty of ties
        probs = rng.integers(0, 4, size=(N, K)) / 4.0
        labels = rng.integers(0, K, size=N)
        with np.testing.suppress_warnings() as sup:
            sup.filter(UserWarning)
            m, per = mean_average_precision(probs, labels)
        bm, bper = brute_force_map(probs, labels)
        assert m == bm and per == bper


def test_map_errors():
    with pytest.raises(ArgumentError):
        mean_average_precision(np.ones((3, 2)), [0, 1])
    with pytest.raises(ArgumentError):
        mean_average_precision(np.ones((2, 2)), [0, 2])


def test_random_scores_ap_near_positive_rate():
    rng = np.random.default_rng(3)
    pos = np.arange(2000) % 2 == 0
    assert abs(average_precision(rng.random(2000), pos) - 0.5) < 0.1


def test_confusion_fixture():
    labels = [0, 0, 1, 1, 2, 2]
    preds = [0, 1, 1, 1, 0, 2]
    cm = confusion_matrix(preds, labels, 3)
    assert cm.tolist() == [[1, 1, 0], [0, 2, 0], [1, 0, 1]]
    assert np.array_equal(cm, hand_confusion(preds, labels, 3))
    assert cm.sum() == 6
    assert np.trace(cm) / cm.sum() == accuracy(preds, labels)
    assert np.array_equal(confusion_matrix(labels, labels, 3), np.diag([2, 2, 2]))


def test_confusion_rows_conserved():
    rng = np.random.default_rng(4)
    labels = rng.integers(0, 5, size=100)
    for _ in range(10):
        cm = confusion_matrix(rng.integers(0, 5, size=100), labels, 5)
        assert cm.sum(axis=1).tolist() == np.bincount(labels, minlength=5).tolist()


def test_confusion_range_error():
    with pytest.raises(ArgumentError):
        confusion_matrix([0, 3], [0, 1], 3)


def test_format_confusion():
    text = format_confusion(np.array([[1, 3], [0, 0]]), ["happy", "sad"])
    lines = text.splitlines()
    assert lines[0].split()[1:] == ["happy", "sad"]
    assert lines[1].split() == ["happy", "25.0", "75.0"]
    assert lines[2].split() == ["sad", "0.0", "0.0"]


def test_evaluation_report_json():
    probs = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.6, 0.3, 0.1]])
    r = evaluation_report(probs, [0, 1, 1], class_names=("a", "b", "c"))
    obj = json.loads(r.dumps())
    assert obj["accuracy"] == pytest.approx(2 / 3)
    assert obj["per_class_ap"][2] is None
    assert obj["confusion"] == [[1, 0, 0], [1, 1, 0], [0, 0, 0]]
    assert 0 <= obj["map"] <= 1


def test_rater_disagreement_examples():
    assert rater_disagreement({"happy": [[3, 3, 3], [0, 0]]}) == {"happy": 0.0}
    assert rater_disagreement({"sad": [[0, 0, 5, 5, 0]]})["sad"] == pytest.approx(6.0, abs=1e-15)
    # [0, 2, 4, 2] has population variance 2.0 and [0, 4] has 4.0
    assert rater_disagreement({"angry": [[0, 2, 4, 2], [0, 4]]})["angry"] == pytest.approx(3.0, abs=1e-15)


def test_rater_disagreement_exclusion_and_validation():
    with pytest.warns(UserWarning, match="excluded"):
        out = rater_disagreement({"worried": [[2], [1, 3]]})
    assert out["worried"] == 1.0
    with pytest.raises(ArgumentError):
        rater_disagreement({"neutral": [[0, 6]]})
    with pytest.raises(ArgumentError):
        rater_disagreement({"neutral": [[0, 1.5]]})
