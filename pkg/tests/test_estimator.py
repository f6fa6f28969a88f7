import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cascade_attn.data import SyntheticTaskSpec, make_synthetic, random_clips
from cascade_attn.estimator import CascadeAttentionClassifier, check_clips
from cascade_attn.exceptions import ConfigError, DataError

SMALL = dict(encoded_dim=6, hidden_size=6, left_layers=1, right_layers=1, batch_size=8)


def test_params_round_trip():
    est = CascadeAttentionClassifier(kind="parallel-rnn", epochs=3, random_state=4)
    params = est.get_params()
    assert params["kind"] == "parallel-rnn" and params["epochs"] == 3 and params["random_state"] == 4
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(hidden_size=7)
    assert est.hidden_size == 7


def test_check_clips():
    clips = check_clips([(np.zeros((3, 2)), np.ones((3, 4)))])
    assert clips[0].face_stream.shape == (3, 2)
    with pytest.raises(DataError):
        check_clips([])
    with pytest.raises(DataError):
        check_clips([np.zeros(3)])
    with pytest.raises(DataError):
        check_clips([(np.zeros((3, 2)), np.zeros((3, 4))), (np.zeros((2, 3)), np.zeros((2, 4)))])
    with pytest.raises(DataError):
        check_clips([(np.zeros((3, 2)), np.zeros((2, 4)))])
    with pytest.raises(DataError):
        check_clips([(np.zeros((3, 2)), np.zeros((3, 4)))], face_dim=5)


def test_unfitted():
    with pytest.raises(NotFittedError):
        CascadeAttentionClassifier().predict([(np.zeros((2, 2)), np.zeros((2, 2)))])


def test_fit_predict_on_pairs_with_string_labels():
    spec = SyntheticTaskSpec(task="face-only", num_train=64, num_valid=0, num_test=0, t_min=4, t_max=8,
                             face_dim=4, context_dim=3, seed=1)
    clips = make_synthetic(spec)["train"]
    X = [(c.face_stream, c.context_stream) for c in clips]
    y = np.array(["calm", "tense"])[[c.label for c in clips]]
    est = CascadeAttentionClassifier(kind="face-rnn", epochs=60, learning_rate=1e-2, **SMALL).fit(X, y)
    assert list(est.classes_) == ["calm", "tense"]
    assert est.face_dim_ == 4 and est.context_dim_ == 3
    assert len(est.history_) == 60
    proba = est.predict_proba(X)
    assert proba.shape == (64, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    pred = est.predict(X)
    assert set(pred) <= {"calm", "tense"}
    assert est.score(X, y) > 0.9
    logits = est.decision_function(X)
    assert np.array_equal(np.argmax(logits, axis=1), np.argmax(proba, axis=1))


def test_fit_is_deterministic_and_accepts_clip_samples():
    clips = random_clips(10, 3, 2, 3, 6, num_classes=3, seed=2)
    y = [c.label for c in clips]
    a = CascadeAttentionClassifier(epochs=2, random_state=5, **SMALL).fit(clips, y)
    b = CascadeAttentionClassifier(epochs=2, random_state=5, **SMALL).fit(clips, y)
    assert np.array_equal(a.predict_proba(clips), b.predict_proba(clips))
    valid = random_clips(4, 3, 2, 3, 6, num_classes=3, seed=3)
    c = CascadeAttentionClassifier(epochs=2, random_state=5, **SMALL).fit(clips, y, valid, [v.label for v in valid])
    assert c.history_[0]["valid_acc"] is not None


def test_fit_errors():
    clips = random_clips(4, 3, 2, seed=0)
    est = CascadeAttentionClassifier(epochs=1, **SMALL)
    with pytest.raises(DataError):
        est.fit(clips, [0, 1, 2])
    with pytest.raises(DataError):
        est.fit(clips, np.zeros((4, 1)))
    with pytest.raises(DataError):
        CascadeAttentionClassifier(epochs=1, n_classes=2, **SMALL).fit(clips, [0, 1, 2, 3])
    with pytest.raises(ConfigError):
        CascadeAttentionClassifier(epochs=1, batch_size=0).fit(clips, [0, 1, 0, 1])
    est.fit(clips, [0, 1, 0, 1])
    with pytest.raises(DataError):
        est.predict(random_clips(2, 5, 2, seed=1))
