import json
import struct

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from cascade_attn.data import (
    CLASS_NAMES,
    ClipSample,
    DatasetManifest,
    ManifestEntry,
    SyntheticTaskSpec,
    generate_synthetic,
    load_manifest,
    load_split,
    make_synthetic,
    nearest_signal_decode,
    read_clip,
    save_manifest,
    signal_patterns,
    subsample,
    write_clip,
)
from cascade_attn.exceptions import ArgumentError, DataError, FormatError


def sample(T=5, df=3, dc=2, label=3, seed=0):
    rng = np.random.default_rng(seed)
    return ClipSample("c", rng.normal(size=(T, df)).astype(np.float32), rng.normal(size=(T, dc)).astype(np.float32),
                      label)


def test_class_order():
    assert CLASS_NAMES == ("happy", "sad", "angry", "surprise", "disgust", "worried", "anxious", "neutral")


def test_clip_validation():
    with pytest.raises(DataError):
        ClipSample("x", np.zeros((3, 2)), np.zeros((4, 2)), 0)
    with pytest.raises(DataError):
        ClipSample("x", np.zeros((0, 2)), np.zeros((0, 2)), 0)
    with pytest.raises(DataError):
        ClipSample("x", np.full((1, 1), np.nan), np.zeros((1, 1)), 0)


def test_round_trip(tmp_path):
    s = sample()
    write_clip(s, tmp_path / "a.cfs")
    r = read_clip(tmp_path / "a.cfs")
    assert r.clip_id == "a" and r.label == 3
    assert r.face_stream.dtype == np.float64
    assert np.array_equal(r.face_stream, s.face_stream)
    assert np.array_equal(r.context_stream, s.context_stream)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 4), st.integers(0, 7), st.data())
def test_round_trip_property(tmp_path_factory, T, df, dc, label, data):
    f32 = st.floats(-1e6, 1e6, width=32)
    face = data.draw(arrays(np.float32, (T, df), elements=f32))
    ctx = data.draw(arrays(np.float32, (T, dc), elements=f32))
    path = tmp_path_factory.mktemp("rt") / "x.cfs"
    write_clip(ClipSample("x", face, ctx, label), path)
    r = read_clip(path)
    assert np.array_equal(r.face_stream, face) and np.array_equal(r.context_stream, ctx) and r.label == label


def test_hand_built_fixture(tmp_path):
    # T=1, D_face=1, D_context=1: magic, three u32, two f32, one u8
    raw = b"CFS1" + struct.pack("<3I", 1, 1, 1) + struct.pack("<f", 0.5) + struct.pack("<f", -2.25) + b"\x06"
    assert len(raw) == 25
    (tmp_path / "f.cfs").write_bytes(raw)
    c = read_clip(tmp_path / "f.cfs")
    assert c.num_frames == 1
    assert c.face_stream.tolist() == [[0.5]]
    assert c.context_stream.tolist() == [[-2.25]]
    assert c.label == 6 and CLASS_NAMES[c.label] == "anxious"
    write_clip(c, tmp_path / "g.cfs")
    assert (tmp_path / "g.cfs").read_bytes() == raw


def test_format_errors(tmp_path):
    p = tmp_path / "a.cfs"
    write_clip(sample(), p)
    good = p.read_bytes()

    def bad(raw, match, offset):
        p.write_bytes(raw)
        with pytest.raises(FormatError, match=match) as info:
            read_clip(p)
        assert info.value.offset == offset

    bad(b"CFS2" + good[4:], "magic", 0)
    bad(good[:4] + struct.pack("<I", 0) + good[8:], "zero frames", 4)
    bad(good[:-5], "truncated", len(good) - 5)
    bad(good[:10], "truncated", 10)
    bad(good + b"\x00", "trailing", len(good))
    bad(good[:-1] + b"\x08", "label", len(good) - 1)


def test_subsample():
    s = ClipSample("s", np.arange(10.0)[:, None], 10 + np.arange(10.0)[:, None], 1)
    assert subsample(s, 1, 0) is s
    out = subsample(s, 3, 1)
    assert out.face_stream[:, 0].tolist() == [1, 4, 7]
    assert out.context_stream[:, 0].tolist() == [11, 14, 17]
    assert out.num_frames == 3
    assert subsample(s, 25, 0).num_frames == 1
    with pytest.raises(ArgumentError):
        subsample(s, 3, 3)
    short = ClipSample("t", np.zeros((2, 1)), np.zeros((2, 1)), 0)
    with pytest.raises(DataError):
        subsample(short, 5, 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 7), st.data())
def test_subsample_keeps_pairing(T, stride, data):
    offset = data.draw(st.integers(0, min(stride, T) - 1))
    idx = np.arange(T, dtype=float)[:, None]
    out = subsample(ClipSample("p", idx, -idx, 0), stride, offset)
    npt.assert_array_equal(out.context_stream, -out.face_stream)
    assert out.face_stream[:, 0].tolist() == list(range(offset, T, stride))


def test_manifest_round_trip(tmp_path):
    m = DatasetManifest([ManifestEntry("a", "clips/a.cfs", 2, 7)], CLASS_NAMES, {"task": "joint"})
    save_manifest(m, tmp_path / "m.json")
    obj = json.loads((tmp_path / "m.json").read_text())
    assert obj["entries"] == [{"clip_id": "a", "path": "clips/a.cfs", "label": 2, "T": 7}]
    assert load_manifest(tmp_path / "m.json") == m
    obj["entries"][0]["label"] = 8
    (tmp_path / "m.json").write_text(json.dumps(obj))
    with pytest.raises(FormatError):
        load_manifest(tmp_path / "m.json")


def test_generator_is_byte_identical(tmp_path):
    spec = SyntheticTaskSpec(num_train=20, num_valid=5, num_test=5, seed=7)
    trees = []
    for name in ("a", "b"):
        generate_synthetic(spec, tmp_path / name)
        root = tmp_path / name
        trees.append({str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
    assert trees[0] == trees[1]
    assert len(trees[0]) == 33
    clips = load_split(tmp_path / "a", "train")
    assert [c.clip_id for c in clips] == [f"train_{i:05d}" for i in range(20)]
    with pytest.raises(DataError):
        load_split(tmp_path / "a", "holdout")


def test_different_seeds_differ():
    a = make_synthetic(SyntheticTaskSpec(num_train=5, num_valid=0, num_test=0, seed=1))["train"]
    b = make_synthetic(SyntheticTaskSpec(num_train=5, num_valid=0, num_test=0, seed=2))["train"]
    assert not np.array_equal(a[0].face_stream[:1], b[0].face_stream[:1])


def test_joint_labels_cover_four_classes():
    clips = make_synthetic(SyntheticTaskSpec(num_train=400, num_valid=0, num_test=0))["train"]
    labels = np.array([c.label for c in clips])
    assert set(labels) == {0, 1, 2, 3}
    assert all(8 <= c.num_frames <= 32 for c in clips)


@pytest.mark.parametrize("task", ["joint", "face-only", "context-only"])
def test_noise_free_classes_separate_at_the_signal_step(task):
    spec = SyntheticTaskSpec(task=task, num_train=200, num_valid=0, num_test=0, noise=0.0, seed=3)
    p_face, p_ctx = signal_patterns(spec)
    for c in make_synthetic(spec)["train"]:
        bits = []
        for stream, p in ((c.face_stream, p_face), (c.context_stream, p_ctx)):
            step = np.flatnonzero(np.any(stream != 0, axis=1))
            if len(step) == 0:
                bits.append(None)
                continue
            assert len(step) == 1
            # linear probe with weight p1 - p0 separates the two patterns
            bits.append(int(stream[step[0]] @ (p[1] - p[0]) > 0))
        if task == "joint":
            assert c.label == 2 * bits[0] + bits[1]
        elif task == "face-only":
            assert bits[1] is None and c.label == bits[0]
        else:
            assert bits[0] is None and c.label == bits[1]


def test_joint_task_is_identifiable():
    spec = SyntheticTaskSpec(num_train=1000, num_valid=0, num_test=0, seed=4)
    clips = make_synthetic(spec)["train"]
    acc = np.mean([nearest_signal_decode(c, spec) == c.label for c in clips])
    assert acc > 0.95


def test_face_only_context_is_label_independent():
    spec = SyntheticTaskSpec(task="face-only", num_train=2000, num_valid=0, num_test=0, seed=5)
    clips = make_synthetic(spec)["train"]
    labels = np.array([c.label for c in clips])
    # chi-square on sign(mean of first context coordinate) vs label
    feat = np.array([c.context_stream[:, 0].mean() > 0 for c in clips])
    table = np.array([[np.sum((labels == y) & (feat == f)) for f in (False, True)] for y in (0, 1)])
    assert stats.chi2_contingency(table)[1] > 0.001
    # the face stream, by contrast, carries the label
    p_face = signal_patterns(spec)[0]
    projections = [c.face_stream @ (p_face[1] - p_face[0]) for c in clips]
    guess = np.array([int(v[np.argmax(np.abs(v))] > 0) for v in projections])
    assert np.mean(guess == labels) > 0.95
