"""Clip files, dataset manifests, temporal subsampling and the synthetic two-stream tasks.

A clip is stored as one little-endian binary file::

    offset  size          field
    0       4             magic b"CFS1"
    4       4             u32 T (frames, >= 1)
    8       4             u32 D_face
    12      4             u32 D_context
    16      4*T*D_face    f32 face features, row-major (frame-major)
    ...     4*T*D_context f32 context features, row-major
    ...     1             u8 label (0..7)

A split is described by a JSON manifest listing clip files relative to the
manifest's directory.
"""

import enum
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ArgumentError, DataError, FormatError
from .tensor import DTYPE

CLASS_NAMES = ("happy", "sad", "angry", "surprise", "disgust", "worried", "anxious", "neutral")
CLIP_MAGIC = b"CFS1"
_CLIP_HEADER = struct.Struct("<4s3I")
SPLITS = ("train", "valid", "test")


@dataclass
class ClipSample:
    clip_id: str
    face_stream: np.ndarray     # (T, D_face)
    context_stream: np.ndarray  # (T, D_context)
    label: int

    def __post_init__(self):
        self.face_stream = np.asarray(self.face_stream, dtype=DTYPE)
        self.context_stream = np.asarray(self.context_stream, dtype=DTYPE)
        if self.face_stream.ndim != 2 or self.context_stream.ndim != 2:
            raise DataError(f"clip {self.clip_id}: streams must be 2-D (T, D)")
        if len(self.face_stream) != len(self.context_stream):
            raise DataError(
                f"clip {self.clip_id}: face has {len(self.face_stream)} frames, "
                f"context has {len(self.context_stream)}"
            )
        if len(self.face_stream) < 1:
            raise DataError(f"clip {self.clip_id}: no frames")
        if not (np.all(np.isfinite(self.face_stream)) and np.all(np.isfinite(self.context_stream))):
            raise DataError(f"clip {self.clip_id}: non-finite features")
        self.label = int(self.label)

    @property
    def num_frames(self):
        return len(self.face_stream)


def write_clip(sample, path):
    if not 0 <= sample.label <= 255:
        raise FormatError(f"label {sample.label} does not fit the u8 label field")
    T, d_face = sample.face_stream.shape
    d_context = sample.context_stream.shape[1]
    payload = b"".join([
        _CLIP_HEADER.pack(CLIP_MAGIC, T, d_face, d_context),
        np.ascontiguousarray(sample.face_stream, dtype="<f4").tobytes(),
        np.ascontiguousarray(sample.context_stream, dtype="<f4").tobytes(),
        struct.pack("<B", sample.label),
    ])
    Path(path).write_bytes(payload)


def read_clip(path, clip_id=None):
    """Decode a CFS1 file; features are widened to float64."""
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < _CLIP_HEADER.size:
        raise FormatError(f"{path}: truncated header", offset=len(buf))
    magic, T, d_face, d_context = _CLIP_HEADER.unpack_from(buf, 0)
    if magic != CLIP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
    if T == 0:
        raise FormatError(f"{path}: clip has zero frames", offset=4)
    if d_face == 0 or d_context == 0:
        raise FormatError(f"{path}: zero feature dimension", offset=8 if d_face == 0 else 12)
    off = _CLIP_HEADER.size
    n_face, n_context = T * d_face, T * d_context
    expected = off + 4 * (n_face + n_context) + 1
    if len(buf) < expected:
        raise FormatError(f"{path}: truncated payload, expected {expected} bytes", offset=len(buf))
    if len(buf) > expected:
        raise FormatError(f"{path}: {len(buf) - expected} trailing bytes", offset=expected)
    face = np.frombuffer(buf, dtype="<f4", count=n_face, offset=off).reshape(T, d_face)
    off += 4 * n_face
    context = np.frombuffer(buf, dtype="<f4", count=n_context, offset=off).reshape(T, d_context)
    off += 4 * n_context
    label = buf[off]
    if label >= len(CLASS_NAMES):
        raise FormatError(f"{path}: label {label} outside 0..{len(CLASS_NAMES) - 1}", offset=off)
    return ClipSample(clip_id or path.stem, face.astype(DTYPE), context.astype(DTYPE), label)


def subsample(sample, stride, offset=0):
    """Keep frames ``offset, offset + stride, ...`` of both streams."""
    if stride < 1:
        raise ArgumentError(f"stride must be positive, got {stride}")
    if not 0 <= offset < stride:
        raise ArgumentError(f"offset {offset} must lie in [0, {stride})")
    if offset >= sample.num_frames:
        raise DataError(f"clip {sample.clip_id}: offset {offset} leaves no frames out of {sample.num_frames}")
    if stride == 1 and offset == 0:
        return sample
    return ClipSample(
        sample.clip_id,
        sample.face_stream[offset::stride],
        sample.context_stream[offset::stride],
        sample.label,
    )


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    clip_id: str
    path: str
    label: int
    T: int


@dataclass
class DatasetManifest:
    entries: list
    class_names: tuple = CLASS_NAMES
    meta: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "class_names": list(self.class_names),
            "entries": [vars(e) for e in self.entries],
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, obj):
        try:
            names = tuple(obj["class_names"])
            entries = [ManifestEntry(str(e["clip_id"]), str(e["path"]), int(e["label"]), int(e["T"]))
                       for e in obj["entries"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed manifest: {exc}") from exc
        for e in entries:
            if not 0 <= e.label < len(names):
                raise FormatError(f"manifest entry {e.clip_id}: label {e.label} out of range")
        return cls(entries, names, obj.get("meta", {}))


def save_manifest(manifest, path):
    Path(path).write_text(json.dumps(manifest.to_json(), indent=1, sort_keys=True) + "\n")


def load_manifest(path):
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    return DatasetManifest.from_json(obj)


def load_split(data_dir, split):
    """Read every clip of ``split`` from ``data_dir/<split>.json``."""
    data_dir = Path(data_dir)
    manifest_path = data_dir / f"{split}.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest for split {split!r} at {manifest_path}")
    manifest = load_manifest(manifest_path)
    clips = []
    for e in manifest.entries:
        clip = read_clip(data_dir / e.path, clip_id=e.clip_id)
        if clip.label != e.label or clip.num_frames != e.T:
            raise DataError(f"clip {e.clip_id}: file disagrees with manifest (label/T)")
        clips.append(clip)
    return clips


# ---------------------------------------------------------------------------
# synthetic tasks
# ---------------------------------------------------------------------------

class SyntheticTask(enum.Enum):
    FACE_ONLY = "face-only"
    CONTEXT_ONLY = "context-only"
    JOINT = "joint"


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Generator settings.

    In every task a stream "carries bit b" when the pattern vector for b is
    added to one uniformly chosen frame. Joint: face carries b_f, context
    carries b_c (independent frames), label ``2*b_f + b_c``. Face-only /
    context-only: one stream carries the label bit, the other is pure noise.
    """

    task: SyntheticTask = SyntheticTask.JOINT
    num_train: int = 2000
    num_valid: int = 400
    num_test: int = 400
    t_min: int = 8
    t_max: int = 32
    face_dim: int = 16
    context_dim: int = 16
    signal: float = 1.0
    noise: float = 0.25
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "task", SyntheticTask(self.task))
        if not 1 <= self.t_min <= self.t_max:
            raise ArgumentError(f"need 1 <= t_min <= t_max, got {self.t_min}..{self.t_max}")
        if self.face_dim < 1 or self.context_dim < 1:
            raise ArgumentError("feature dimensions must be positive")
        if min(self.num_train, self.num_valid, self.num_test) < 0:
            raise ArgumentError("split sizes must be non-negative")
        if self.noise < 0:
            raise ArgumentError(f"noise sigma must be non-negative, got {self.noise}")

    @property
    def num_effective_classes(self):
        return 4 if self.task is SyntheticTask.JOINT else 2

    def split_sizes(self):
        return {"train": self.num_train, "valid": self.num_valid, "test": self.num_test}


def signal_patterns(spec):
    """The two per-stream pattern vectors, shape (2, D), entries +-signal."""
    rng = np.random.default_rng([spec.seed, 0])
    face = spec.signal * rng.choice([-1.0, 1.0], size=(2, spec.face_dim))
    context = spec.signal * rng.choice([-1.0, 1.0], size=(2, spec.context_dim))
    return face, context


def _make_clip(spec, rng, patterns, clip_id):
    T = int(rng.integers(spec.t_min, spec.t_max + 1))
    face = spec.noise * rng.standard_normal((T, spec.face_dim))
    context = spec.noise * rng.standard_normal((T, spec.context_dim))
    p_face, p_context = patterns
    b_face, b_context = (int(b) for b in rng.integers(0, 2, size=2))
    t_face, t_context = (int(t) for t in rng.integers(0, T, size=2))
    if spec.task is SyntheticTask.JOINT:
        face[t_face] += p_face[b_face]
        context[t_context] += p_context[b_context]
        label = 2 * b_face + b_context
    elif spec.task is SyntheticTask.FACE_ONLY:
        face[t_face] += p_face[b_face]
        label = b_face
    else:
        context[t_context] += p_context[b_context]
        label = b_context
    return ClipSample(clip_id, face, context, label)


def make_synthetic(spec):
    """Build all three splits in memory: ``{"train": [...], "valid": [...], "test": [...]}``."""
    patterns = signal_patterns(spec)
    out = {}
    for split_index, (split, n) in enumerate(spec.split_sizes().items(), start=1):
        rng = np.random.default_rng([spec.seed, split_index])
        out[split] = [_make_clip(spec, rng, patterns, f"{split}_{i:05d}") for i in range(n)]
    return out


def generate_synthetic(spec, out_dir):
    """Write clip files and one manifest per split under ``out_dir``.

    Returns the in-memory splits. Output is byte-identical for equal specs.
    """
    out_dir = Path(out_dir)
    splits = make_synthetic(spec)
    meta = {
        "task": spec.task.value,
        "seed": int(spec.seed),
        "face_dim": spec.face_dim,
        "context_dim": spec.context_dim,
        "t_min": spec.t_min,
        "t_max": spec.t_max,
        "signal": spec.signal,
        "noise": spec.noise,
    }
    for split, clips in splits.items():
        clip_dir = out_dir / "clips" / split
        clip_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for clip in clips:
            rel = f"clips/{split}/{clip.clip_id}.cfs"
            write_clip(clip, out_dir / rel)
            entries.append(ManifestEntry(clip.clip_id, rel, clip.label, clip.num_frames))
        save_manifest(DatasetManifest(entries, CLASS_NAMES, dict(meta, split=split)), out_dir / f"{split}.json")
    return splits


def nearest_signal_decode(clip, spec, patterns=None):
    """Brute-force reference decoder that knows the generator's patterns.

    For each stream that can carry a bit, picks the (frame, pattern) pair
    with the smallest Euclidean distance and reads off the bit.
    """
    p_face, p_context = patterns if patterns is not None else signal_patterns(spec)

    def bit(stream, p):
        d = ((stream[:, None, :] - p[None, :, :]) ** 2).sum(axis=2)
        return int(np.unravel_index(np.argmin(d), d.shape)[1])

    if spec.task is SyntheticTask.JOINT:
        return 2 * bit(clip.face_stream, p_face) + bit(clip.context_stream, p_context)
    if spec.task is SyntheticTask.FACE_ONLY:
        return bit(clip.face_stream, p_face)
    return bit(clip.context_stream, p_context)


def random_clips(n, face_dim, context_dim, t_min=8, t_max=32, num_classes=8, seed=0):
    """Gaussian clips with labels ``i % num_classes`` (no learnable structure)."""
    rng = np.random.default_rng(seed)
    clips = []
    for i in range(n):
        T = int(rng.integers(t_min, t_max + 1))
        clips.append(ClipSample(
            f"random_{i:05d}",
            rng.standard_normal((T, face_dim)),
            rng.standard_normal((T, context_dim)),
            i % num_classes,
        ))
    return clips
