"""The six two-stream architectures, their forward/backward passes and checkpoints.

Parameters live in a single ordered dict of float64 arrays. The order in
which :func:`build_model` inserts them is the declaration order used by
the initializer, the flat parameter vector and the checkpoint file.

=================  ==========================================  ==============
kind               wiring                                      classifier input
=================  ==========================================  ==============
face-rnn           encoder -> LSTM stack over face             last hidden
context-rnn        encoder -> LSTM stack over context          last hidden
parallel-rnn       one stack per stream, concat -> tanh(FC)    fused vector
concatenated-rnn   per-frame concat of both encodings -> stack last hidden
caca-a             context stack -> face stack + attention     attentional vector
caca-b             face stack -> context stack + attention     attentional vector
=================  ==========================================  ==============
"""

import enum
import struct
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .attention import attend, attend_backward
from .exceptions import ArgumentError, ConfigError, ContractError, DataError, FormatError
from .rnn import LstmLayerParams, LstmStack, LstmState, init_lstm_stack, lstm_backward, lstm_forward
from .tensor import DTYPE, rows_matmul, softmax


class ArchitectureKind(enum.Enum):
    FACE_RNN = "face-rnn"
    CONTEXT_RNN = "context-rnn"
    PARALLEL_RNN = "parallel-rnn"
    CONCATENATED_RNN = "concatenated-rnn"
    CACA_A = "caca-a"
    CACA_B = "caca-b"

    @property
    def is_cascade(self):
        return self in (ArchitectureKind.CACA_A, ArchitectureKind.CACA_B)

    @property
    def uses_face(self):
        return self is not ArchitectureKind.CONTEXT_RNN

    @property
    def uses_context(self):
        return self is not ArchitectureKind.FACE_RNN

    @property
    def is_fusion(self):
        return self.uses_face and self.uses_context

    @property
    def label(self):
        return _LABELS[self]


_LABELS = {
    ArchitectureKind.FACE_RNN: "Face-RNN",
    ArchitectureKind.CONTEXT_RNN: "Context-RNN",
    ArchitectureKind.PARALLEL_RNN: "Parallel-RNN",
    ArchitectureKind.CONCATENATED_RNN: "Concatenated-RNN",
    ArchitectureKind.CACA_A: "CACA-RNN A",
    ArchitectureKind.CACA_B: "CACA-RNN B",
}
_KIND_CODES = list(ArchitectureKind)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and dimensions.

    ``left_layers`` sizes the only stack of single-stack kinds. For the
    two-stack kinds, the left stack reads the face stream in parallel-rnn and
    caca-b and the context stream in caca-a. ``right_hidden_size`` defaults
    to ``hidden_size``; the cascade kinds require them to be equal.
    """

    kind: ArchitectureKind
    face_feature_dim: int
    context_feature_dim: int
    encoded_dim: int = 128
    hidden_size: int = 128
    left_layers: int = 2
    right_layers: int = 1
    num_classes: int = 8
    seed: int = 0
    right_hidden_size: int = None

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", ArchitectureKind(self.kind))
        if self.right_hidden_size is None:
            object.__setattr__(self, "right_hidden_size", self.hidden_size)
        for name in ("face_feature_dim", "context_feature_dim", "encoded_dim", "hidden_size",
                     "right_hidden_size", "left_layers", "num_classes"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.has_right_stack and self.right_layers < 1:
            raise ConfigError(f"right_layers must be positive for {self.kind.value}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if self.kind.is_cascade and self.hidden_size != self.right_hidden_size:
            raise ConfigError(
                f"{self.kind.value}: the dot attention score needs equal hidden sizes in both "
                f"RNNs, got {self.hidden_size} and {self.right_hidden_size}"
            )

    @property
    def has_right_stack(self):
        return self.kind in (ArchitectureKind.PARALLEL_RNN, ArchitectureKind.CACA_A,
                             ArchitectureKind.CACA_B)

    @property
    def left_stream(self):
        if self.kind in (ArchitectureKind.CONTEXT_RNN, ArchitectureKind.CACA_A):
            return "context"
        if self.kind is ArchitectureKind.CONCATENATED_RNN:
            return "both"
        return "face"

    @property
    def right_stream(self):
        if not self.has_right_stack:
            return None
        return "face" if self.kind is ArchitectureKind.CACA_A else "context"

    def to_dict(self):
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def comparison_config(kind, face_feature_dim, context_feature_dim, num_classes=8, seed=0):
    """Size-matched comparison setup: 128-d encoders; 256-unit two-layer stacks
    for the single-stack kinds, two 128-unit two-layer stacks for
    parallel-rnn, and a two-layer 128 left / one-layer 128 right cascade."""
    kind = ArchitectureKind(kind)
    common = dict(kind=kind, face_feature_dim=face_feature_dim,
                  context_feature_dim=context_feature_dim, encoded_dim=128,
                  num_classes=num_classes, seed=seed)
    if kind is ArchitectureKind.PARALLEL_RNN:
        return ModelConfig(hidden_size=128, left_layers=2, right_layers=2, **common)
    if kind.is_cascade:
        return ModelConfig(hidden_size=128, left_layers=2, right_layers=1, **common)
    return ModelConfig(hidden_size=256, left_layers=2, right_layers=0, **common)


@dataclass
class Model:
    config: ModelConfig
    params: dict

    def stack(self, side):
        n = self.config.left_layers if side == "left" else self.config.right_layers
        return LstmStack([
            LstmLayerParams(self.params[f"{side}.{k}.w_input"], self.params[f"{side}.{k}.w_hidden"],
                            self.params[f"{side}.{k}.bias"])
            for k in range(n)
        ])

    def copy(self):
        return Model(self.config, {k: v.copy() for k, v in self.params.items()})


@dataclass
class ClipPrediction:
    logits: np.ndarray
    probabilities: np.ndarray
    predicted_class: int


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_model(config):
    """Deterministically initialize every parameter from ``config.seed``."""
    cfg = config
    kind = cfg.kind
    rng = np.random.default_rng(cfg.seed)
    E, H, HR = cfg.encoded_dim, cfg.hidden_size, cfg.right_hidden_size
    params = {}

    if kind.uses_face:
        params["enc_face.weight"] = _uniform(rng, (E, cfg.face_feature_dim), cfg.face_feature_dim)
        params["enc_face.bias"] = _uniform(rng, (E,), cfg.face_feature_dim)
    if kind.uses_context:
        params["enc_context.weight"] = _uniform(rng, (E, cfg.context_feature_dim), cfg.context_feature_dim)
        params["enc_context.bias"] = _uniform(rng, (E,), cfg.context_feature_dim)

    left_in = 2 * E if kind is ArchitectureKind.CONCATENATED_RNN else E
    sides = [("left", left_in, H, cfg.left_layers)]
    if cfg.has_right_stack:
        sides.append(("right", E, HR, cfg.right_layers))
    for side, d_in, hidden, n in sides:
        stack = init_lstm_stack(d_in, hidden, n, rng)
        for k, layer in enumerate(stack.layers):
            params[f"{side}.{k}.w_input"] = layer.w_input
            params[f"{side}.{k}.w_hidden"] = layer.w_hidden
            params[f"{side}.{k}.bias"] = layer.bias

    if kind.is_cascade:
        params["attn.w_c"] = _uniform(rng, (H, 2 * H), 2 * H)
        out_dim = H
    elif kind is ArchitectureKind.PARALLEL_RNN:
        params["fusion.weight"] = _uniform(rng, (H, H + HR), H + HR)
        params["fusion.bias"] = _uniform(rng, (H,), H + HR)
        out_dim = H
    else:
        out_dim = H
    params["classifier.weight"] = _uniform(rng, (cfg.num_classes, out_dim), out_dim)
    params["classifier.bias"] = _uniform(rng, (cfg.num_classes,), out_dim)
    return Model(cfg, params)


def count_params(model):
    """Number of trainable scalars."""
    return int(sum(p.size for p in model.params.values()))


def parameter_vector(model):
    return np.concatenate([p.ravel() for p in model.params.values()])


def set_parameter_vector(model, vector):
    vector = np.asarray(vector, dtype=DTYPE)
    if vector.size != count_params(model):
        raise DataError(f"parameter vector of size {vector.size} for a model with {count_params(model)}")
    offset = 0
    for p in model.params.values():
        p[...] = vector[offset:offset + p.size].reshape(p.shape)
        offset += p.size


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

@dataclass
class ModelTape:
    face: np.ndarray
    context: np.ndarray
    mask: np.ndarray
    out: np.ndarray          # (B, H) classifier input
    left: object = None      # LstmTape
    right: object = None
    attention: object = None  # AttentionTape
    fusion_in: np.ndarray = None
    single: bool = False
    alignments: np.ndarray = None  # (T_right, T_left, B) when requested


def pad_batch(face_streams, context_streams):
    """Left-align variable-length clips into ``(T_max, B, D)`` arrays plus a mask.

    Either list may be None (single-stream use); its array is then None.
    """
    ref = face_streams if face_streams is not None else context_streams
    lengths = [len(s) for s in ref]
    if min(lengths) < 1:
        raise ArgumentError("clips must have at least one frame")
    if face_streams is not None and context_streams is not None:
        for f, c in zip(face_streams, context_streams):
            if len(f) != len(c):
                raise DataError(f"face stream has {len(f)} frames but context stream has {len(c)}")
    T, B = max(lengths), len(lengths)

    def _pad(streams):
        if streams is None:
            return None
        D = np.shape(streams[0])[1]
        out = np.zeros((T, B, D), dtype=DTYPE)
        for b, s in enumerate(streams):
            s = np.asarray(s, dtype=DTYPE)
            if s.ndim != 2 or s.shape[1] != D:
                raise DataError(f"clip {b} has stream shape {s.shape}, expected (T, {D})")
            out[:len(s), b] = s
        return out

    mask = np.zeros((T, B), dtype=DTYPE)
    for b, n in enumerate(lengths):
        mask[:n, b] = 1.0
    return _pad(face_streams), _pad(context_streams), mask


def _encode(model, name, x):
    return rows_matmul(x, model.params[f"enc_{name}.weight"].T) + model.params[f"enc_{name}.bias"]


def _check_stream(cfg, x, name, dim):
    if x is None:
        raise DataError(f"{cfg.kind.value} needs the {name} stream")
    if x.shape[-1] != dim:
        raise DataError(f"{name} features have dimension {x.shape[-1]}, model expects {dim}")


def forward_batch(model, face, context, mask=None, keep_alignments=False):
    """Forward a padded batch.

    ``face`` and ``context`` are ``(T, B, D)`` arrays (the stream a single
    stream kind does not read may be None). Returns ``(logits, tape)`` with
    logits of shape ``(B, num_classes)``.
    """
    cfg = model.config
    kind = cfg.kind
    if face is not None:
        face = np.asarray(face, dtype=DTYPE)
    if context is not None:
        context = np.asarray(context, dtype=DTYPE)
    if kind.uses_face:
        _check_stream(cfg, face, "face", cfg.face_feature_dim)
    if kind.uses_context:
        _check_stream(cfg, context, "context", cfg.context_feature_dim)
    ref = face if kind.uses_face else context
    if ref.shape[0] == 0:
        raise ArgumentError("clips must have at least one frame")
    if face is not None and context is not None and face.shape[:2] != context.shape[:2]:
        raise DataError(f"face stream {face.shape[:2]} and context stream {context.shape[:2]} differ in (T, B)")

    enc = {}
    if kind.uses_face:
        enc["face"] = _encode(model, "face", face)
    if kind.uses_context:
        enc["context"] = _encode(model, "context", context)

    tape = ModelTape(face, context, mask, None)
    if kind is ArchitectureKind.CONCATENATED_RNN:
        left_in = np.concatenate([enc["face"], enc["context"]], axis=-1)
    else:
        left_in = enc[cfg.left_stream]

    left_top, left_final, tape.left = lstm_forward(model.stack("left"), left_in, mask=mask)

    if kind.is_cascade:
        right = model.stack("right")
        init = []
        for k in range(cfg.right_layers):
            if k < cfg.left_layers:
                init.append(left_final[k])
            else:
                init.append(LstmState.zeros(cfg.right_hidden_size, left_in.shape[1]))
        right_top, right_final, tape.right = lstm_forward(right, enc[cfg.right_stream], init=init, mask=mask)
        att = attend(right_final[-1].h, left_top, model.params["attn.w_c"], mask=mask)
        tape.attention = att.tape
        out = att.combined
        if keep_alignments:
            tape.alignments = np.stack([
                attend(right_top[t], left_top, mask=mask).alignment for t in range(right_top.shape[0])
            ])
    elif kind is ArchitectureKind.PARALLEL_RNN:
        _, right_final, tape.right = lstm_forward(model.stack("right"), enc[cfg.right_stream], mask=mask)
        tape.fusion_in = np.concatenate([left_final[-1].h, right_final[-1].h], axis=1)
        out = np.tanh(tape.fusion_in @ model.params["fusion.weight"].T + model.params["fusion.bias"])
    else:
        out = left_final[-1].h

    tape.out = out
    logits = out @ model.params["classifier.weight"].T + model.params["classifier.bias"]
    return logits, tape


def _as_stream(x, name):
    if x is None:
        return None
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DataError(f"{name} stream must be (T, D), got shape {x.shape}")
    return x


def forward_clip(model, face_stream, context_stream, keep_alignments=False):
    """Classify one clip. Returns ``(ClipPrediction, tape)``.

    With ``keep_alignments`` (cascade kinds only) the tape also holds the
    alignment row of every right-RNN step in ``tape.alignments`` as a
    ``(T, T)`` array; only the last row influences the prediction.
    """
    face = _as_stream(face_stream, "face")
    context = _as_stream(context_stream, "context")
    kind = model.config.kind
    if face is not None and context is not None and len(face) != len(context):
        raise DataError(f"face stream has {len(face)} frames but context stream has {len(context)}")
    if not kind.uses_face:
        face = None
    if not kind.uses_context:
        context = None
    logits, tape = forward_batch(
        model,
        None if face is None else face[:, None, :],
        None if context is None else context[:, None, :],
        keep_alignments=keep_alignments,
    )
    tape.single = True
    if tape.alignments is not None:
        tape.alignments = tape.alignments[:, :, 0]
    logits = logits[0]
    probs = softmax(logits)
    return ClipPrediction(logits, probs, int(np.argmax(logits))), tape


def backward_batch(model, tape, grad_logits):
    """Gradients of every parameter, keyed like ``model.params``."""
    cfg = model.config
    kind = cfg.kind
    g = np.asarray(grad_logits, dtype=DTYPE)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != (tape.out.shape[0], cfg.num_classes):
        raise ContractError(f"logit gradient shape {np.shape(grad_logits)} does not match the tape")
    grads = {}
    grads["classifier.weight"] = g.T @ tape.out
    grads["classifier.bias"] = g.sum(axis=0)
    d_out = g @ model.params["classifier.weight"]

    n_left = cfg.left_layers
    left_final_grad = [None] * n_left
    left_top_grad = np.zeros(tape.left.layers[-1].hs[1:].shape, dtype=DTYPE)
    d_right_in = None

    if kind.is_cascade:
        d_q, d_keys, grads["attn.w_c"] = attend_backward(tape.attention, grad_combined=d_out)
        n_right = cfg.right_layers
        right_final_grad = [None] * n_right
        right_final_grad[-1] = LstmState(d_q, np.zeros_like(d_q))
        right_top_grad = np.zeros(tape.right.layers[-1].hs[1:].shape, dtype=DTYPE)
        r_grads, d_right_in, r_init = lstm_backward(tape.right, right_top_grad, right_final_grad)
        _store_stack_grads(grads, "right", r_grads)
        left_top_grad = d_keys
        for k in range(min(n_left, n_right)):
            left_final_grad[k] = r_init[k]
    elif kind is ArchitectureKind.PARALLEL_RNN:
        d_pre = d_out * (1.0 - tape.out ** 2)
        grads["fusion.weight"] = d_pre.T @ tape.fusion_in
        grads["fusion.bias"] = d_pre.sum(axis=0)
        d_in = d_pre @ model.params["fusion.weight"]
        H = cfg.hidden_size
        left_final_grad[-1] = LstmState(d_in[:, :H], np.zeros_like(d_in[:, :H]))
        right_final_grad = [None] * cfg.right_layers
        right_final_grad[-1] = LstmState(d_in[:, H:], np.zeros_like(d_in[:, H:]))
        right_top_grad = np.zeros(tape.right.layers[-1].hs[1:].shape, dtype=DTYPE)
        r_grads, d_right_in, _ = lstm_backward(tape.right, right_top_grad, right_final_grad)
        _store_stack_grads(grads, "right", r_grads)
    else:
        left_final_grad[-1] = LstmState(d_out, np.zeros_like(d_out))

    l_grads, d_left_in, _ = lstm_backward(tape.left, left_top_grad, left_final_grad)
    _store_stack_grads(grads, "left", l_grads)

    d_enc = {}
    if kind is ArchitectureKind.CONCATENATED_RNN:
        E = cfg.encoded_dim
        d_enc["face"], d_enc["context"] = d_left_in[..., :E], d_left_in[..., E:]
    else:
        d_enc[cfg.left_stream] = d_left_in
        if d_right_in is not None:
            d_enc[cfg.right_stream] = d_right_in
    for name, x in (("face", tape.face), ("context", tape.context)):
        if name not in d_enc:
            continue
        d = d_enc[name].reshape(-1, cfg.encoded_dim)
        grads[f"enc_{name}.weight"] = d.T @ x.reshape(d.shape[0], -1)
        grads[f"enc_{name}.bias"] = d.sum(axis=0)

    return {k: grads[k] for k in model.params}


def _store_stack_grads(grads, side, layer_grads):
    for k, lg in enumerate(layer_grads):
        grads[f"{side}.{k}.w_input"] = lg.w_input
        grads[f"{side}.{k}.w_hidden"] = lg.w_hidden
        grads[f"{side}.{k}.bias"] = lg.bias


def backward_clip(model, tape, grad_logits):
    """Exact parameter gradients for one clip given the loss gradient w.r.t. its logits."""
    g = np.asarray(grad_logits, dtype=DTYPE)
    if g.shape != (model.config.num_classes,):
        raise ContractError(f"expected logit gradient of shape ({model.config.num_classes},), got {g.shape}")
    return backward_batch(model, tape, g[None, :])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"CARN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHB9IQ")  # magic, version, kind, 9 dims, seed
_CONFIG_DIMS = ("face_feature_dim", "context_feature_dim", "encoded_dim", "hidden_size",
                "right_hidden_size", "left_layers", "right_layers", "num_classes")


def save_checkpoint(model, path):
    """Write ``model`` in the little-endian CARN layout (see README)."""
    cfg = model.config
    dims = [int(getattr(cfg, n)) for n in _CONFIG_DIMS] + [len(model.params)]
    chunks = [_HEADER.pack(MAGIC, FORMAT_VERSION, _KIND_CODES.index(cfg.kind), *dims, int(cfg.seed))]
    for name, arr in model.params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path, expected_kind=None):
    """Read a CARN checkpoint; optionally insist on an architecture kind."""
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise FormatError(f"checkpoint truncated in header ({len(buf)} bytes)", offset=len(buf))
    magic, version, kind_code, *rest = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    if kind_code >= len(_KIND_CODES):
        raise FormatError(f"unknown architecture code {kind_code}", offset=6)
    dims, n_blocks, seed = rest[:8], rest[8], rest[9]
    try:
        cfg = ModelConfig(kind=_KIND_CODES[kind_code], seed=seed, **dict(zip(_CONFIG_DIMS, dims)))
    except ConfigError as exc:
        raise FormatError(f"checkpoint holds an invalid config: {exc}", offset=7) from exc
    if expected_kind is not None and cfg.kind is not ArchitectureKind(expected_kind):
        raise ConfigError(
            f"checkpoint holds a {cfg.kind.value} model but {ArchitectureKind(expected_kind).value} was requested"
        )

    expected = build_model(replace(cfg))
    params = {}
    off = _HEADER.size

    def need(n):
        if off + n > len(buf):
            raise FormatError("checkpoint truncated", offset=off)

    for _ in range(n_blocks):
        need(2)
        (name_len,) = struct.unpack_from("<H", buf, off)
        off += 2
        need(name_len + 1)
        name = buf[off:off + name_len].decode("utf-8", errors="replace")
        off += name_len
        ndim = buf[off]
        off += 1
        need(4 * ndim)
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        if name not in expected.params or expected.params[name].shape != shape:
            raise FormatError(f"unexpected parameter block {name!r} with shape {shape}", offset=off)
        size = int(np.prod(shape)) * 8
        need(size)
        params[name] = np.frombuffer(buf, dtype="<f8", count=size // 8, offset=off).astype(DTYPE).reshape(shape)
        off += size
    if list(params) != list(expected.params):
        raise FormatError("checkpoint parameter blocks do not match the architecture", offset=off)
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after the last parameter block", offset=off)
    return Model(cfg, params)
