"""Cross-entropy loss, Adam, and the seeded mini-batch training loop."""

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import subsample
from .exceptions import ArgumentError, ConfigError, ContractError, DataError, NumericError
from .metrics import evaluation_report
from .models import backward_batch, forward_batch, pad_batch
from .tensor import DTYPE, log_softmax, softmax

logger = logging.getLogger(__name__)


def cross_entropy(logits, label):
    """Returns ``(loss, grad_logits)`` for one sample."""
    z = np.asarray(logits, dtype=DTYPE)
    if not 0 <= label < z.size:
        raise ArgumentError(f"label {label} outside [0, {z.size})")
    logp = log_softmax(z)
    grad = np.exp(logp)
    grad[label] -= 1.0
    return float(-logp[label]), grad


def batch_cross_entropy(logits, labels):
    """Mean loss over a batch and its gradient w.r.t. the ``(B, K)`` logits.

    Also returns the per-sample losses.
    """
    z = np.asarray(logits, dtype=DTYPE)
    y = np.asarray(labels, dtype=np.int64)
    B, K = z.shape
    if y.min() < 0 or y.max() >= K:
        raise ArgumentError(f"labels outside [0, {K})")
    logp = log_softmax(z, axis=1)
    losses = -logp[np.arange(B), y]
    grad = np.exp(logp)
    grad[np.arange(B), y] -= 1.0
    return float(losses.mean()), grad / B, losses


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_apply(state, params, grads):
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    if set(params) != set(grads):
        raise ContractError("parameter and gradient keys differ")
    for k, g in grads.items():
        if params[k].shape != np.shape(g):
            raise ContractError(f"gradient for {k} has shape {np.shape(g)}, parameter has {params[k].shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


def clip_global_norm(grads, max_norm):
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 10
    subsample_stride: int = 1
    seed: int = 0
    clip_grad_norm: float = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.subsample_stride < 1:
            raise ConfigError(f"subsample_stride must be >= 1, got {self.subsample_stride}")


@dataclass
class TrainingState:
    """Everything besides the parameters needed to resume a run bit-exactly."""

    adam: AdamState
    rng: np.random.Generator
    epoch: int = 0

    @classmethod
    def fresh(cls, config):
        return cls(AdamState(learning_rate=config.learning_rate), np.random.default_rng(config.seed))

    def save(self, path):
        path = Path(path)
        keys = list(self.adam.m)
        arrays = {f"m:{k}": self.adam.m[k] for k in keys}
        arrays.update({f"v:{k}": self.adam.v[k] for k in keys})
        meta = {
            "epoch": self.epoch,
            "t": self.adam.t,
            "adam": {k: getattr(self.adam, k) for k in ("learning_rate", "beta1", "beta2", "epsilon")},
            "rng": self.rng.bit_generator.state,
            "keys": keys,
        }
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            adam = AdamState(t=meta["t"], **meta["adam"])
            for k in meta["keys"]:
                adam.m[k] = z[f"m:{k}"].copy()
                adam.v[k] = z[f"v:{k}"].copy()
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng"]
        return cls(adam, rng, meta["epoch"])


def _check_dataset(model, clips):
    if not clips:
        raise DataError("dataset is empty")
    cfg = model.config
    for c in clips:
        if cfg.kind.uses_face and c.face_stream.shape[1] != cfg.face_feature_dim:
            raise DataError(f"clip {c.clip_id}: face dim {c.face_stream.shape[1]}, model expects {cfg.face_feature_dim}")
        if cfg.kind.uses_context and c.context_stream.shape[1] != cfg.context_feature_dim:
            raise DataError(
                f"clip {c.clip_id}: context dim {c.context_stream.shape[1]}, model expects {cfg.context_feature_dim}"
            )
        if not 0 <= c.label < cfg.num_classes:
            raise DataError(f"clip {c.clip_id}: label {c.label} outside [0, {cfg.num_classes})")


def _batch_arrays(model, clips):
    kind = model.config.kind
    return pad_batch(
        [c.face_stream for c in clips] if kind.uses_face else None,
        [c.context_stream for c in clips] if kind.uses_context else None,
    )


def predict_proba(model, clips, stride=1, batch_size=64, threads=None):
    """Class probabilities ``(N, K)``; evaluation always starts at frame 0."""
    _check_dataset(model, clips)
    if threads is None:
        threads = int(os.environ.get("CASCADE_ATTN_THREADS", "1") or 1)
    clips = [subsample(c, stride, 0) for c in clips]
    chunks = [clips[i:i + batch_size] for i in range(0, len(clips), batch_size)]

    def run(chunk):
        order = sorted(range(len(chunk)), key=lambda i: -chunk[i].num_frames)
        face, context, mask = _batch_arrays(model, [chunk[i] for i in order])
        logits, _ = forward_batch(model, face, context, mask)
        if not np.all(np.isfinite(logits)):
            raise NumericError("non-finite logits")
        probs = np.empty_like(logits)
        probs[order] = softmax(logits, axis=1)
        return probs

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts, axis=0)


def evaluate(model, clips, stride=1, class_names=None, threads=None):
    probs = predict_proba(model, clips, stride=stride, threads=threads)
    labels = [c.label for c in clips]
    return evaluation_report(probs, labels, model.config.num_classes, class_names)


def train(model, dataset, config, valid=None, state=None, on_epoch=None):
    """Train ``model`` in place and return the per-epoch log.

    Each epoch draws one permutation of the dataset; each clip in a batch is
    subsampled from a random initial offset in ``[0, stride)``. The batch
    loss is the mean cross-entropy over its clips. Passing the ``state``
    from an interrupted run (saved after a completed epoch) continues it
    bit-exactly.

    Raises
    ------
    NumericError
        If the loss becomes non-finite.
    """
    _check_dataset(model, dataset)
    if valid:
        _check_dataset(model, valid)
    if state is None:
        state = TrainingState.fresh(config)
    state.adam.learning_rate = config.learning_rate
    stride = config.subsample_stride
    n = len(dataset)
    log = []
    while state.epoch < config.epochs:
        start = time.perf_counter()
        order = state.rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for b0 in range(0, n, config.batch_size):
            batch = []
            for i in order[b0:b0 + config.batch_size]:
                clip = dataset[i]
                offset = int(state.rng.integers(min(stride, clip.num_frames)))
                batch.append(subsample(clip, stride, offset))
            # longest first, so padded steps form a suffix the LSTM can skip
            batch.sort(key=lambda c: -c.num_frames)
            face, context, mask = _batch_arrays(model, batch)
            logits, tape = forward_batch(model, face, context, mask)
            labels = np.array([c.label for c in batch])
            loss, grad, losses = batch_cross_entropy(logits, labels)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {state.epoch}")
            grads = backward_batch(model, tape, grad)
            if config.clip_grad_norm:
                clip_global_norm(grads, config.clip_grad_norm)
            adam_apply(state.adam, model.params, grads)
            loss_sum += float(losses.sum())
            correct += int(np.sum(np.argmax(logits, axis=1) == labels))
        if not all(np.all(np.isfinite(p)) for p in model.params.values()):
            raise NumericError(f"non-finite parameters after epoch {state.epoch + 1}")

        entry = {
            "epoch": state.epoch + 1,
            "train_loss": loss_sum / n,
            "train_acc": correct / n,
            "valid_acc": None,
            "valid_map": None,
        }
        if valid:
            report = evaluate(model, valid, stride=stride)
            entry["valid_acc"] = report.accuracy
            entry["valid_map"] = report.map
        entry["wall_ms"] = round(1000.0 * (time.perf_counter() - start), 3)
        state.epoch += 1
        log.append(entry)
        logger.info("epoch %d loss %.5f acc %.4f", entry["epoch"], entry["train_loss"], entry["train_acc"])
        if on_epoch is not None and on_epoch(entry, state) is False:
            break
    return log

