"""Independent reference implementations used as test oracles."""

import math

import numpy as np

from cascade_attn.attention import attend
from cascade_attn.models import ArchitectureKind, ModelConfig, build_model
from cascade_attn.rnn import LstmState, lstm_forward, lstm_step


def cascade_logits(model, face, context):
    """Cascade forward built from ``lstm_forward`` for the left stack and
    per-step ``lstm_step`` + ``attend`` calls for the right stack.

    Returns the logits and the list of per-step alignments.
    """
    cfg = model.config
    p = model.params
    streams = {"face": np.asarray(face, float), "context": np.asarray(context, float)}

    def encode(name, x):
        return p[f"enc_{name}.weight"] @ x + p[f"enc_{name}.bias"]

    left_in = [encode(cfg.left_stream, x) for x in streams[cfg.left_stream]]
    left_top, left_final, _ = lstm_forward(model.stack("left"), left_in)
    keys = [h for h in left_top]

    states = [left_final[k] if k < cfg.left_layers else LstmState.zeros(cfg.hidden_size)
              for k in range(cfg.right_layers)]
    right = model.stack("right").layers
    alignments, combined = [], None
    for x in streams[cfg.right_stream]:
        inp = encode(cfg.right_stream, x)
        for k, layer in enumerate(right):
            states[k] = lstm_step(layer, inp, states[k])
            inp = states[k].h
        out = attend(inp, keys, p["attn.w_c"])
        alignments.append(out.alignment)
        combined = out.combined
    logits = p["classifier.weight"] @ combined + p["classifier.bias"]
    return logits, alignments


def random_cascade_instance(rng, kind=ArchitectureKind.CACA_A, scale=1.0):
    T = int(rng.integers(1, 6))
    cfg = ModelConfig(kind, face_feature_dim=int(rng.integers(1, 5)), context_feature_dim=int(rng.integers(1, 5)),
                      encoded_dim=int(rng.integers(1, 5)), hidden_size=int(rng.integers(1, 5)),
                      left_layers=int(rng.integers(1, 4)), right_layers=int(rng.integers(1, 4)),
                      num_classes=int(rng.integers(2, 6)), seed=int(rng.integers(2 ** 32)))
    model = build_model(cfg)
    for v in model.params.values():
        v[...] = rng.uniform(-scale, scale, size=v.shape)
    face = rng.normal(size=(T, cfg.face_feature_dim))
    context = rng.normal(size=(T, cfg.context_feature_dim))
    return model, face, context


def brute_force_ap(scores, positives):
    """AP by enumerating the ranking with explicit stable tie-breaking."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    precisions, hits = [], 0
    for rank, i in enumerate(order, start=1):
        if positives[i]:
            hits += 1
            precisions.append(hits / rank)
    return math.fsum(precisions) / hits


def brute_force_map(probs, labels):
    K = probs.shape[1]
    per_class = []
    for k in range(K):
        pos = [int(y) == k for y in labels]
        per_class.append(brute_force_ap(list(probs[:, k]), pos) if any(pos) else None)
    present = [a for a in per_class if a is not None]
    return math.fsum(present) / len(present), per_class


def hand_confusion(preds, labels, K):
    cm = [[0] * K for _ in range(K)]
    for p, y in zip(preds, labels):
        cm[y][p] += 1
    return np.array(cm)

