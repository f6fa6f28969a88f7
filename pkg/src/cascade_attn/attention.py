"""Soft global attention with a dot-product score.

Alignment weights are a softmax over ``query . key_t``; the context vector
is the alignment-weighted sum of the keys; the attentional vector fed to
the classifier is ``tanh(W_c [context; query])``.

Keys are laid out time-major like LSTM outputs: ``(T, H)`` for one clip or
``(T, B, H)`` for a batch with an optional ``(T, B)`` validity mask.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ArgumentError, ContractError, DimensionError
from .tensor import DTYPE


def dot_score(h_query, h_encoder):
    """Inner product of a query and one encoder state.

    Both vectors must have the same length; for the cascade models this is
    where unequal hidden sizes get caught.
    """
    q = np.asarray(h_query, dtype=DTYPE)
    e = np.asarray(h_encoder, dtype=DTYPE)
    if q.shape != e.shape:
        raise DimensionError(
            f"dot score needs equal hidden sizes, got query {q.shape} and encoder {e.shape}"
        )
    return float(q @ e)


@dataclass
class AttentionTape:
    query: np.ndarray      # (B, H)
    keys: np.ndarray       # (T, B, H)
    alignment: np.ndarray  # (T, B)
    concat: np.ndarray     # (B, 2H), [context; query]
    combined: np.ndarray   # (B, H) or None
    w_c: np.ndarray
    single: bool


@dataclass
class AttentionOutput:
    context: np.ndarray
    alignment: np.ndarray
    combined: np.ndarray
    tape: AttentionTape


def attend(h_query, encoder_hiddens, w_c=None, mask=None):
    """Attend from ``h_query`` over ``encoder_hiddens``.

    Parameters
    ----------
    h_query : (H,) or (B, H)
    encoder_hiddens : (T, H) or (T, B, H), or a list of (H,) vectors
    w_c : (H, 2H) combination matrix; when None, ``combined`` is None
    mask : (T, B) validity mask for batched keys

    Returns
    -------
    AttentionOutput
        ``alignment`` has shape (T,) for a single query or (T, B) otherwise.
    """
    if isinstance(encoder_hiddens, (list, tuple)):
        if len(encoder_hiddens) == 0:
            raise ArgumentError("attention over an empty encoder sequence")
        encoder_hiddens = np.stack([np.asarray(v, dtype=DTYPE) for v in encoder_hiddens])
    q = np.asarray(h_query, dtype=DTYPE)
    keys = np.asarray(encoder_hiddens, dtype=DTYPE)
    single = q.ndim == 1
    if single:
        q = q[None, :]
        keys = keys[:, None, :] if keys.ndim == 2 else keys
    if keys.ndim != 3 or keys.shape[0] == 0:
        raise ArgumentError(f"attention needs a non-empty (T, [B,] H) key sequence, got {np.shape(encoder_hiddens)}")
    T, B, H = keys.shape
    if q.shape != (B, H):
        raise DimensionError(
            f"dot score needs equal hidden sizes, got query {np.shape(h_query)} "
            f"and encoder states {np.shape(encoder_hiddens)}"
        )

    scores = np.einsum("tbh,bh->tb", keys, q)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (T, B):
            raise DimensionError(f"mask shape {mask.shape} does not match keys {(T, B)}")
        scores = np.where(mask, scores, -np.inf)
    scores = scores - scores.max(axis=0, keepdims=True)
    e = np.exp(scores)
    alignment = e / e.sum(axis=0, keepdims=True)
    context = np.einsum("tb,tbh->bh", alignment, keys)

    cat = np.concatenate([context, q], axis=1)
    combined = None
    if w_c is not None:
        if w_c.shape != (H, 2 * H):
            raise DimensionError(f"W_c has shape {w_c.shape}, expected {(H, 2 * H)}")
        combined = np.tanh(cat @ w_c.T)

    tape = AttentionTape(q, keys, alignment, cat, combined, w_c, single)
    if single:
        return AttentionOutput(
            context[0], alignment[:, 0], None if combined is None else combined[0], tape
        )
    return AttentionOutput(context, alignment, combined, tape)


def attend_backward(tape, grad_combined=None, grad_context=None):
    """Gradients of a scalar loss through :func:`attend`.

    Returns
    -------
    grad_query : shaped like the query
    grad_encoders : shaped like the keys
    grad_w_c : (H, 2H) or None when attention ran without ``W_c``
    """
    q, keys, a = tape.query, tape.keys, tape.alignment
    T, B, H = keys.shape

    def _batched(g, name):
        g = np.asarray(g, dtype=DTYPE)
        g = g[None, :] if tape.single and g.ndim == 1 else g
        if g.shape != (B, H):
            raise ContractError(f"{name} gradient shape {g.shape} does not match the tape {(B, H)}")
        return g

    d_ctx = np.zeros((B, H), dtype=DTYPE)
    d_q = np.zeros((B, H), dtype=DTYPE)
    grad_w_c = None
    if grad_combined is not None:
        if tape.w_c is None:
            raise ContractError("combined-vector gradient given but attention ran without W_c")
        d_pre = _batched(grad_combined, "combined") * (1.0 - tape.combined ** 2)
        grad_w_c = d_pre.T @ tape.concat
        d_cat = d_pre @ tape.w_c
        d_ctx += d_cat[:, :H]
        d_q += d_cat[:, H:]
    elif tape.w_c is not None:
        grad_w_c = np.zeros_like(tape.w_c)
    if grad_context is not None:
        d_ctx += _batched(grad_context, "context")

    d_keys = a[:, :, None] * d_ctx[None, :, :]
    d_a = np.einsum("tbh,bh->tb", keys, d_ctx)
    d_s = a * (d_a - np.sum(a * d_a, axis=0, keepdims=True))
    d_q += np.einsum("tb,tbh->bh", d_s, keys)
    d_keys += d_s[:, :, None] * q[None, :, :]

    if tape.single:
        return d_q[0], d_keys[:, 0, :], grad_w_c
    return d_q, d_keys, grad_w_c
