"""Multi-layer LSTM with hand-written backpropagation through time.

Gate blocks inside the ``4H`` axis are ordered input, forget, candidate,
output (``i, f, g, o``). This order is part of the checkpoint format.

Every function accepts either a single clip (vectors of shape ``(D,)``,
sequences of shape ``(T, D)``) or a batch (``(B, D)`` / ``(T, B, D)``).
Batched sequences may carry a ``(T, B)`` 0/1 mask; at masked steps the
state is held unchanged, so the final state of a left-aligned padded clip
equals its state at its last real frame.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ArgumentError, ContractError, DimensionError
from .tensor import DTYPE, rows_matmul, sigmoid


@dataclass
class LstmLayerParams:
    w_input: np.ndarray   # (4H, D_in)
    w_hidden: np.ndarray  # (4H, H)
    bias: np.ndarray      # (4H,)

    def __post_init__(self):
        four_h, _ = self.w_input.shape
        if four_h % 4 or self.w_hidden.shape != (four_h, four_h // 4) or self.bias.shape != (four_h,):
            raise DimensionError(
                f"inconsistent LSTM layer shapes: w_input {self.w_input.shape}, "
                f"w_hidden {self.w_hidden.shape}, bias {self.bias.shape}"
            )

    @property
    def hidden_size(self):
        return self.w_hidden.shape[1]

    @property
    def input_size(self):
        return self.w_input.shape[1]

    def arrays(self):
        return [self.w_input, self.w_hidden, self.bias]


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size, batch=None):
        shape = (hidden_size,) if batch is None else (batch, hidden_size)
        return cls(np.zeros(shape, dtype=DTYPE), np.zeros(shape, dtype=DTYPE))


@dataclass
class LstmStack:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ArgumentError("an LSTM stack needs at least one layer")
        for below, above in zip(self.layers, self.layers[1:]):
            if above.input_size != below.hidden_size:
                raise DimensionError(
                    f"layer input size {above.input_size} does not match "
                    f"hidden size {below.hidden_size} of the layer below"
                )

    @property
    def hidden_size(self):
        return self.layers[-1].hidden_size

    @property
    def input_size(self):
        return self.layers[0].input_size

    def __len__(self):
        return len(self.layers)


def lstm_param_count(input_size, hidden_size, num_layers):
    """Closed-form count ``4(H(D+H)+H)`` summed over layers."""
    total, d = 0, input_size
    for _ in range(num_layers):
        total += 4 * (hidden_size * (d + hidden_size) + hidden_size)
        d = hidden_size
    return total


def init_lstm_stack(input_size, hidden_size, num_layers, rng):
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, forget-gate bias 1, other biases 0."""
    bound = 1.0 / np.sqrt(hidden_size)
    layers, d = [], input_size
    for _ in range(num_layers):
        w_input = rng.uniform(-bound, bound, size=(4 * hidden_size, d))
        w_hidden = rng.uniform(-bound, bound, size=(4 * hidden_size, hidden_size))
        bias = np.zeros(4 * hidden_size, dtype=DTYPE)
        bias[hidden_size:2 * hidden_size] = 1.0
        layers.append(LstmLayerParams(w_input, w_hidden, bias))
        d = hidden_size
    return LstmStack(layers)


def _gates(z, H):
    act = np.empty_like(z)
    act[..., :2 * H] = sigmoid(z[..., :2 * H])
    act[..., 2 * H:3 * H] = np.tanh(z[..., 2 * H:3 * H])
    act[..., 3 * H:] = sigmoid(z[..., 3 * H:])
    return act


def _cell(act, c_prev, H):
    i, f, g, o = act[..., :H], act[..., H:2 * H], act[..., 2 * H:3 * H], act[..., 3 * H:]
    c = f * c_prev + i * g
    tc = np.tanh(c)
    return o * tc, c, tc


def lstm_step(params, x, prev):
    """Advance one LSTM layer by one time step."""
    H = params.hidden_size
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[-1] != params.input_size:
        raise DimensionError(f"input of size {x.shape[-1]} fed to layer expecting {params.input_size}")
    if prev.h.shape[-1] != H or prev.c.shape[-1] != H:
        raise DimensionError(f"state sizes {prev.h.shape}/{prev.c.shape} do not match hidden size {H}")
    z = prev.h @ np.ascontiguousarray(params.w_hidden.T)
    z += x @ params.w_input.T + params.bias
    h, c, _ = _cell(_gates(z, H), prev.c, H)
    return LstmState(h, c)


@dataclass
class _LayerTape:
    xs: np.ndarray     # (T, B, D_in) layer inputs
    acts: np.ndarray   # (T, B, 4H) activated gates
    hs: np.ndarray     # (T+1, B, H) held hidden states, hs[0] = init
    cs: np.ndarray     # (T+1, B, H) held cell states
    tcs: np.ndarray    # (T, B, H) tanh of the new cell


@dataclass
class LstmTape:
    stack: LstmStack
    layers: list
    mask: np.ndarray = None
    single: bool = False
    active: np.ndarray = None  # per-step running-clip counts for prefix-shaped masks


def _promote_sequence(inputs):
    if isinstance(inputs, (list, tuple)):
        if len(inputs) == 0:
            raise ArgumentError("input sequence is empty")
        inputs = np.stack([np.asarray(v, dtype=DTYPE) for v in inputs])
    xs = np.asarray(inputs, dtype=DTYPE)
    if xs.ndim == 2:
        return xs[:, None, :], True
    if xs.ndim == 3:
        return xs, False
    raise DimensionError(f"input sequence must be (T, D) or (T, B, D), got {xs.shape}")


def _prefix_counts(m):
    """Per-step counts ``n_t`` if every mask row is ``n_t`` ones then zeros, else None."""
    if m is None:
        return None
    m = m[:, :, 0]
    counts = m.sum(axis=1)
    if not np.array_equal(m, np.arange(m.shape[1])[None, :] < counts[:, None]):
        return None
    return counts


def lstm_forward(stack, inputs, init=None, mask=None):
    """Run the stack over a sequence.

    Parameters
    ----------
    stack : LstmStack
    inputs : array of shape (T, D) or (T, B, D), or a list of vectors
    init : list of LstmState, one per layer, optional (zeros by default)
    mask : array of shape (T, B), optional

    Returns
    -------
    top_hiddens : (T, H) or (T, B, H)
    final_states : list of LstmState
    tape : LstmTape
    """
    xs, single = _promote_sequence(inputs)
    T, B, D = xs.shape
    if T == 0:
        raise ArgumentError("input sequence is empty")
    if D != stack.input_size:
        raise DimensionError(f"inputs have size {D}, stack expects {stack.input_size}")
    if init is not None and len(init) != len(stack):
        raise DimensionError(f"{len(init)} initial states given for {len(stack)} layers")
    m = None
    if mask is not None:
        m = np.asarray(mask).astype(bool)
        if m.shape != (T, B):
            raise DimensionError(f"mask shape {m.shape} does not match (T, B) = {(T, B)}")
        m = m[:, :, None]
    active = _prefix_counts(m)

    tapes, finals = [], []
    layer_in = xs
    for li, p in enumerate(stack.layers):
        H = p.hidden_size
        hs = np.empty((T + 1, B, H), dtype=DTYPE)
        cs = np.empty((T + 1, B, H), dtype=DTYPE)
        if init is None:
            hs[0] = 0.0
            cs[0] = 0.0
        else:
            s = init[li]
            if s.h.shape[-1] != H or s.c.shape[-1] != H:
                raise DimensionError(f"initial state of layer {li} has wrong size for hidden size {H}")
            hs[0] = np.reshape(s.h, (-1, H))
            cs[0] = np.reshape(s.c, (-1, H))
        proj = rows_matmul(layer_in, p.w_input.T) + p.bias
        w_hidden_t = np.ascontiguousarray(p.w_hidden.T)
        acts = np.empty((T, B, 4 * H), dtype=DTYPE) if active is None else np.zeros((T, B, 4 * H), dtype=DTYPE)
        tcs = np.empty((T, B, H), dtype=DTYPE) if active is None else np.zeros((T, B, H), dtype=DTYPE)
        for t in range(T):
            # with prefix-shaped masks only the first n clips are still running
            n = B if active is None else active[t]
            a = acts[t, :n]
            np.matmul(hs[t, :n], w_hidden_t, out=a)
            a += proj[t, :n]
            sigmoid(a[:, :2 * H], out=a[:, :2 * H])
            np.tanh(a[:, 2 * H:3 * H], out=a[:, 2 * H:3 * H])
            sigmoid(a[:, 3 * H:], out=a[:, 3 * H:])
            c_new = a[:, H:2 * H] * cs[t, :n]
            c_new += a[:, :H] * a[:, 2 * H:3 * H]
            np.tanh(c_new, out=tcs[t, :n])
            h_new = a[:, 3 * H:] * tcs[t, :n]
            if m is None:
                hs[t + 1] = h_new
                cs[t + 1] = c_new
            elif active is not None:
                hs[t + 1, :n] = h_new
                cs[t + 1, :n] = c_new
                hs[t + 1, n:] = hs[t, n:]
                cs[t + 1, n:] = cs[t, n:]
            else:
                np.copyto(hs[t + 1], np.where(m[t], h_new, hs[t]))
                np.copyto(cs[t + 1], np.where(m[t], c_new, cs[t]))
        tapes.append(_LayerTape(layer_in, acts, hs, cs, tcs))
        finals.append(LstmState(hs[T], cs[T]))
        layer_in = hs[1:]

    top = layer_in
    if single:
        top = top[:, 0, :]
        finals = [LstmState(s.h[0], s.c[0]) for s in finals]
    tape = LstmTape(stack, tapes, None if m is None else m, single, active)
    return top, finals, tape


def lstm_backward(tape, grad_top_hidden, grad_final=None):
    """Backpropagate through a tape produced by :func:`lstm_forward`.

    ``grad_top_hidden`` holds the loss partials with respect to each
    top-layer hidden output (same shape as the forward output);
    ``grad_final`` optionally holds partials with respect to the final
    ``(h, c)`` of every layer (``None`` entries count as zero).

    Returns
    -------
    param_grads : list of LstmLayerParams holding gradients
    input_grads : array shaped like the forward inputs
    init_state_grads : list of LstmState
    """
    stack = tape.stack
    top = tape.layers[-1]
    T, B, H_top = top.hs.shape[0] - 1, top.hs.shape[1], top.hs.shape[2]
    g = np.asarray(grad_top_hidden, dtype=DTYPE)
    if tape.single:
        g = g[:, None, :] if g.ndim == 2 else g
    if g.shape != (T, B, H_top):
        raise ContractError(f"top-hidden gradient shape {np.shape(grad_top_hidden)} does not match the tape")
    if grad_final is not None and len(grad_final) != len(stack):
        raise ContractError(f"{len(grad_final)} final-state gradients for {len(stack)} layers")
    m = tape.mask

    param_grads = [None] * len(stack)
    init_grads = [None] * len(stack)
    dh_out = g
    for li in reversed(range(len(stack))):
        p, lt = stack.layers[li], tape.layers[li]
        H = p.hidden_size
        dh_next = np.zeros((B, H), dtype=DTYPE)
        dc_next = np.zeros((B, H), dtype=DTYPE)
        if grad_final is not None and grad_final[li] is not None:
            gf = grad_final[li]
            dh_next += np.reshape(gf.h, (-1, H))
            dc_next += np.reshape(gf.c, (-1, H))
        # Step-independent local derivatives, vectorized over the whole sequence.
        acts = lt.acts
        i, f, g, o = acts[..., :H], acts[..., H:2 * H], acts[..., 2 * H:3 * H], acts[..., 3 * H:]
        tc = lt.tcs
        dh_to_dc = o * (1.0 - tc * tc)
        dc_to_dz = np.concatenate([
            g * i * (1.0 - i), lt.cs[:-1] * f * (1.0 - f), i * (1.0 - g * g),
        ], axis=-1).reshape(T, B, 3, H)
        dh_to_dz = tc * o * (1.0 - o)

        dz = np.empty((T, B, 4 * H), dtype=DTYPE)
        dz_cell = dz[..., :3 * H].reshape(T, B, 3, H)
        dz_out = dz[..., 3 * H:]
        w_hidden = p.w_hidden
        active = tape.active
        if active is not None:
            dz[...] = 0.0
        for t in reversed(range(T)):
            if active is not None:
                n = active[t]
                dh = dh_out[t, :n] + dh_next[:n]
                dc = dc_next[:n] + dh * dh_to_dc[t, :n]
                np.multiply(dc[:, None, :], dc_to_dz[t, :n], out=dz_cell[t, :n])
                np.multiply(dh, dh_to_dz[t, :n], out=dz_out[t, :n])
                dh_next[n:] += dh_out[t, n:]
                dh_next[:n] = dz[t, :n] @ w_hidden
                dc_next[:n] = dc * f[t, :n]
                continue
            dh = dh_out[t] + dh_next
            dc = dc_next
            if m is not None:
                dh_hold, dc_hold = np.where(m[t], 0.0, dh), np.where(m[t], 0.0, dc)
                dh, dc = np.where(m[t], dh, 0.0), np.where(m[t], dc, 0.0)
            dc = dc + dh * dh_to_dc[t]
            np.multiply(dc[:, None, :], dc_to_dz[t], out=dz_cell[t])
            np.multiply(dh, dh_to_dz[t], out=dz_out[t])
            dh_next = dz[t] @ w_hidden
            dc_next = dc * f[t]
            if m is not None:
                dh_next += dh_hold
                dc_next += dc_hold
        flat = dz.reshape(T * B, 4 * H)
        param_grads[li] = LstmLayerParams(
            flat.T @ lt.xs.reshape(T * B, -1),
            flat.T @ lt.hs[:-1].reshape(T * B, H),
            flat.sum(axis=0),
        )
        init_grads[li] = LstmState(dh_next, dc_next)
        dh_out = rows_matmul(dz, p.w_input)

    input_grads = dh_out
    if tape.single:
        input_grads = input_grads[:, 0, :]
        init_grads = [LstmState(s.h[0], s.c[0]) for s in init_grads]
    return param_grads, input_grads, init_grads
