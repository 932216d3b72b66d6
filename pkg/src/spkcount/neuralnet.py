"""Small differentiable layer set with hand-written backward passes.

Tensors are plain numpy arrays laid out time-major per sequence with an
optional leading batch axis: conv/pool take ``(B, T, F, C)`` (or ``(T, F, C)``),
the LSTM takes ``(B, T, D)`` (or ``(T, D)``). Layers compute in the dtype
they are given, so the same code runs 32-bit training and 64-bit checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LayerGrads:
    dx: np.ndarray | None
    params: dict = field(default_factory=dict)


def _batched(x: np.ndarray, ndim: int):
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise ValueError(f"expected a {ndim - 1}-D or batched {ndim}-D tensor, got shape {x.shape}")
    return x, False


# ------------------------------------------------------------------ conv2d


def _im2col(x: np.ndarray, k: int, time_pad_value) -> np.ndarray:
    p = k // 2
    lo, hi = np.broadcast_to(np.asarray(time_pad_value, dtype=float), (2,))
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (0, 0)))
    if p and (lo != 0.0 or hi != 0.0):
        fill = ((0, 0), (lo, hi), (0, 0), (0, 0))
        xp = np.pad(xp, ((0, 0), (p, p), (0, 0), (0, 0)), constant_values=fill)
    else:
        xp = np.pad(xp, ((0, 0), (p, p), (0, 0), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))  # B,T,F,C,k,k
    b, t, f, c = x.shape
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(b * t * f, k * k * c)


def conv2d_forward(x, w, b, time_pad_value=0.0) -> np.ndarray:
    """Stride-1 'same' convolution over (time, frequency).

    ``w`` has shape ``(K, K, C_in, C_out)`` with odd ``K``; both axes are
    zero-padded by ``K // 2``. ``time_pad_value`` replaces the fill of the
    time-axis padding only (frequency padding stays zero), which is what the
    empirical taint probe varies. A pair ``(before, after)`` fills the two
    ends differently.
    """
    k = w.shape[0]
    if k % 2 == 0 or w.shape[1] != k:
        raise ValueError(f"kernel must be square with odd size, got {w.shape[:2]}")
    x, single = _batched(x, 4)
    if x.shape[3] != w.shape[2]:
        raise ValueError(f"input has {x.shape[3]} channels, kernel expects {w.shape[2]}")
    bsz, t, f, _ = x.shape
    cols = _im2col(x, k, time_pad_value)
    y = (cols @ w.reshape(-1, w.shape[3])).reshape(bsz, t, f, w.shape[3]) + b
    return y[0] if single else y


def conv2d_backward(x, w, upstream, need_dx: bool = True) -> LayerGrads:
    k = w.shape[0]
    x, single = _batched(x, 4)
    dy, _ = _batched(upstream, 4)
    if dy.shape[:3] != x.shape[:3] or dy.shape[3] != w.shape[3]:
        raise ValueError("upstream gradient shape does not match conv output")
    c_out = w.shape[3]
    cols = _im2col(x, k, 0.0)
    dy2 = dy.reshape(-1, c_out)
    dw = (cols.T @ dy2).reshape(w.shape)
    db = dy2.sum(axis=0)
    if not need_dx:
        return LayerGrads(None, {"w": dw, "b": db})
    # adjoint of a stride-1 'same' conv is the same conv with the flipped, transposed kernel
    w_adj = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    dx = conv2d_forward(dy, w_adj, np.zeros(w.shape[2], dtype=dy.dtype))
    return LayerGrads(dx[0] if single else dx, {"w": dw, "b": db})


# ------------------------------------------------------------------ pooling


def maxpool_freq(x, pool: int):
    """Max over non-overlapping frequency groups; a ragged last group is kept.

    Returns ``(y, argmax)`` where ``argmax`` holds, per output cell, the
    winning offset inside its group (lowest index on ties).
    """
    if pool < 1:
        raise ValueError("pool must be >= 1")
    x, single = _batched(x, 4)
    b, t, f, c = x.shape
    n_out = -(-f // pool)
    pad = n_out * pool - f
    xp = np.pad(x, ((0, 0), (0, 0), (0, pad), (0, 0)), constant_values=-np.inf) if pad else x
    groups = xp.reshape(b, t, n_out, pool, c)
    arg = groups.argmax(axis=3)
    y = np.take_along_axis(groups, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    record = (arg, f, pool, single)
    return (y[0] if single else y), record


def maxpool_freq_backward(record, upstream) -> np.ndarray:
    arg, f, pool, single = record
    dy, _ = _batched(upstream, 4)
    b, t, n_out, c = dy.shape
    dx = np.zeros((b, t, n_out, pool, c), dtype=dy.dtype)
    np.put_along_axis(dx, arg[:, :, :, None, :], dy[:, :, :, None, :], axis=3)
    dx = dx.reshape(b, t, n_out * pool, c)[:, :, :f]
    return dx[0] if single else dx


# ------------------------------------------------------------------ relu


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, upstream):
    return upstream * (x > 0)


# ------------------------------------------------------------------ lstm


def sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


@dataclass
class LstmCache:
    x: np.ndarray
    h: np.ndarray  # (B, T+1, H), h[:, 0] is the initial state
    c: np.ndarray  # (B, T+1, H)
    gates: np.ndarray  # (B, T, 4H) post-activation i, f, o, g
    single: bool


def lstm_forward(seq, wx, wh, b):
    """Unidirectional LSTM from zero state; returns ``(h (.., T, H), cache)``.

    Gate layout along the last axis of ``wx`` ``(D, 4H)``, ``wh`` ``(H, 4H)``
    and ``b`` ``(4H,)`` is input, forget, output, candidate.
    """
    x, single = _batched(seq, 3)
    bsz, t_len, d = x.shape
    hid = wh.shape[0]
    if wx.shape != (d, 4 * hid) or wh.shape != (hid, 4 * hid) or b.shape != (4 * hid,):
        raise ValueError("LSTM parameter shapes are inconsistent with the input")
    xw = (x.reshape(-1, d) @ wx).reshape(bsz, t_len, 4 * hid) + b
    h = np.zeros((bsz, t_len + 1, hid), dtype=x.dtype)
    c = np.zeros((bsz, t_len + 1, hid), dtype=x.dtype)
    gates = np.empty((bsz, t_len, 4 * hid), dtype=x.dtype)
    for t in range(t_len):
        z = xw[:, t] + h[:, t] @ wh
        ifo = sigmoid(z[:, : 3 * hid])
        g = np.tanh(z[:, 3 * hid :])
        gates[:, t, : 3 * hid] = ifo
        gates[:, t, 3 * hid :] = g
        c[:, t + 1] = ifo[:, hid : 2 * hid] * c[:, t] + ifo[:, :hid] * g
        h[:, t + 1] = ifo[:, 2 * hid :] * np.tanh(c[:, t + 1])
    out = h[:, 1:]
    return (out[0] if single else out), LstmCache(x, h, c, gates, single)


def lstm_backward(cache: LstmCache, wx, wh, upstream) -> LayerGrads:
    """Backpropagation through time."""
    dh_out, _ = _batched(upstream, 3)
    x, h, c, gates = cache.x, cache.h, cache.c, cache.gates
    bsz, t_len, d = x.shape
    hid = wh.shape[0]
    dz = np.empty_like(gates)
    dh_next = np.zeros((bsz, hid), dtype=x.dtype)
    dc_next = np.zeros((bsz, hid), dtype=x.dtype)
    for t in reversed(range(t_len)):
        i = gates[:, t, :hid]
        f = gates[:, t, hid : 2 * hid]
        o = gates[:, t, 2 * hid : 3 * hid]
        g = gates[:, t, 3 * hid :]
        tc = np.tanh(c[:, t + 1])
        dh = dh_out[:, t] + dh_next
        dc = dh * o * (1 - tc * tc) + dc_next
        dz[:, t, :hid] = dc * g * i * (1 - i)
        dz[:, t, hid : 2 * hid] = dc * c[:, t] * f * (1 - f)
        dz[:, t, 2 * hid : 3 * hid] = dh * tc * o * (1 - o)
        dz[:, t, 3 * hid :] = dc * i * (1 - g * g)
        dh_next = dz[:, t] @ wh.T
        dc_next = dc * f
    dz2 = dz.reshape(-1, 4 * hid)
    dwx = x.reshape(-1, d).T @ dz2
    dwh = h[:, :-1].reshape(-1, hid).T @ dz2
    db = dz2.sum(axis=0)
    dx = (dz2 @ wx.T).reshape(bsz, t_len, d)
    return LayerGrads(dx[0] if cache.single else dx, {"wx": dwx, "wh": dwh, "b": db})


# ------------------------------------------------------------------ output


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def dense_softmax_xent(h, target, w, b):
    """Dense layer + softmax + cross-entropy, averaged over all leading axes.

    ``h`` is ``(..., H)``, ``target`` a one-hot ``(..., n_classes)``. Returns
    ``(probs, loss, LayerGrads)``; the logit gradient is ``(probs - target) / n``.
    """
    target = np.asarray(target)
    if target.shape[-1] != w.shape[1] or target.shape[:-1] != h.shape[:-1]:
        raise ValueError("target shape does not match the output layer")
    if not (np.all((target == 0) | (target == 1)) and np.all(target.sum(axis=-1) == 1)):
        raise ValueError("target must be one-hot")
    logits = h @ w + b
    z = logits - logits.max(axis=-1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    probs = np.exp(log_probs)
    n = int(np.prod(h.shape[:-1]))
    loss = -float(np.sum(log_probs * target)) / n
    dlogits = (probs - target) / n
    grads = LayerGrads(
        dlogits @ w.T,
        {"w": h.reshape(-1, h.shape[-1]).T @ dlogits.reshape(-1, w.shape[1]),
         "b": dlogits.reshape(-1, w.shape[1]).sum(axis=0)},
    )
    return probs, loss, grads


# ------------------------------------------------------------------ optimizer


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0


def adam_init(params: dict) -> AdamState:
    return AdamState(
        {k: np.zeros_like(p) for k, p in params.items()},
        {k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(params: dict, grads: dict, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction; returns ``(params, state)``."""
    state.step += 1
    bc1 = 1 - beta1**state.step
    bc2 = 1 - beta2**state.step
    for k, p in params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.dtype, copy=False)
    return params, state


def clip_by_global_norm(grads: dict, max_norm: float):
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if max_norm and total > max_norm:
        scale = max_norm / total
        grads = {k: g * np.asarray(scale, dtype=g.dtype) for k, g in grads.items()}
    return grads, total


# ------------------------------------------------------------------ layer objects + gradient check


class Layer:
    """Parameter dict plus forward/backward, the shape ``grad_check`` expects."""

    params: dict

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, upstream) -> LayerGrads:
        raise NotImplementedError


class Conv2D(Layer):
    def __init__(self, w, b):
        self.params = {"w": w, "b": b}

    def forward(self, x):
        return conv2d_forward(x, self.params["w"], self.params["b"]), x

    def backward(self, cache, upstream):
        return conv2d_backward(cache, self.params["w"], upstream)


class MaxPoolFreq(Layer):
    def __init__(self, pool: int):
        self.pool = pool
        self.params = {}

    def forward(self, x):
        return maxpool_freq(x, self.pool)

    def backward(self, cache, upstream):
        return LayerGrads(maxpool_freq_backward(cache, upstream))


class ReLU(Layer):
    params: dict = {}

    def forward(self, x):
        return relu(x), x

    def backward(self, cache, upstream):
        return LayerGrads(relu_backward(cache, upstream))


class LSTM(Layer):
    def __init__(self, wx, wh, b):
        self.params = {"wx": wx, "wh": wh, "b": b}

    def forward(self, x):
        return lstm_forward(x, self.params["wx"], self.params["wh"], self.params["b"])

    def backward(self, cache, upstream):
        return lstm_backward(cache, self.params["wx"], self.params["wh"], upstream)


class DenseSoftmaxXent(Layer):
    """Output layer whose forward result is the scalar loss for a fixed target."""

    def __init__(self, w, b, target):
        self.params = {"w": w, "b": b}
        self.target = target

    def forward(self, x):
        _, loss, grads = dense_softmax_xent(x, self.target, self.params["w"], self.params["b"])
        return np.asarray(loss), grads

    def backward(self, cache, upstream):
        scale = float(upstream)
        return LayerGrads(cache.dx * scale, {k: g * scale for k, g in cache.params.items()})


def grad_check(layer: Layer, x: np.ndarray, eps: float = 1e-5, seed: int = 0, floor: float = 1e-4):
    """Largest relative error between analytic and central-difference gradients.

    The layer output ``y`` is reduced to a scalar ``sum(y * r)`` with a fixed
    random ``r`` (scalar outputs use ``r = 1``). Every parameter and input
    coordinate is perturbed by ``+-eps``. Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps round-off on
    near-zero gradients from dominating.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    y, cache = layer.forward(x)
    r = np.ones_like(y) if np.ndim(y) == 0 else rng.standard_normal(np.shape(y))

    def objective():
        out, _ = layer.forward(x)
        return float(np.sum(out * r))

    analytic = layer.backward(cache, r)
    pairs = [(x, analytic.dx)] + [(layer.params[k], analytic.params[k]) for k in layer.params]
    worst = 0.0
    for arr, grad in pairs:
        if grad is None:
            continue
        flat = arr.reshape(-1)
        g = np.asarray(grad).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = objective()
            flat[i] = orig - eps
            fm = objective()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            err = abs(g[i] - num) / max(abs(g[i]), abs(num), floor)
            worst = max(worst, err)
    return worst
