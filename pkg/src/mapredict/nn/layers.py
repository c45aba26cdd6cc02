"""Layers with explicit forward/backward passes over float64 numpy arrays.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Recurrent layers are time-major.
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatchError


def _reduce_to(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(s, axis=-1):
    z = s - s.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dy, mask):
    return dy * mask


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(dy, y):
    return dy * (1.0 - y * y)


# ---------------------------------------------------------------- dense


def dense_forward(x, W, b):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != W.shape[-2] or b.shape[-1] != W.shape[-1]:
        raise ShapeMismatchError(f"dense: input {x.shape} vs weight {W.shape} / bias {b.shape}")
    return x @ W + b, (x, W, b.shape)


def dense_backward(dy, cache):
    x, W, bshape = cache
    dx = dy @ np.swapaxes(W, -1, -2)
    xf = x.reshape(-1, x.shape[-1]) if W.ndim == 2 else x
    dyf = dy.reshape(-1, dy.shape[-1]) if W.ndim == 2 else dy
    dW = _reduce_to(np.swapaxes(xf, -1, -2) @ dyf, W.shape)
    db = _reduce_to(dy, bshape)
    return dx, dW, db


# ---------------------------------------------------------------- LSTM
#
# Gate blocks along the last axis are ordered [input, forget, cell, output].
# Weights may carry a leading group axis (one independent LSTM per group):
# Wx (G, in, 4h), Wh (G, h, 4h), b (G, 1, 4h) with inputs shaped (G, B, in).


def lstm_cell_forward(x, h, c, p):
    Wx, Wh, b = p["Wx"], p["Wh"], p["b"]
    if x.shape[-1] != Wx.shape[-2] or h.shape[-1] != Wh.shape[-2] or Wh.shape[-1] != 4 * h.shape[-1]:
        raise ShapeMismatchError(f"lstm: x {x.shape}, h {h.shape} vs Wx {Wx.shape}, Wh {Wh.shape}")
    if c.shape != h.shape:
        raise ShapeMismatchError(f"lstm: h {h.shape} vs c {c.shape}")
    n = h.shape[-1]
    z = x @ Wx + h @ Wh + b
    i = sigmoid(z[..., :n])
    f = sigmoid(z[..., n:2 * n])
    g = np.tanh(z[..., 2 * n:3 * n])
    o = sigmoid(z[..., 3 * n:])
    c2 = f * c + i * g
    tc = np.tanh(c2)
    h2 = o * tc
    return h2, c2, (x, h, c, i, f, g, o, tc)


def lstm_cell_backward(dh2, dc2, cache, p, grads):
    """Returns (dx, dh, dc); parameter gradients are accumulated into ``grads``."""
    x, h, c, i, f, g, o, tc = cache
    do = dh2 * tc
    dc = dc2 + dh2 * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c
    dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=-1)
    Wx, Wh = p["Wx"], p["Wh"]
    if Wx.ndim == 2:
        grads["Wx"] += x.reshape(-1, x.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
        grads["Wh"] += h.reshape(-1, h.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
    else:
        grads["Wx"] += np.swapaxes(x, -1, -2) @ dz
        grads["Wh"] += np.swapaxes(h, -1, -2) @ dz
    grads["b"] += _reduce_to(dz, p["b"].shape)
    return dz @ np.swapaxes(Wx, -1, -2), dz @ np.swapaxes(Wh, -1, -2), dc * f


def _zero_grads(p):
    return {k: np.zeros_like(p[k]) for k in ("Wx", "Wh", "b")}


def lstm_sequence_forward(xs, p, direction="fwd", h0=None, c0=None):
    """Unrolled LSTM over axis 0 of ``xs``; returns hidden states for every step.

    ``direction='bwd'`` runs on the time-reversed input and re-reverses the
    output, so position t holds the state after reading steps T-1 .. t.
    """
    if direction not in ("fwd", "bwd"):
        raise ValueError(f"direction must be 'fwd' or 'bwd', got {direction!r}")
    xs = np.asarray(xs, dtype=float)
    if xs.shape[0] < 1:
        raise ValueError("sequence needs at least one step")
    seq = xs[::-1] if direction == "bwd" else xs
    n = p["Wh"].shape[-2]
    lead = xs.shape[1:-1]
    h = np.zeros(lead + (n,)) if h0 is None else h0
    c = np.zeros(lead + (n,)) if c0 is None else c0
    hs, caches = [], []
    for x in seq:
        h, c, cache = lstm_cell_forward(x, h, c, p)
        hs.append(h)
        caches.append(cache)
    hs = np.stack(hs)
    if direction == "bwd":
        hs = hs[::-1]
    return hs, (caches, direction)


def lstm_sequence_backward(dhs, cache, p):
    caches, direction = cache
    d = dhs[::-1] if direction == "bwd" else dhs
    grads = _zero_grads(p)
    dxs = [None] * len(caches)
    dh_next = np.zeros_like(d[0])
    dc_next = np.zeros_like(d[0])
    for t in range(len(caches) - 1, -1, -1):
        dx, dh_next, dc_next = lstm_cell_backward(d[t] + dh_next, dc_next, caches[t], p, grads)
        dxs[t] = dx
    dxs = np.stack(dxs)
    if direction == "bwd":
        dxs = dxs[::-1]
    return dxs, grads


def bilstm_forward(xs, p_fwd, p_bwd):
    hf, cf = lstm_sequence_forward(xs, p_fwd, "fwd")
    hb, cb = lstm_sequence_forward(xs, p_bwd, "bwd")
    return np.concatenate([hf, hb], axis=-1), (cf, cb, hf.shape[-1])


def bilstm_backward(dy, cache, p_fwd, p_bwd):
    cf, cb, n = cache
    dxf, gf = lstm_sequence_backward(dy[..., :n], cf, p_fwd)
    dxb, gb = lstm_sequence_backward(dy[..., n:], cb, p_bwd)
    return dxf + dxb, gf, gb


# ---------------------------------------------------------------- attention


def mha_forward(X, p, heads):
    """Multi-head self-attention over axis -2 of ``X`` (..., T, d_model)."""
    X = np.asarray(X, dtype=float)
    d = X.shape[-1]
    if d % heads:
        raise ShapeMismatchError(f"attention: d_model {d} not divisible by {heads} heads")
    for k in ("WQ", "WK", "WV", "WO"):
        if p[k].shape != (d, d):
            raise ShapeMismatchError(f"attention: {k} {p[k].shape} vs d_model {d}")
    dk = d // heads
    T = X.shape[-2]
    lead = X.shape[:-2]

    def split(Z):  # (..., T, d) -> (..., h, T, dk)
        return np.swapaxes(Z.reshape(lead + (T, heads, dk)), -2, -3)

    Q, K, V = split(X @ p["WQ"]), split(X @ p["WK"]), split(X @ p["WV"])
    scale = 1.0 / np.sqrt(dk)
    A = softmax((Q @ np.swapaxes(K, -1, -2)) * scale)
    O = A @ V
    Oc = np.swapaxes(O, -2, -3).reshape(lead + (T, d))
    Y = Oc @ p["WO"]
    return Y, (X, Q, K, V, A, Oc, scale, heads)


def mha_backward(dY, cache, p):
    X, Q, K, V, A, Oc, scale, heads = cache
    d = X.shape[-1]
    T = X.shape[-2]
    lead = X.shape[:-2]
    dk = d // heads

    def flat(Z):
        return Z.reshape(-1, Z.shape[-1])

    def split(Z):
        return np.swapaxes(Z.reshape(lead + (T, heads, dk)), -2, -3)

    def merge(Z):
        return np.swapaxes(Z, -2, -3).reshape(lead + (T, d))

    grads = {"WO": flat(Oc).T @ flat(dY)}
    dO = split(dY @ p["WO"].T)
    dA = dO @ np.swapaxes(V, -1, -2)
    dV = np.swapaxes(A, -1, -2) @ dO
    dS = A * (dA - np.sum(dA * A, axis=-1, keepdims=True)) * scale
    dQ = dS @ K
    dK = np.swapaxes(dS, -1, -2) @ Q
    dQ, dK, dV = merge(dQ), merge(dK), merge(dV)
    Xf = flat(X)
    grads["WQ"] = Xf.T @ flat(dQ)
    grads["WK"] = Xf.T @ flat(dK)
    grads["WV"] = Xf.T @ flat(dV)
    dX = dQ @ p["WQ"].T + dK @ p["WK"].T + dV @ p["WV"].T
    return dX, grads


def attention_weights(X, p, heads):
    """Row-stochastic attention matrices (..., h, T, T) for inspection."""
    return mha_forward(X, p, heads)[1][4]


# ---------------------------------------------------------------- dropout & misc


def dropout_forward(x, rate, mode, rng=None):
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


def sinusoidal_encoding(T, d):
    pos = np.arange(T)[:, None]
    k = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (k // 2)) / d)
    return np.where(k % 2 == 0, np.sin(angle), np.cos(angle))
