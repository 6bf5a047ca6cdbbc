"""Layer operations with hand-written backward passes.

Convolutional ops take ``(N, C, L)`` batches; a 2-D ``(C, L)`` input is
treated as a batch of one and the result keeps the 2-D shape.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch
from .tensor import Tensor, as_tensor, concat, make, reshape, unbroadcast

__all__ = [
    "dense",
    "conv1d",
    "instance_norm",
    "prelu",
    "dropout",
    "global_average_pool",
    "max_pool",
    "softmax",
    "softmax_attention",
    "cross_entropy",
    "concat",
]


def _batched(x):
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise ShapeMismatch(f"expected (C, L) or (N, C, L), got {x.shape}")
    return x, False


def _unbatch(y, squeeze):
    if squeeze:
        return reshape(y, y.shape[1:])
    return y


def dense(x, W, b=None):
    """``y = W x + b`` over the last axis of ``x``; ``W`` is ``(n_out, n_in)``."""
    x, W = as_tensor(x), as_tensor(W)
    if x.shape[-1] != W.shape[1] or (b is not None and b.shape != (W.shape[0],)):
        raise ShapeMismatch(
            f"dense: x {x.shape}, W {W.shape}, b {None if b is None else b.shape}"
        )
    y = x.data @ W.data.T
    if b is not None:
        y = y + b.data
    parents = (x, W) if b is None else (x, W, b)

    def backward(g):
        gx = g @ W.data
        g2 = g.reshape(-1, g.shape[-1])
        gW = g2.T @ x.data.reshape(-1, x.shape[-1])
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    return make(y, parents, backward)


def conv1d(x, w, b=None):
    """Stride-1 cross-correlation with zero "same" padding and odd kernel size.

    ``y[n, o, l] = b[o] + sum_{c,k} w[o, c, k] * x[n, c, l + k - K//2]``.
    """
    x, w = as_tensor(x), as_tensor(w)
    x, squeeze = _batched(x)
    n, cin, length = x.shape
    cout, wcin, k = w.shape
    if wcin != cin or k % 2 == 0 or (b is not None and b.shape != (cout,)):
        raise ShapeMismatch(f"conv1d: x {x.shape}, w {w.shape}, b {None if b is None else b.shape}")
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    # im2col: rows are (example, time), columns are (in-channel, tap).
    cols = sliding_window_view(xp, k, axis=2).transpose(0, 2, 1, 3).reshape(n * length, cin * k)
    wmat = w.data.reshape(cout, cin * k)
    y = (cols @ wmat.T).reshape(n, length, cout).transpose(0, 2, 1)
    if b is not None:
        y = y + b.data[:, None]
    y = np.ascontiguousarray(y)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gmat = g.transpose(0, 2, 1).reshape(n * length, cout)
        gw = (gmat.T @ cols).reshape(w.shape)
        gcols = (gmat @ wmat).reshape(n, length, cin, k)
        gxp = np.zeros_like(xp)
        for t in range(k):
            gxp[:, :, t : t + length] += gcols[:, :, :, t].transpose(0, 2, 1)
        gx = gxp[:, :, pad : pad + length]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return _unbatch(make(y, parents, backward), squeeze)


def instance_norm(x, gain, shift, eps=1e-5):
    """Per-example, per-channel normalisation over time with affine ``gain``/``shift``."""
    x = as_tensor(x)
    x, squeeze = _batched(x)
    c, length = x.shape[1], x.shape[2]
    if length < 2 or gain.shape != (c,) or shift.shape != (c,):
        raise ShapeMismatch(f"instance_norm: x {x.shape}, gain {gain.shape}, shift {shift.shape}")
    mu = x.data.mean(axis=2, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = gain.data[:, None] * xhat + shift.data[:, None]

    def backward(g):
        gxhat = g * gain.data[:, None]
        gx = inv * (
            gxhat
            - gxhat.mean(axis=2, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=2, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

    return _unbatch(make(y, (x, gain, shift), backward), squeeze)


def prelu(x, slope):
    """``x`` where positive, ``slope * x`` elsewhere; ``slope`` broadcasts against ``x``."""
    x, slope = as_tensor(x), as_tensor(slope)
    one = x.dtype.type(1)
    mult = (x.data > 0).astype(x.dtype) * (one - slope.data) + slope.data
    y = x.data * mult

    def backward(g):
        gs = unbroadcast(np.minimum(x.data, 0) * g, slope.shape)
        return g * mult, gs

    return make(y, (x, slope), backward)


def dropout(x, rate, train, rng=None):
    """Inverted dropout; identity in eval mode or when ``rate == 0``."""
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = rng.random(x.shape, dtype=np.float32) >= rate
    keep = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return make(x.data * keep, (x,), lambda g: (g * keep,))


def global_average_pool(x):
    """Mean over the time (last) axis."""
    x = as_tensor(x)
    length = x.shape[-1]
    return make(x.data.mean(axis=-1), (x,),
                lambda g: (np.broadcast_to(g[..., None] / length, x.shape).copy(),))


def max_pool(x, window, stride=None):
    """Windowed maxima along time; gradient goes to the first maximal element.

    Output length is ``(L - window) // stride + 1``.
    """
    x = as_tensor(x)
    stride = window if stride is None else stride
    length = x.shape[-1]
    if length < window or window < 1 or stride < 1:
        raise ShapeMismatch(f"max_pool: length {length}, window {window}, stride {stride}")
    n_out = (length - window) // stride + 1
    if stride == window:
        win = x.data[..., : n_out * window].reshape(x.shape[:-1] + (n_out, window))
        # Running comparison over taps; strict ">" keeps the first maximum.
        y = win[..., 0].copy()
        arg = np.zeros(y.shape, dtype=np.int64)
        for t in range(1, window):
            better = win[..., t] > y
            y = np.where(better, win[..., t], y) if window > 2 else np.maximum(y, win[..., t])
            arg[better] = t
    else:
        win = sliding_window_view(x.data, window, axis=-1)[..., ::stride, :]
        arg = win.argmax(axis=-1)
        y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(x.data)
        if stride == window:
            gw = np.empty(x.shape[:-1] + (n_out, window), dtype=x.dtype)
            for t in range(window):
                gw[..., t] = g * (arg == t)
            gx[..., : n_out * window] = gw.reshape(x.shape[:-1] + (n_out * window,))
            return (gx,)
        flat = gx.reshape(-1, length)
        pos = (arg + np.arange(n_out) * stride).reshape(-1, n_out)
        rows = np.repeat(np.arange(flat.shape[0]), n_out)
        np.add.at(flat, (rows, pos.reshape(-1)), g.reshape(-1))
        return (gx,)

    return make(y, (x,), backward)


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make(s, (x,), backward)


def attention_weights(h):
    """Softmax over time of the channel-mean score at each time step."""
    h = as_tensor(h)
    return softmax(h.mean(axis=-2), axis=-1)


def softmax_attention(h):
    """Attention pooling: ``out[c] = sum_l w[l] * h[c, l]`` with ``w = softmax_l(mean_c h[:, l])``."""
    h = as_tensor(h)
    w = attention_weights(h)
    w = reshape(w, w.shape[:-1] + (1, w.shape[-1]))
    return (h * w).sum(axis=-1)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, target):
    """Mean negative log-likelihood of ``target`` under ``softmax(logits)``.

    ``logits`` is ``(C,)`` or ``(N, C)``; ``target`` the matching class index
    or index array. Uses the log-sum-exp form.
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    z = logits.data[None] if single else logits.data
    target = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if target.shape != (z.shape[0],):
        raise ShapeMismatch(f"cross_entropy: logits {logits.shape}, target {target.shape}")
    logp = log_softmax(z)
    rows = np.arange(z.shape[0])
    loss = -logp[rows, target].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, target] -= 1.0
        p *= g / z.shape[0]
        return (p[0] if single else p,)

    return make(np.asarray(loss, dtype=z.dtype), (logits,), backward)


def flatten(x):
    return reshape(x, (x.shape[0], -1))


def as_param(data, name=None):
    return Tensor(data, requires_grad=True, name=name)
