"""A small define-by-run reverse-mode autodiff engine over numpy arrays.

Only the primitives the denoisers and the reconstruction layer need are
provided. Every op builds a node holding its output value, its parents and
a closure mapping the upstream gradient to one gradient per parent.
Convolutional ops use channels-last (N, H, W, C) activations.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .geometry import Geometry
from .projector import back_project, forward_project
from .upsample import consensus

_DEBUG_FINITE = False


def set_debug(enabled: bool) -> None:
    """Turn on a finiteness check after every forward op."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = enabled


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        self.value = np.asarray(value)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__

    def backward(self):
        return backward(self)

    def zero_grad(self):
        self.grad = None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward_fn, op):
    if _DEBUG_FINITE and not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Tensor(value, op=op)
    return Tensor(value, True, parents, backward_fn, op)


def backward(loss: Tensor) -> dict:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every trainable leaf.

    Returns a map from each leaf tensor to its gradient for this call.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.value)}
    leaves = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            leaves[node] = g
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = grads[key] + pg if key in grads else pg
    for leaf, g in leaves.items():
        leaf.grad = g if leaf.grad is None else leaf.grad + g
    return leaves


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _node(a.value + b.value, (a, b), lambda g: (g, g), "add")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = a.dtype.type(c)
    return _node(a.value * c, (a,), lambda g: (g * c,), "scale")


def total(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.value.sum(keepdims=False), (a,), lambda g: (np.full_like(a.value, g),), "sum")


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.value.size
    return _node(
        a.value.mean(), (a,), lambda g: (np.full_like(a.value, g / n),), "mean"
    )


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    s = x.dtype.type(slope)
    if 0 <= slope <= 1:
        out = np.maximum(x.value, x.value * s)
    else:
        out = np.where(x.value > 0, x.value, x.value * s)

    def bw(g):
        return (g * np.where(x.value > 0, g.dtype.type(1), g.dtype.type(s)),)

    return _node(out, (x,), bw, "leaky_relu")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    return _node(out, tensors, lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def huber_loss(x, y, delta: float = 1.0) -> Tensor:
    """Mean Huber penalty: 0.5 d^2 for |d| < delta, else delta (|d| - delta / 2)."""
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"huber_loss: shape mismatch {x.shape} vs {y.shape}")
    d = x.value - y.value
    ad = np.abs(d)
    quad = ad < delta
    val = np.where(quad, 0.5 * d * d, delta * (ad - 0.5 * delta)).mean()
    n = d.size

    def bw(g):
        gd = np.where(quad, d, delta * np.sign(d)) * (g / n)
        return gd, -gd

    return _node(np.asarray(val, dtype=d.dtype), (x, y), bw, "huber")


# -- convolutional ----------------------------------------------------------


def to_channels_last(x) -> Tensor:
    """(N, C, H, W) -> (N, H, W, C)."""
    x = as_tensor(x)
    out = np.ascontiguousarray(x.value.transpose(0, 2, 3, 1))
    return _node(out, (x,), lambda g: (g.transpose(0, 3, 1, 2),), "to_channels_last")


def to_channels_first(x) -> Tensor:
    """(N, H, W, C) -> (N, C, H, W)."""
    x = as_tensor(x)
    out = np.ascontiguousarray(x.value.transpose(0, 3, 1, 2))
    return _node(out, (x,), lambda g: (g.transpose(0, 2, 3, 1),), "to_channels_first")


def _patches(xp, kh: int, kw: int, stride: int) -> tuple[np.ndarray, int, int]:
    """im2col rows ordered (kh, kw, C); each kernel row is one contiguous run."""
    N, Hp, Wp, C = xp.shape
    xp = np.ascontiguousarray(xp)
    Ho, Wo = (Hp - kh) // stride + 1, (Wp - kw) // stride + 1
    sN, sH, sW, sC = xp.strides
    view = as_strided(xp, (N, Ho, Wo, kh, kw * C), (sN, sH * stride, sW * stride, sH, sC),
                      writeable=False)
    return view.reshape(N * Ho * Wo, kh * kw * C), Ho, Wo


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (N, H, W, C) input with (O, C, kh, kw) kernels."""
    x, w = as_tensor(x), as_tensor(w)
    N, H, W, C = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise ValueError(f"conv2d: input has {C} channels, kernel expects {Cw}")
    p, s = padding, stride
    xp = np.pad(x.value, ((0, 0), (p, p), (p, p), (0, 0))) if p else x.value
    cols, Ho, Wo = _patches(xp, kh, kw, s)
    w2 = w.value.transpose(0, 2, 3, 1).reshape(O, -1)
    out = cols @ w2.T
    if b is not None:
        b = as_tensor(b)
        out += b.value
    out = out.reshape(N, Ho, Wo, O)

    def bw(g):
        g2 = g.reshape(-1, O)
        gw = None
        if w.requires_grad:
            gw = (g2.T @ cols).reshape(O, kh, kw, C).transpose(0, 3, 1, 2)
        gb = g2.sum(axis=0) if b is not None and b.requires_grad else None
        gx = None
        if x.requires_grad and s == 1:
            # correlate the fully padded gradient with the flipped kernel
            gp = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
            gcols, _, _ = _patches(gp, kh, kw, 1)
            wf = w.value[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(-1, C)
            gxp = (gcols @ wf).reshape(xp.shape)
            gx = gxp[:, p : p + H, p : p + W] if p else gxp
        elif x.requires_grad:
            gcols = (g2 @ w2).reshape(N, Ho, Wo, kh, kw, C)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + s * Ho : s, j : j + s * Wo : s] += gcols[:, :, :, i, j]
            gx = gxp[:, p : p + H, p : p + W] if p else gxp
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, bw, "conv2d")


def conv_transpose2d(x, w, b=None, stride: int = 2) -> Tensor:
    """Transposed convolution with non-overlapping (C, O, stride, stride) kernels."""
    x, w = as_tensor(x), as_tensor(w)
    N, H, W, C = x.shape
    Cw, O, kh, kw = w.shape
    if C != Cw or kh != stride or kw != stride:
        raise ValueError("conv_transpose2d: kernel must be (C_in, C_out, stride, stride)")
    xf = x.value.reshape(-1, C)
    w2 = w.value.transpose(0, 2, 3, 1).reshape(C, -1)
    out = (xf @ w2).reshape(N, H, W, kh, kw, O)
    out = out.transpose(0, 1, 3, 2, 4, 5).reshape(N, H * kh, W * kw, O)
    if b is not None:
        b = as_tensor(b)
        out = out + b.value
    out = np.ascontiguousarray(out)

    def bw(g):
        gr = g.reshape(N, H, kh, W, kw, O).transpose(0, 1, 3, 2, 4, 5).reshape(N * H * W, -1)
        gx = (gr @ w2.T).reshape(N, H, W, C) if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = (xf.T @ gr).reshape(C, kh, kw, O).transpose(0, 3, 1, 2)
        gb = g.sum(axis=(0, 1, 2)) if b is not None and b.requires_grad else None
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, bw, "conv_transpose2d")


def max_pool2(x) -> Tensor:
    """2x2 max pooling; ties send the gradient to the first element in scan order."""
    x = as_tensor(x)
    N, H, W, C = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"max_pool2 needs even spatial dims, got {(H, W)}")
    corners = [(0, 0), (0, 1), (1, 0), (1, 1)]  # scan order inside each block
    parts = [x.value[:, i::2, j::2] for i, j in corners]
    out = np.maximum(np.maximum(parts[0], parts[1]), np.maximum(parts[2], parts[3]))

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        taken = np.zeros(out.shape, dtype=bool)
        for (i, j), part in zip(corners, parts):
            hit = (part == out) & ~taken
            gx[:, i::2, j::2] = np.where(hit, g, 0)
            taken |= hit
        return (gx,)

    return _node(out, (x,), bw, "max_pool2")


def nearest_upsample2(x) -> Tensor:
    x = as_tensor(x)
    out = x.value.repeat(2, axis=1).repeat(2, axis=2)

    def bw(g):
        N, H, W, C = g.shape
        return (g.reshape(N, H // 2, 2, W // 2, 2, C).sum(axis=(2, 4)),)

    return _node(out, (x,), bw, "nearest_upsample2")


# -- tomographic layers -----------------------------------------------------


def filter_layer(y, w) -> Tensor:
    """Zero-padded rFFT filtering of every detector row with trainable weights.

    ``w`` holds ``pad_len // 2 + 1`` real weights; the padded length is
    implied by it.
    """
    y, w = as_tensor(y), as_tensor(w)
    n_bins = w.shape[-1]
    pad = 2 * (n_bins - 1)
    n_det = y.shape[-1]
    if pad < n_det:
        raise ValueError(f"filter_layer: pad_len {pad} is smaller than {n_det} detectors")
    wv = w.value.astype(y.dtype, copy=False)
    Y = np.fft.rfft(y.value, n=pad, axis=-1)
    out = np.fft.irfft(Y * wv, n=pad, axis=-1)[..., :n_det].astype(y.dtype, copy=False)
    mult = np.full(n_bins, 2.0)
    mult[0] = mult[-1] = 1.0

    def bw(g):
        G = np.fft.rfft(g, n=pad, axis=-1)
        gy = None
        if y.requires_grad:
            gy = np.fft.irfft(G * wv, n=pad, axis=-1)[..., :n_det].astype(g.dtype, copy=False)
        gw = None
        if w.requires_grad:
            prod = (Y * np.conj(G)).real.reshape(-1, n_bins).sum(axis=0)
            gw = (prod * mult / pad).astype(w.dtype, copy=False)
        return gy, gw

    return _node(out, (y, w), bw, "filter_layer")


def backproject_layer(y, g: Geometry) -> Tensor:
    """A^T y; the gradient is the forward projection of the upstream image."""
    y = as_tensor(y)
    out = back_project(y.value, g)
    return _node(out, (y,), lambda gr: (forward_project(gr, g),), "backproject")


def project_layer(x, g: Geometry) -> Tensor:
    x = as_tensor(x)
    out = forward_project(x.value, g)
    return _node(out, (x,), lambda gr: (back_project(gr, g),), "project")


def consensus_layer(y, y_k, C: int) -> Tensor:
    """Overwrite rows i*C with measured data; those rows pass no gradient."""
    y = as_tensor(y)
    out = consensus(y.value, np.asarray(y_k, dtype=y.dtype), C)

    def bw(g):
        g = g.copy()
        g[..., ::C, :] = 0
        return (g,)

    return _node(out, (y,), bw, "consensus")
