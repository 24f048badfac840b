"""Shared oracles for the test suite."""

import numpy as np

from sparsect import autodiff as ad


def numeric_grad(loss_fn, tensor, indices, eps=1e-5):
    """Central differences of a scalar loss w.r.t. chosen entries of a tensor."""
    out = []
    flat = tensor.value.reshape(-1)
    for i in indices:
        old = flat[i]
        flat[i] = old + eps
        up = float(loss_fn().value)
        flat[i] = old - eps
        down = float(loss_fn().value)
        flat[i] = old
        out.append((up - down) / (2 * eps))
    return np.array(out)


def analytic_grad(loss_fn, tensors):
    for t in tensors:
        t.grad = None
    ad.backward(loss_fn())
    return [np.zeros_like(t.value) if t.grad is None else t.grad for t in tensors]


def grad_rel_error(loss_fn, tensors, n_samples=None, rng=None, eps=1e-5, joint=False):
    """Largest normwise relative error between backprop and finite differences.

    Each tensor contributes either all entries or ``n_samples`` random ones;
    the error is max|analytic - numeric| / max|numeric| per tensor, or over
    all sampled entries together when ``joint`` is set.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    grads = analytic_grad(loss_fn, tensors)
    worst = 0.0
    pooled = []
    for t, g in zip(tensors, grads):
        size = t.value.size
        if n_samples is None or n_samples >= size:
            idx = np.arange(size)
        else:
            idx = rng.choice(size, n_samples, replace=False)
        num = numeric_grad(loss_fn, t, idx, eps)
        ana = g.reshape(-1)[idx]
        pooled.append((ana, num))
        scale = max(np.abs(num).max(), 1e-12)
        worst = max(worst, float(np.abs(ana - num).max() / scale))
    if joint:
        ana = np.concatenate([a for a, _ in pooled])
        num = np.concatenate([n for _, n in pooled])
        return float(np.abs(ana - num).max() / max(np.abs(num).max(), 1e-12))
    return worst


def disk_image(n, radius_px, supersample=8):
    """Anti-aliased centered disk of value 1 (radius in pixels)."""
    m = n * supersample
    c = (np.arange(m) + 0.5) / supersample - n / 2
    xx, yy = np.meshgrid(c, c)
    inside = (xx**2 + yy**2 <= radius_px**2).astype(float)
    return inside.reshape(n, supersample, n, supersample).mean(axis=(1, 3))
