"""Matched Siddon forward projector and backprojector for parallel beams.

The system matrix is assembled once per geometry (exact ray/pixel
intersection lengths) and cached as CSR; forward projection is ``A @ x``
and backprojection is ``A.T @ y`` with the very same weights. Pixel cells
are half-open in index coordinates, so a ray running exactly along a pixel
edge is credited to the cell on the increasing-index side, and a ray along
the far edge of the grid misses it.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .geometry import Geometry, GeometryError

DENSE_ENTRY_LIMIT = 2**24
_PARALLEL_EPS = 1e-12


def _angle_weights(g: Geometry, theta: float):
    """Siddon weights of all detector rays at one angle.

    Returns (detector index, pixel index, length) triplets.
    """
    rows, cols = g.image_size
    ps = g.pixel_spacing
    xmin, xmax = -cols * ps / 2.0, cols * ps / 2.0
    ymin, ymax = -rows * ps / 2.0, rows * ps / 2.0
    s = g.detector_positions()
    c, sn = np.cos(theta), np.sin(theta)
    px, py = s * c, s * sn  # foot point of each ray
    dx, dy = -sn, c  # unit direction, shared by all rays
    n_det = s.size

    half = 0.5 * np.hypot(xmax - xmin, ymax - ymin) + abs(s).max() + ps
    t_lo = np.full(n_det, -half)
    t_hi = np.full(n_det, half)
    hit = np.ones(n_det, dtype=bool)

    xp = xmin + ps * np.arange(cols + 1)
    yp = ymin + ps * np.arange(rows + 1)

    if abs(dx) < _PARALLEL_EPS:
        hit &= (px >= xmin) & (px < xmax)
        tx = np.empty((n_det, 0))
    else:
        tx = (xp[None, :] - px[:, None]) / dx
        t_lo = np.maximum(t_lo, tx.min(axis=1))
        t_hi = np.minimum(t_hi, tx.max(axis=1))
    if abs(dy) < _PARALLEL_EPS:
        hit &= (py >= ymin) & (py < ymax)
        ty = np.empty((n_det, 0))
    else:
        ty = (yp[None, :] - py[:, None]) / dy
        t_lo = np.maximum(t_lo, ty.min(axis=1))
        t_hi = np.minimum(t_hi, ty.max(axis=1))
    hit &= t_lo < t_hi
    t_hi = np.where(hit, t_hi, t_lo)

    ts = np.concatenate([t_lo[:, None], tx, ty, t_hi[:, None]], axis=1)
    ts = np.clip(ts, t_lo[:, None], t_hi[:, None])
    ts.sort(axis=1)
    lengths = np.diff(ts, axis=1)
    mid = 0.5 * (ts[:, 1:] + ts[:, :-1])
    u = (px[:, None] + mid * dx - xmin) / ps
    v = (ymax - (py[:, None] + mid * dy)) / ps
    col = np.floor(u).astype(np.int64)
    row = np.floor(v).astype(np.int64)
    keep = (lengths > 0) & (col >= 0) & (col < cols) & (row >= 0) & (row < rows)
    det = np.broadcast_to(np.arange(n_det)[:, None], lengths.shape)
    return det[keep], (row * cols + col)[keep], lengths[keep]


@lru_cache(maxsize=32)
def _system(g: Geometry) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    ray_idx, pix_idx, vals = [], [], []
    for i, theta in enumerate(g.angles()):
        det, pix, w = _angle_weights(g, theta)
        ray_idx.append(i * g.n_detectors + det)
        pix_idx.append(pix)
        vals.append(w)
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(ray_idx), np.concatenate(pix_idx))),
        shape=(g.n_rays, g.n_pixels),
    ).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    AT = A.T.tocsr()
    AT.sort_indices()
    return A, AT


@lru_cache(maxsize=64)
def _system_as(g: Geometry, dtype: str):
    A, AT = _system(g)
    if np.dtype(dtype) == np.float64:
        return A, AT
    return A.astype(dtype), AT.astype(dtype)


def system_matrix(g: Geometry, dtype=np.float64) -> sp.csr_matrix:
    """Sparse A with shape (n_angles * n_detectors, rows * cols)."""
    return _system_as(g, np.dtype(dtype).str)[0]


def _matmul(M: sp.csr_matrix, data: np.ndarray, inner: tuple, outer: tuple) -> np.ndarray:
    lead = data.shape[: data.ndim - 2]
    flat = data.reshape(-1, inner[0] * inner[1])
    out = M @ flat.T if flat.shape[0] > 1 else (M @ flat[0])[:, None]
    return np.ascontiguousarray(out.T).reshape(*lead, *outer)


def _work_dtype(a: np.ndarray):
    return np.float32 if a.dtype == np.float32 else np.float64


def forward_project(x, g: Geometry) -> np.ndarray:
    """Line integrals of ``x`` along every ray; accepts leading batch axes."""
    x = np.asarray(x)
    if x.shape[-2:] != g.image_size:
        raise GeometryError(f"image shape {x.shape[-2:]} does not match {g.image_size}")
    dt = _work_dtype(x)
    A, _ = _system_as(g, np.dtype(dt).str)
    return _matmul(A, x.astype(dt, copy=False), g.image_size, g.sinogram_shape)


def back_project(y, g: Geometry) -> np.ndarray:
    """Transpose of :func:`forward_project`; accepts leading batch axes."""
    y = np.asarray(y)
    if y.shape[-2:] != g.sinogram_shape:
        raise GeometryError(f"sinogram shape {y.shape[-2:]} does not match {g.sinogram_shape}")
    dt = _work_dtype(y)
    _, AT = _system_as(g, np.dtype(dt).str)
    return _matmul(AT, y.astype(dt, copy=False), g.sinogram_shape, g.image_size)


def dense_system_matrix(g: Geometry) -> np.ndarray:
    """Materialized A for small geometries (test oracle)."""
    if g.n_rays * g.n_pixels > DENSE_ENTRY_LIMIT:
        raise GeometryError(
            f"dense system matrix would have {g.n_rays * g.n_pixels} entries "
            f"(limit {DENSE_ENTRY_LIMIT})"
        )
    return system_matrix(g).toarray()
