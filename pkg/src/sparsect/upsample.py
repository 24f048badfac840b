"""Geometry-aware sinogram upsampling with measurement consensus.

A sparse k-view sinogram is reconstructed with Ram-Lak FBP and reprojected
onto a K = C*k view grid; the measured views are then written back verbatim
at rows ``i*C``.
"""

from __future__ import annotations

import numpy as np

from .fbp import SpectralFilter, default_pad_len, fbp_reconstruct, make_filter
from .geometry import Geometry, GeometryError, check_upsampling
from .projector import forward_project


def geometry_aware_interpolate(
    y_k, g_k: Geometry, g_K: Geometry, w: SpectralFilter | None = None
) -> np.ndarray:
    check_upsampling(g_k, g_K)
    if w is None:
        w = make_filter("ramlak", default_pad_len(g_k.n_detectors))
    return forward_project(fbp_reconstruct(y_k, g_k, w), g_K)


def consensus(y_interp, y_k, C: int) -> np.ndarray:
    """Copy of ``y_interp`` whose rows ``i*C`` are replaced by ``y_k`` rows."""
    y_interp = np.asarray(y_interp)
    y_k = np.asarray(y_k)
    if C < 1 or y_interp.shape[-2] != C * y_k.shape[-2]:
        raise GeometryError(
            f"cannot insert {y_k.shape[-2]} measured views into {y_interp.shape[-2]} "
            f"views with stride {C}"
        )
    if y_interp.shape[-1] != y_k.shape[-1]:
        raise GeometryError("detector counts differ")
    out = np.array(y_interp, copy=True)
    out[..., ::C, :] = y_k
    return out


def enhance(y_k, g_k: Geometry, g_K: Geometry) -> np.ndarray:
    C = check_upsampling(g_k, g_K)
    return consensus(geometry_aware_interpolate(y_k, g_k, g_K), y_k, C)
