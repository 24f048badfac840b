"""Iterative least squares with smoothed total variation, and lambda calibration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import svds

from .geometry import Geometry
from .metrics import psnr
from .projector import back_project, forward_project, system_matrix

log = logging.getLogger(__name__)

TV_EPS = 1e-6
LAMBDA_GRID = tuple(10.0**e for e in range(-3, 2))


class DivergenceError(RuntimeError):
    pass


def _diffs(x):
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[:, :-1] = x[:, 1:] - x[:, :-1]
    dy[:-1, :] = x[1:, :] - x[:-1, :]
    return dx, dy


def tv_smooth(x, eps: float = TV_EPS) -> float:
    """Isotropic total variation with forward differences, smoothed by eps."""
    dx, dy = _diffs(x)
    return float(np.sqrt(dx * dx + dy * dy + eps).sum())


def tv_smooth_grad(x, eps: float = TV_EPS) -> np.ndarray:
    dx, dy = _diffs(x)
    mag = np.sqrt(dx * dx + dy * dy + eps)
    px, py = dx / mag, dy / mag
    # negative divergence, the adjoint of the forward differences
    g = np.zeros_like(x)
    g[:, :-1] -= px[:, :-1]
    g[:, 1:] += px[:, :-1]
    g[:-1, :] -= py[:-1, :]
    g[1:, :] += py[:-1, :]
    return g


def operator_norm_sq(g: Geometry) -> float:
    """Largest eigenvalue of A^T A."""
    A = system_matrix(g)
    s = svds(A, k=1, return_singular_vectors=False, random_state=0)
    return float(s[0] ** 2)


@dataclass
class WlsTvResult:
    image: np.ndarray
    objective: list[float] = field(default_factory=list)
    steps: list[float] = field(default_factory=list)


def wls_tv_reconstruct(
    y,
    g: Geometry,
    lam: float,
    iters: int = 250,
    step: float | None = None,
    backtracking: bool = True,
    eps: float = TV_EPS,
    return_history: bool = False,
):
    """Gradient descent on 0.5 ||Ax - y||^2 + lam * TV(x) from a zero image.

    With ``backtracking`` the step is halved until the Armijo condition
    holds, so the objective never increases; an accepted step is tried
    twice as large on the next iteration. ``step`` defaults to
    1 / ||A||^2.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if step is None:
        step = 1.0 / operator_norm_sq(g)
    if step <= 0:
        raise ValueError("step must be positive")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != g.sinogram_shape:
        raise ValueError(f"sinogram shape {y.shape} does not match geometry {g.sinogram_shape}")

    def objective(x, r):
        return 0.5 * float(r.ravel() @ r.ravel()) + (lam * tv_smooth(x, eps) if lam else 0.0)

    x = np.zeros(g.image_size)
    r = forward_project(x, g) - y
    f = objective(x, r)
    hist = WlsTvResult(x, [f], [])
    rises = 0
    t = step
    for it in range(iters):
        grad = back_project(r, g)
        if lam:
            grad += lam * tv_smooth_grad(x, eps)
        gg = float(grad.ravel() @ grad.ravel())
        if gg == 0.0:
            break
        while True:
            x_new = x - t * grad
            r_new = forward_project(x_new, g) - y
            f_new = objective(x_new, r_new)
            if not backtracking or f_new <= f - 0.5 * t * gg:
                break
            t *= 0.5
            if t < 1e-30:
                log.info("wls_tv: step underflow at iteration %d", it)
                hist.image = x
                return hist if return_history else x
        rises = rises + 1 if f_new > f else 0
        if rises >= 10:
            raise DivergenceError(
                f"WLS+TV objective rose for 10 consecutive iterations (iteration {it}, "
                f"objective {f_new:.6g}); reduce the step size"
            )
        x, r, f = x_new, r_new, f_new
        hist.objective.append(f)
        hist.steps.append(t)
        if backtracking:
            t *= 2.0
        if not np.isfinite(f):
            raise DivergenceError(f"WLS+TV objective became non-finite at iteration {it}")
    hist.image = x
    return hist if return_history else x


def calibrate_lambda(samples, g: Geometry, grid=LAMBDA_GRID, iters: int = 250):
    """Pick the lambda with the best mean PSNR against each sample's label.

    ``samples`` is a sequence of (sinogram, reference image) pairs.
    Returns the best lambda and a list of (lambda, mean psnr) rows.
    """
    if not samples:
        raise ValueError("need at least one calibration sample")
    step = 1.0 / operator_norm_sq(g)
    table = []
    for lam in grid:
        scores = [psnr(wls_tv_reconstruct(y, g, lam, iters, step), ref) for y, ref in samples]
        table.append((float(lam), float(np.mean(scores))))
        log.info("lambda %.3g: mean psnr %.3f", lam, table[-1][1])
    best = max(table, key=lambda row: row[1])[0]
    return best, table
