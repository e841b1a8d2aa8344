"""Forward projection (fan and parallel Radon transforms) and exact adjoints.

Every ray is a line ``u cos(theta) + v sin(theta) = t``.  Its integral is taken by
sampling the FOV chord at ``s = k * step`` (``k`` integer, measured from the foot
point of the line), bilinearly interpolating the image and summing ``value * step``.
Rays with ``|t| >= R_fov`` (tangent rays included) are zero.  The adjoint scatters
with the same weights.

Fan rays are mapped onto this parameterization by ``t = D sin(gamma)``,
``theta = beta + gamma`` (see :mod:`ctmar.geometry` for the source convention).
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

from .errors import GeometryError, ValidationError
from .geometry import FanGeometry, ParallelGeometry, fov_radius

# Fixed number of private accumulators in the adjoint scatter.  Independent of the
# thread count so the reduction order, and hence the output bits, never change.
_ADJOINT_CHUNKS = 8
TRACE_EPS = 1e-6
# Rays this close to tangent to the FOV circle have zero chord and are skipped; the
# margin keeps edge detectors with t = +-R (up to rounding) consistently empty.
TANGENT_TOL = 1e-9


@nb.njit(cache=True, parallel=True)
def _project_kernel(img, spacing, radius, step, t_arr, th_arr, out):
    # img is zero-padded by one pixel on every side, so every bilinear
    # neighbour of an in-FOV sample is a valid index and truncation == floor.
    side = img.shape[0] - 2
    half = (side - 1) / 2.0 + 1.0
    inv = 1.0 / spacing
    tangent = radius * (1.0 - TANGENT_TOL)
    n_det, n_views = t_arr.shape
    for j in nb.prange(n_views):
        for i in range(n_det):
            t = t_arr[i, j]
            if abs(t) >= tangent:
                out[i, j] = 0.0
                continue
            c = math.cos(th_arr[i, j])
            s = math.sin(th_arr[i, j])
            kmax = int(math.floor(math.sqrt(radius * radius - t * t) / step))
            fr0 = half - t * s * inv
            fc0 = half + t * c * inv
            dr = -c * step * inv
            dc = -s * step * inv
            acc = 0.0
            for k in range(-kmax, kmax + 1):
                fr = fr0 + k * dr
                fc = fc0 + k * dc
                r0 = int(fr)
                c0 = int(fc)
                wr = fr - r0
                wc = fc - c0
                top = (1.0 - wc) * img[r0, c0] + wc * img[r0, c0 + 1]
                bot = (1.0 - wc) * img[r0 + 1, c0] + wc * img[r0 + 1, c0 + 1]
                acc += (1.0 - wr) * top + wr * bot
            out[i, j] = acc * step


@nb.njit(cache=True, parallel=True)
def _backproject_rays_kernel(sino, spacing, radius, step, t_arr, th_arr, side, n_chunks):
    half = (side - 1) / 2.0 + 1.0
    inv = 1.0 / spacing
    tangent = radius * (1.0 - TANGENT_TOL)
    n_det, n_views = t_arr.shape
    bufs = np.zeros((n_chunks, side + 2, side + 2))
    per = (n_views + n_chunks - 1) // n_chunks
    for ch in nb.prange(n_chunks):
        buf = bufs[ch]
        for j in range(ch * per, min(n_views, (ch + 1) * per)):
            for i in range(n_det):
                t = t_arr[i, j]
                val = sino[i, j]
                if abs(t) >= tangent or val == 0.0:
                    continue
                val *= step
                c = math.cos(th_arr[i, j])
                s = math.sin(th_arr[i, j])
                kmax = int(math.floor(math.sqrt(radius * radius - t * t) / step))
                fr0 = half - t * s * inv
                fc0 = half + t * c * inv
                dr = -c * step * inv
                dc = -s * step * inv
                for k in range(-kmax, kmax + 1):
                    fr = fr0 + k * dr
                    fc = fc0 + k * dc
                    r0 = int(fr)
                    c0 = int(fc)
                    wr = fr - r0
                    wc = fc - c0
                    a = (1.0 - wr) * val
                    b = wr * val
                    buf[r0, c0] += (1.0 - wc) * a
                    buf[r0, c0 + 1] += wc * a
                    buf[r0 + 1, c0] += (1.0 - wc) * b
                    buf[r0 + 1, c0 + 1] += wc * b
    out = np.zeros((side + 2, side + 2))
    for ch in range(n_chunks):
        out += bufs[ch]
    return out[1:side + 1, 1:side + 1].copy()


def parallel_rays(g: ParallelGeometry):
    """Per-entry ``(t, theta)`` arrays of shape ``g.shape``."""
    t, th = np.meshgrid(g.offsets, g.angles, indexing="ij")
    return np.ascontiguousarray(t), np.ascontiguousarray(th)


def fan_rays(g: FanGeometry):
    gam, beta = np.meshgrid(g.gammas, g.betas, indexing="ij")
    return (np.ascontiguousarray(g.source_distance * np.sin(gam)),
            np.ascontiguousarray(beta + gam))


def _out_dtype(a):
    return a.dtype if a.dtype in (np.float32, np.float64) else np.float64


def _check_image(x):
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValidationError(f"expected a square image, got shape {x.shape}")
    return x


def _check_sino(y, shape):
    y = np.asarray(y)
    if y.shape != tuple(shape):
        raise GeometryError(f"sinogram shape {y.shape} does not match geometry {shape}")
    return y


def _default_step(spacing, step):
    return spacing / 2.0 if step is None else float(step)


def project_rays(x, t_arr, th_arr, spacing=1.0, step=None):
    """Line integrals of image ``x`` along arbitrary rays ``(t, theta)``."""
    x = _check_image(x)
    out = np.empty(t_arr.shape)
    padded = np.pad(np.asarray(x, dtype=np.float64), 1)
    _project_kernel(padded, float(spacing),
                    fov_radius(x.shape[0], spacing), _default_step(spacing, step),
                    t_arr, th_arr, out)
    return out.astype(_out_dtype(x))


def backproject_rays(y, t_arr, th_arr, side, spacing=1.0, step=None):
    """Exact transpose of :func:`project_rays`."""
    y = np.asarray(y)
    out = _backproject_rays_kernel(np.ascontiguousarray(y, dtype=np.float64), float(spacing),
                                   fov_radius(side, spacing), _default_step(spacing, step),
                                   t_arr, th_arr, int(side), _ADJOINT_CHUNKS)
    return out.astype(_out_dtype(y))


def forward_parallel(x, g: ParallelGeometry, spacing=1.0, step=None):
    t, th = parallel_rays(g)
    return project_rays(x, t, th, spacing, step)


def adjoint_parallel(y, g: ParallelGeometry, side, spacing=1.0, step=None):
    y = _check_sino(y, g.shape)
    t, th = parallel_rays(g)
    return backproject_rays(y, t, th, side, spacing, step)


def forward_fan(x, g: FanGeometry, spacing=1.0, step=None):
    x = _check_image(x)
    g.check_covers(x.shape[0], spacing)
    t, th = fan_rays(g)
    return project_rays(x, t, th, spacing, step)


def adjoint_fan(y, g: FanGeometry, side, spacing=1.0, step=None):
    y = _check_sino(y, g.shape)
    g.check_covers(side, spacing)
    t, th = fan_rays(g)
    return backproject_rays(y, t, th, side, spacing, step)


def metal_trace(mask, g: FanGeometry, spacing=1.0, eps=TRACE_EPS):
    """Binary sinogram (0/1 float) of fan rays that touch the metal mask."""
    mask = np.asarray(mask, dtype=np.float64)
    return (forward_fan(mask, g, spacing) > eps).astype(np.float64)
