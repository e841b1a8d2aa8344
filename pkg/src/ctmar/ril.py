"""Differentiable fan-beam filtered back-projection (the Radon inversion layer).

``ril_forward`` maps a fan sinogram to an image in three linear stages:

1. rebinning to parallel beam via ``t = D sin(gamma)``, ``theta = beta + gamma``
   (interpolate along views, then along detectors, then fold conjugate rays
   ``(t, theta)`` / ``(-t, theta + pi)`` into ``theta in [0, pi)`` by averaging);
2. ramp filtering ``Q = iDFT(|w| DFT(Y_para))`` per view with zero padding;
3. linear-interpolation back-projection ``X(u, v) = dtheta * sum_i Q(t_i, theta_i)``.

``ril_backward`` is the exact transpose of that composition, so it returns the
gradient of any image-domain loss with respect to the fan sinogram.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
import scipy.sparse as sp

from .errors import GeometryError, ValidationError
from .geometry import FanGeometry, ParallelGeometry, fov_mask, fov_radius, parallel_from_fan


def _linear_interp_matrix(frac_idx, n_src, periodic=False):
    """Sparse ``(len(frac_idx), n_src)`` matrix of linear interpolation weights.

    Non-periodic indices are clamped to ``[0, n_src - 1]`` (edge samples are held).
    """
    f = np.asarray(frac_idx, dtype=np.float64)
    rows = np.arange(f.size)
    if periodic:
        f = np.mod(f, n_src)
        i0 = np.floor(f).astype(np.int64)
        w = f - i0
        i0 %= n_src
        i1 = (i0 + 1) % n_src
    else:
        f = np.clip(f, 0.0, n_src - 1)
        i0 = np.minimum(np.floor(f).astype(np.int64), max(n_src - 2, 0))
        w = f - i0
        i1 = np.minimum(i0 + 1, n_src - 1)
    data = np.concatenate([1.0 - w, w])
    m = sp.coo_matrix((data, (np.concatenate([rows, rows]), np.concatenate([i0, i1]))),
                      shape=(f.size, n_src))
    return m.tocsr()


def _rebin_matrix(fan: FanGeometry, par: ParallelGeometry):
    """Sparse map from row-major ``vec(Y_fan)`` to row-major ``vec(Y_para)``."""
    H, W = fan.shape
    n, N = par.shape
    gam = fan.gammas
    theta2 = np.arange(2 * N) * par.angle_spacing  # [0, 2pi)

    # theta interpolation along views, per detector row: beta = theta - gamma
    blocks = [_linear_interp_matrix((theta2 - g) / fan.view_spacing, W, periodic=True)
              for g in gam]
    s1 = sp.block_diag(blocks, format="csr")  # (H*2N, H*W)

    # t interpolation along detectors, per theta column (non-uniform -> uniform t)
    gamma_t = np.arcsin(np.clip(par.offsets / fan.source_distance, -1.0, 1.0))
    det_idx = gamma_t / fan.detector_spacing + (H - 1) / 2.0
    a = _linear_interp_matrix(det_idx, H)  # (n, H)
    s2 = sp.kron(a, sp.identity(2 * N), format="csr")  # (n*2N, H*2N)

    # conjugate-ray fold: P[m, k] = (Z[m, k] + Z[n-1-m, k+N]) / 2
    m_idx, k_idx = np.meshgrid(np.arange(n), np.arange(N), indexing="ij")
    rows = (m_idx * N + k_idx).ravel()
    c1 = (m_idx * 2 * N + k_idx).ravel()
    c2 = ((n - 1 - m_idx) * 2 * N + k_idx + N).ravel()
    s3 = sp.coo_matrix((np.full(2 * rows.size, 0.5),
                        (np.concatenate([rows, rows]), np.concatenate([c1, c2]))),
                       shape=(n * N, n * 2 * N)).tocsr()
    rebin = (s3 @ s2 @ s1).tocsr()
    rebin.sum_duplicates()
    rebin.sort_indices()
    return rebin


@nb.njit(cache=True, parallel=True)
def _bp_kernel(q, cos_t, sin_t, dt, spacing, inside, out):
    n_det, n_views = q.shape
    side = out.shape[0]
    half = (side - 1) / 2.0
    det_half = (n_det - 1) / 2.0
    for r in nb.prange(side):
        v = (half - r) * spacing
        for c in range(side):
            if not inside[r, c]:
                out[r, c] = 0.0
                continue
            u = (c - half) * spacing
            acc = 0.0
            for k in range(n_views):
                f = (u * cos_t[k] + v * sin_t[k]) / dt + det_half
                i0 = int(math.floor(f))
                w = f - i0
                if 0 <= i0 < n_det:
                    acc += (1.0 - w) * q[i0, k]
                if 0 <= i0 + 1 < n_det:
                    acc += w * q[i0 + 1, k]
            out[r, c] = acc


@nb.njit(cache=True, parallel=True)
def _bp_adjoint_kernel(x, cos_t, sin_t, dt, spacing, inside, out):
    n_det, n_views = out.shape
    side = x.shape[0]
    half = (side - 1) / 2.0
    det_half = (n_det - 1) / 2.0
    for k in nb.prange(n_views):
        for r in range(side):
            v = (half - r) * spacing
            for c in range(side):
                if not inside[r, c]:
                    continue
                val = x[r, c]
                if val == 0.0:
                    continue
                u = (c - half) * spacing
                f = (u * cos_t[k] + v * sin_t[k]) / dt + det_half
                i0 = int(math.floor(f))
                w = f - i0
                if 0 <= i0 < n_det:
                    out[i0, k] += (1.0 - w) * val
                if 0 <= i0 + 1 < n_det:
                    out[i0 + 1, k] += w * val


def _next_pow2(n):
    return 1 << max(0, int(math.ceil(math.log2(n))))


@dataclass(frozen=True, eq=False)
class RilPlan:
    """Precomputed tables for one fan geometry and image grid.  Immutable."""

    fan: FanGeometry
    side: int
    spacing: float = 1.0
    dtype: np.dtype = np.dtype(np.float64)
    gain: float | None = None  # None -> calibrated on construction
    par: ParallelGeometry = field(init=False)
    fft_len: int = field(init=False)
    rebin: sp.csr_matrix = field(init=False, repr=False)
    inside: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        set_ = object.__setattr__
        self.fan.check_covers(self.side, self.spacing)
        set_(self, "dtype", np.dtype(self.dtype))
        if self.dtype not in (np.float32, np.float64):
            raise ValidationError(f"precision must be float32 or float64, not {self.dtype}")
        par = parallel_from_fan(self.fan)
        set_(self, "par", par)
        set_(self, "fft_len", _next_pow2(2 * par.n_detectors))
        set_(self, "rebin", _rebin_matrix(self.fan, par))
        set_(self, "inside", np.ascontiguousarray(fov_mask(self.side, self.spacing)))
        if self.gain is None:
            set_(self, "gain", 1.0)
            set_(self, "gain", calibrate_gain(self))

    @property
    def fan_shape(self):
        return self.fan.shape

    @property
    def image_shape(self):
        return (self.side, self.side)

    def with_dtype(self, dtype) -> "RilPlan":
        """Same tables and gain, different output precision."""
        clone = object.__new__(RilPlan)
        for name in ("fan", "side", "spacing", "gain", "par", "fft_len", "rebin", "inside"):
            object.__setattr__(clone, name, getattr(self, name))
        object.__setattr__(clone, "dtype", np.dtype(dtype))
        return clone


def make_plan(fan: FanGeometry, side: int, spacing: float = 1.0, dtype=np.float64,
              gain: float | None = None) -> RilPlan:
    return RilPlan(fan, int(side), float(spacing), np.dtype(dtype), gain)


def _check(a, shape, what):
    a = np.asarray(a)
    if a.shape != tuple(shape):
        raise GeometryError(f"{what} has shape {a.shape}, plan expects {tuple(shape)}")
    return np.asarray(a, dtype=np.float64)


def fan_to_parallel(y_fan, plan: RilPlan):
    y = _check(y_fan, plan.fan.shape, "fan sinogram")
    return (plan.rebin @ y.ravel()).reshape(plan.par.shape)


def fan_to_parallel_adjoint(y_para, plan: RilPlan):
    y = _check(y_para, plan.par.shape, "parallel sinogram")
    return (plan.rebin.T @ y.ravel()).reshape(plan.fan.shape)


def ramp_response(plan: RilPlan) -> np.ndarray:
    """``|w|`` on the rfft grid of the padded detector axis (cycles per mm)."""
    return np.abs(np.fft.rfftfreq(plan.fft_len, d=plan.par.detector_spacing))


def ramlak_filter(y_para, plan: RilPlan):
    """Per-view ramp filtering.  Self-adjoint: the padded circulant is real symmetric."""
    y = _check(y_para, plan.par.shape, "parallel sinogram")
    n = y.shape[0]
    spec = np.fft.rfft(y, n=plan.fft_len, axis=0) * ramp_response(plan)[:, None]
    return np.fft.irfft(spec, n=plan.fft_len, axis=0)[:n]


def _trig(plan):
    th = plan.par.angles
    return np.cos(th), np.sin(th)


def backproject(q, plan: RilPlan):
    q = _check(q, plan.par.shape, "filtered sinogram")
    cos_t, sin_t = _trig(plan)
    out = np.empty(plan.image_shape)
    _bp_kernel(np.ascontiguousarray(q), cos_t, sin_t, plan.par.detector_spacing,
               plan.spacing, plan.inside, out)
    return out * plan.par.angle_spacing


def backproject_adjoint(x, plan: RilPlan):
    x = _check(x, plan.image_shape, "image")
    cos_t, sin_t = _trig(plan)
    out = np.zeros(plan.par.shape)
    _bp_adjoint_kernel(np.ascontiguousarray(x), cos_t, sin_t, plan.par.detector_spacing,
                       plan.spacing, plan.inside, out)
    return out * plan.par.angle_spacing


def ril_forward(y_fan, plan: RilPlan):
    """Fan-beam FBP ``X_hat = f_R(Y)``."""
    x = backproject(ramlak_filter(fan_to_parallel(y_fan, plan), plan), plan)
    return (plan.gain * x).astype(plan.dtype)


def ril_backward(grad_x, plan: RilPlan):
    """Vector-Jacobian product of :func:`ril_forward` (its exact transpose)."""
    q = backproject_adjoint(grad_x, plan)
    y = fan_to_parallel_adjoint(ramlak_filter(q, plan), plan)
    return (plan.gain * y).astype(plan.dtype)


def rc_loss(y_out, x_gt, plan: RilPlan):
    """Mean absolute error of ``f_R(y_out)`` against ``x_gt`` over FOV pixels.

    Returns ``(value, grad)`` with ``grad`` the (sub)gradient w.r.t. ``y_out``,
    using ``sign(0) = 0``.
    """
    x_gt = _check(x_gt, plan.image_shape, "reference image")
    resid = np.asarray(ril_forward(y_out, plan), dtype=np.float64) - x_gt
    inside = plan.inside
    n_pix = int(inside.sum())
    value = float(np.abs(resid[inside]).sum() / n_pix)
    g = np.where(inside, np.sign(resid), 0.0) / n_pix
    return value, ril_backward(g, plan)


def disc_fan_sinogram(fan: FanGeometry, radius: float, value: float = 1.0):
    """Closed-form fan sinogram of a centered uniform disc."""
    t = fan.source_distance * np.sin(fan.gammas)
    chord = 2.0 * value * np.sqrt(np.clip(radius ** 2 - t ** 2, 0.0, None))
    return np.repeat(chord[:, None], fan.n_views, axis=1)


def calibrate_gain(plan: RilPlan) -> float:
    """Scalar that makes ``f_R`` of a centered half-FOV disc read its value.

    Uses the closed-form sinogram so the constant is independent of the projector.
    The mean is taken over the inner half of the disc, away from edge ringing.
    """
    r = fov_radius(plan.side, plan.spacing) / 2.0
    y = disc_fan_sinogram(plan.fan, r)
    x = backproject(ramlak_filter(fan_to_parallel(y, plan), plan), plan)
    from .geometry import pixel_centers

    u, v = pixel_centers(plan.side, plan.spacing)
    core = u * u + v * v <= (r / 2.0) ** 2
    if not core.any():
        return 1.0
    return float(1.0 / x[core].mean())
