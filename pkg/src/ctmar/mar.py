"""Metal artifact reduction: LI inpainting, dual-domain combine/loss operators,
TV-regularized iterative reconstruction and RIL-driven trace refinement."""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, fields

import numpy as np

from .errors import DivergenceError, UnrecoverableInputError, ValidationError
from .geometry import FanGeometry
from .projector import adjoint_fan, forward_fan
from .ril import RilPlan, rc_loss, ril_backward, ril_forward

log = logging.getLogger(__name__)

STEP_FLOOR = 1e-12


def _same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ValidationError(f"shape mismatch: {sorted(shapes)}")


def li_inpaint(y, trace):
    """Linear interpolation across the metal trace, per view along the detector axis.

    Runs touching the detector edge take the single available neighbour.  Views that
    are entirely inside the trace copy the nearest view that has valid data.
    """
    y = np.asarray(y)
    trace = np.asarray(trace) > 0.5
    _same_shape(y, trace)
    if trace.all():
        raise UnrecoverableInputError("metal trace covers the entire sinogram")
    out = y.copy()
    n_det, n_views = y.shape
    det = np.arange(n_det)
    empty_cols = []
    for j in range(n_views):
        m = trace[:, j]
        if not m.any():
            continue
        if m.all():
            empty_cols.append(j)
            continue
        valid = ~m
        out[m, j] = np.interp(det[m], det[valid], y[valid, j])
    if empty_cols:
        warnings.warn(f"{len(empty_cols)} views lie entirely inside the metal trace; "
                      "copying the nearest valid view")
        ok = np.flatnonzero(~trace.all(axis=0))
        for j in empty_cols:
            # circular view distance; ties go to the lower index
            dist = np.minimum(np.abs(ok - j), n_views - np.abs(ok - j))
            src = ok[np.argmin(dist)]
            out[:, j] = out[:, src]
    return out


def combine_sinogram(g_out, y_li, trace):
    """``M * g_out + (1 - M) * y_li``, as an exact select."""
    _same_shape(g_out, y_li, trace)
    return np.where(np.asarray(trace) > 0.5, g_out, y_li)


def combine_image(x_li, residual):
    _same_shape(x_li, residual)
    return np.asarray(x_li) + np.asarray(residual)


@dataclass(frozen=True)
class LossBreakdown:
    l_gs: float
    l_rc: float
    l_gi: float

    @property
    def total(self) -> float:
        return self.l_gs + self.l_rc + self.l_gi


def dual_domain_loss(y_out, y_gt, x_out, x_gt, plan: RilPlan) -> LossBreakdown:
    _same_shape(y_out, y_gt)
    _same_shape(x_out, x_gt)
    l_gs = float(np.mean(np.abs(np.asarray(y_out, np.float64) - y_gt)))
    l_rc, _ = rc_loss(y_out, x_gt, plan)
    l_gi = float(np.mean(np.abs(np.asarray(x_out, np.float64) - x_gt)))
    return LossBreakdown(l_gs, l_rc, l_gi)


@dataclass(frozen=True)
class SolverConfig:
    step: float | None = None  # None -> 1 / Lipschitz bound of the data term
    max_iters: int = 200
    lam: float | None = None  # None -> auto-balanced against the data term
    tv_eps: float = 1e-4
    tol: float = 1e-6
    l1_eps: float = 1e-6  # relative to the data scale

    def __post_init__(self):
        if self.step is not None and not self.step > 0:
            raise ValidationError("step must be > 0")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if self.lam is not None and self.lam < 0:
            raise ValidationError("lambda must be >= 0")
        if not self.tv_eps > 0:
            raise ValidationError("tv_eps must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = {"step": "step", "max_iters": "max_iters", "lambda": "lam",
                 "tv_eps": "tv_eps", "tol": "tol", "l1_eps": "l1_eps"}
        unknown = set(d) - set(known)
        if unknown:
            raise ValidationError(f"unknown solver config keys: {sorted(unknown)}")
        kw = {known[k]: v for k, v in d.items()}
        if "max_iters" in kw:
            kw["max_iters"] = int(kw["max_iters"])
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "SolverConfig":
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: invalid JSON ({exc})") from exc

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["lambda"] = out.pop("lam")
        return out


def tv_value_grad(x, eps):
    """Smoothed isotropic TV with forward differences (Neumann boundary)."""
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[:, :-1] = x[:, 1:] - x[:, :-1]
    dy[:-1, :] = x[1:, :] - x[:-1, :]
    mag = np.sqrt(dx * dx + dy * dy + eps * eps)
    gx = dx / mag
    gy = dy / mag
    grad = np.zeros_like(x)
    grad[:, :-1] -= gx[:, :-1]
    grad[:, 1:] += gx[:, :-1]
    grad[:-1, :] -= gy[:-1, :]
    grad[1:, :] += gy[:-1, :]
    return float(mag.sum()), grad


class _Log:
    def __init__(self, path):
        self._fh = open(path, "w", newline="") if path else None
        if self._fh:
            self._w = csv.writer(self._fh)
            self._w.writerow(["iter", "objective", "step"])

    def row(self, it, obj, step):
        if self._fh:
            self._w.writerow([it, repr(float(obj)), repr(float(step))])

    def close(self):
        if self._fh:
            self._fh.close()


def _check_finite(value, it):
    if not math.isfinite(value):
        raise DivergenceError(it)


def iterative_mar(y, trace, cfg: SolverConfig, init, fan: FanGeometry, spacing=1.0,
                  log_path=None, history=None):
    """Minimize ``||(1 - M)(P x - y)||^2 + lam * TV_eps(x)`` by gradient descent.

    Backtracking halves the step until the objective decreases (floor 1e-12) and
    doubles it after each accepted step.  Returns the lowest-objective iterate.
    ``history``, if a list, receives the accepted objective values.
    """
    y = np.asarray(y, dtype=np.float64)
    w = 1.0 - (np.asarray(trace) > 0.5)
    _same_shape(y, w)
    x = np.array(init, dtype=np.float64)
    side = x.shape[0]

    px = forward_fan(x, fan, spacing)
    resid = w * (px - y)
    data = float(np.sum(resid * resid))
    tv, tv_g = tv_value_grad(x, cfg.tv_eps)
    lam = cfg.lam
    if lam is None:
        lam = 1e-3 * data / tv if tv > 0 else 0.0
    step = cfg.step
    if step is None:
        # Perron bound: P^T W P is entrywise non-negative, so its largest row sum
        # bounds its spectral norm.
        ones = np.ones_like(x)
        bound = float(adjoint_fan(w * forward_fan(ones, fan, spacing), fan, side, spacing).max())
        step = 1.0 / (2.0 * bound) if bound > 0 else 1.0

    obj = data + lam * tv
    _check_finite(obj, 0)
    logger = _Log(log_path)
    logger.row(0, obj, step)
    if history is not None:
        history.append(obj)
    try:
        for it in range(1, cfg.max_iters + 1):
            grad = 2.0 * adjoint_fan(resid, fan, side, spacing) + lam * tv_g
            if not np.any(grad):
                break
            pg = forward_fan(grad, fan, spacing)
            while True:
                x_new = x - step * grad
                r_new = w * (px - step * pg - y)
                tv_new, tv_g_new = tv_value_grad(x_new, cfg.tv_eps)
                obj_new = float(np.sum(r_new * r_new)) + lam * tv_new
                _check_finite(obj_new, it)
                if obj_new < obj or step <= STEP_FLOOR:
                    break
                step = max(step / 2.0, STEP_FLOOR)
            if not obj_new < obj:
                break
            rel = (obj - obj_new) / obj if obj > 0 else 0.0
            x, px, resid, tv_g, obj = x_new, px - step * pg, r_new, tv_g_new, obj_new
            logger.row(it, obj, step)
            if history is not None:
                history.append(obj)
            step *= 2.0
            if rel < cfg.tol:
                break
    finally:
        logger.close()
    log.debug("iterative_mar: objective %.6g, lambda %.3g", obj, lam)
    return x


def trace_objective(y, x_ref, trace, plan: RilPlan, eps):
    """Smoothed L1 ``mean_FOV sqrt(r^2 + eps^2)`` of ``r = f_R(y) - x_ref`` and its
    gradient w.r.t. ``y``, zeroed outside the trace."""
    r = np.asarray(ril_forward(y, plan), dtype=np.float64) - x_ref
    inside = plan.inside
    n = int(inside.sum())
    mag = np.sqrt(r * r + eps * eps)
    value = float(mag[inside].sum() / n)
    g = np.where(inside, r / mag, 0.0) / n
    m = np.asarray(trace) > 0.5
    return value, np.where(m, np.asarray(ril_backward(g, plan), dtype=np.float64), 0.0)


def trace_refine(y_li, trace, x_ref, cfg: SolverConfig, plan: RilPlan, log_path=None,
                 history=None):
    """Refine sinogram values inside the metal trace so that ``f_R(y)`` matches ``x_ref``.

    Entries outside the trace are held fixed.  Same backtracking rule as
    :func:`iterative_mar`.
    """
    y = np.array(y_li, dtype=np.float64)
    m = np.asarray(trace) > 0.5
    _same_shape(y, m)
    x_ref = np.asarray(x_ref, dtype=np.float64)
    if x_ref.shape != plan.image_shape:
        raise ValidationError(f"reference image {x_ref.shape} != plan {plan.image_shape}")
    inside = plan.inside
    n = int(inside.sum())
    scale = float(np.abs(x_ref[inside]).max()) if n else 0.0
    eps = cfg.l1_eps * (scale if scale > 0 else 1.0)

    fy = np.asarray(ril_forward(y, plan), dtype=np.float64)

    def value_grad(fy):
        r = fy - x_ref
        mag = np.sqrt(r * r + eps * eps)
        g = np.where(inside, r / mag, 0.0) / n
        return float(mag[inside].sum() / n), g

    obj, g_img = value_grad(fy)
    _check_finite(obj, 0)
    step = cfg.step
    logger = _Log(log_path)
    logger.row(0, obj, 0.0 if step is None else step)
    if history is not None:
        history.append(obj)
    try:
        for it in range(1, cfg.max_iters + 1):
            grad = np.where(m, np.asarray(ril_backward(g_img, plan), dtype=np.float64), 0.0)
            gmax = float(np.abs(grad).max())
            if gmax == 0.0:
                break
            if step is None:
                # first trial moves the largest trace entry by 10% of its magnitude
                ref = float(np.abs(y[m]).max()) if m.any() else 1.0
                step = 0.1 * (ref if ref > 0 else 1.0) / gmax
            fg = np.asarray(ril_forward(grad, plan), dtype=np.float64)
            while True:
                fy_new = fy - step * fg
                obj_new, g_new = value_grad(fy_new)
                _check_finite(obj_new, it)
                if obj_new < obj or step <= STEP_FLOOR:
                    break
                step = max(step / 2.0, STEP_FLOOR)
            if not obj_new < obj:
                break
            rel = (obj - obj_new) / obj if obj > 0 else 0.0
            y = y - step * grad
            fy, g_img, obj = fy_new, g_new, obj_new
            logger.row(it, obj, step)
            if history is not None:
                history.append(obj)
            step *= 2.0
            if rel < cfg.tol:
                break
    finally:
        logger.close()
    return y
