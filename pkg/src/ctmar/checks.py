"""Self-checks for the linear operators: adjoint dot tests and finite differences.

Used by ``ctmar gradcheck``; the test suite carries its own copies of these checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ParallelGeometry, fan_covering
from .projector import adjoint_fan, adjoint_parallel, forward_fan, forward_parallel
from .ril import make_plan, ril_backward, ril_forward

DOT_TOL = {np.dtype(np.float32): 1e-4, np.dtype(np.float64): 1e-10}
FD_TOL = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel <= self.tol)


def dot_test_error(fwd, adj, x, y) -> float:
    """``|<A x, y> - <x, A^T y>| / (||A x|| ||y||)``, accumulated in float64."""
    ax = np.asarray(fwd(x), dtype=np.float64)
    aty = np.asarray(adj(y), dtype=np.float64)
    y64 = np.asarray(y, dtype=np.float64)
    x64 = np.asarray(x, dtype=np.float64)
    denom = np.linalg.norm(ax) * np.linalg.norm(y64)
    if denom == 0.0:
        return 0.0
    return float(abs(np.vdot(ax, y64) - np.vdot(x64, aty)) / denom)


def max_dot_error(fwd, adj, x_shape, y_shape, n_pairs, rng, dtype) -> float:
    worst = 0.0
    for _ in range(n_pairs):
        x = rng.standard_normal(x_shape).astype(dtype)
        y = rng.standard_normal(y_shape).astype(dtype)
        worst = max(worst, dot_test_error(fwd, adj, x, y))
    return worst


def fd_gradient_error(plan, y, x0, entries, h) -> float:
    """Worst relative gap between central differences of ``0.5 ||f_R(y) - x0||^2`` and
    ``ril_backward`` of the residual, at the given ``(row, col)`` entries.

    The gap is scaled by the largest gradient magnitude among the probed entries, so
    entries whose gradient happens to be near zero do not blow up the ratio.
    """
    def loss(v):
        r = np.asarray(ril_forward(v, plan), dtype=np.float64) - x0
        return 0.5 * float(np.sum(r * r))

    r = np.asarray(ril_forward(y, plan), dtype=np.float64) - x0
    grad = np.asarray(ril_backward(r, plan), dtype=np.float64)
    fd = np.empty(len(entries))
    an = np.empty(len(entries))
    for n, (i, j) in enumerate(entries):
        yp = y.copy()
        ym = y.copy()
        yp[i, j] += h
        ym[i, j] -= h
        fd[n] = (loss(yp) - loss(ym)) / (2.0 * h)
        an[n] = grad[i, j]
    scale = max(float(np.abs(an).max()), np.finfo(np.float64).tiny)
    return float(np.abs(fd - an).max() / scale)


def run_gradcheck(f64: bool = True, side: int = 32, seed: int = 0, n_pairs: int = 20,
                  n_det: int | None = None, n_views: int | None = None, n_fd: int = 20):
    """Dot tests for the fan/parallel projectors and the FBP operator, plus a
    float64 finite-difference check of the FBP gradient."""
    dtype = np.dtype(np.float64 if f64 else np.float32)
    rng = np.random.default_rng(seed)
    n_det = n_det or (side + side // 2 + 1)
    n_views = n_views or side + side // 4
    fan = fan_covering(side, 1.0, n_det, n_views)
    par = ParallelGeometry(n_det, 2.0 * fan.covered_radius() / (n_det - 1), n_views)
    plan = make_plan(fan, side, 1.0, dtype=dtype)
    img, sino = (side, side), fan.shape
    tol = DOT_TOL[dtype]
    out = [
        CheckResult("dot fan projector",
                    max_dot_error(lambda x: forward_fan(x, fan),
                                  lambda y: adjoint_fan(y, fan, side), img, sino, n_pairs,
                                  rng, dtype), tol),
        CheckResult("dot parallel projector",
                    max_dot_error(lambda x: forward_parallel(x, par),
                                  lambda y: adjoint_parallel(y, par, side), img, par.shape,
                                  n_pairs, rng, dtype), tol),
        CheckResult("dot fbp / backward",
                    max_dot_error(lambda y: ril_forward(y, plan),
                                  lambda x: ril_backward(x, plan), sino, img, n_pairs,
                                  rng, dtype), tol),
    ]
    plan64 = plan.with_dtype(np.float64)
    y = rng.standard_normal(sino)
    x0 = rng.standard_normal(img)
    flat = rng.choice(sino[0] * sino[1], size=min(n_fd, sino[0] * sino[1]), replace=False)
    entries = [divmod(int(k), sino[1]) for k in flat]
    out.append(CheckResult("fd fbp gradient (f64)",
                           fd_gradient_error(plan64, y, x0, entries, 1e-3), FD_TOL))
    return out
