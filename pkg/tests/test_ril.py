import math

import numba
import numpy as np
import pytest

from oracles import (
    dense_ramp_matrix, dense_ril_matrix, fbp_test_blobs, reference_fbp, reference_rebin,
)
from ctmar.checks import dot_test_error
from ctmar.errors import GeometryError
from ctmar.geometry import default_geometry, fan_covering, fov_mask, pixel_centers
from ctmar.phantom import EllipseSpec, disc_mask, ellipse_phantom, gaussian_phantom
from ctmar.projector import forward_fan, forward_parallel
from ctmar.ril import (
    backproject, backproject_adjoint, fan_to_parallel, fan_to_parallel_adjoint, make_plan,
    ramlak_filter, rc_loss, ril_backward, ril_forward,
)


@pytest.fixture(scope="module")
def plan64():
    return make_plan(fan_covering(64, 1.0, 81, 60), 64)


def test_plan_tables(plan64):
    n = plan64.par.n_detectors
    assert plan64.fft_len >= 2 * n
    assert plan64.fft_len & (plan64.fft_len - 1) == 0
    sums = np.asarray(plan64.rebin.sum(axis=1)).ravel()
    assert np.all(sums <= 1 + 1e-12)
    assert np.allclose(sums[n // 4: 3 * n // 4], 1.0, atol=1e-12)
    assert plan64.par.n_views == plan64.fan.n_views
    assert math.isclose(plan64.par.offsets[-1], plan64.fan.covered_radius(), rel_tol=1e-12)


def test_rebin_matches_entrywise_reference(plan64):
    y = np.random.default_rng(0).standard_normal(plan64.fan.shape)
    ref = reference_rebin(y, plan64.fan, plan64.par.n_detectors, plan64.par.detector_spacing)
    assert np.allclose(fan_to_parallel(y, plan64), ref, rtol=0, atol=1e-12)


def test_center_row_copies_views(plan64):
    # gamma = 0: t = 0 and theta = beta, so on the view grid the entry is the
    # conjugate average of two measured samples, with no interpolation weight elsewhere
    fan = plan64.fan
    y = np.random.default_rng(1).standard_normal(fan.shape)
    p = fan_to_parallel(y, plan64)
    c = (fan.n_detectors - 1) // 2
    n_views = fan.n_views
    for k in range(0, n_views, 2):
        j = k // 2
        expect = 0.5 * (y[c, j] + y[c, (j + n_views // 2) % n_views])
        assert math.isclose(p[c, k], expect, rel_tol=1e-12, abs_tol=1e-12)
    # for consistent data both samples are the same line, so the value copies through
    x = gaussian_phantom(64, 1.0, [(5.0, -3.0, 6.0, 1.0)])
    yc = forward_fan(x, fan)
    pc = fan_to_parallel(yc, plan64)
    assert np.allclose(pc[c, ::2], yc[c, : n_views // 2], rtol=1e-6, atol=1e-9)


def test_constant_sinogram_rebins_to_constant(plan64):
    p = fan_to_parallel(np.full(plan64.fan.shape, 3.5), plan64)
    assert np.allclose(p, 3.5, rtol=1e-12)


def test_rebinned_fan_matches_parallel_projection():
    fan = fan_covering(128, 1.0, 129, 180)
    plan = make_plan(fan, 128)
    x = gaussian_phantom(128, 1.0, [(0.0, 0.0, 15.0, 1.0)])
    p = fan_to_parallel(forward_fan(x, fan), plan)
    pp = forward_parallel(x, plan.par)
    assert np.linalg.norm(p - pp) <= 0.02 * np.linalg.norm(pp)


def test_ramp_zero_and_dc(plan64):
    assert not ramlak_filter(np.zeros(plan64.par.shape), plan64).any()
    fan, par, side = default_geometry()
    plan = make_plan(fan, side, gain=1.0)
    q = ramlak_filter(np.full(plan.par.shape, 2.0), plan)
    n = q.shape[0]
    assert np.abs(q[n // 4: 3 * n // 4]).max() <= 1e-3 * 2.0


def test_ramp_impulse_matches_direct_dft():
    fan = fan_covering(16, 1.0, 16, 8, 40.0)
    plan = make_plan(fan, 16, gain=1.0)
    n = plan.par.n_detectors
    y = np.zeros(plan.par.shape)
    y[n // 2, :] = 1.0
    q = ramlak_filter(y, plan)
    ref = dense_ramp_matrix(n, plan.fft_len, plan.par.detector_spacing)[:, n // 2]
    assert np.allclose(q, ref[:, None], rtol=0, atol=1e-12)


def test_ramp_self_adjoint(plan64):
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((2,) + plan64.par.shape)
    lhs = np.vdot(ramlak_filter(a, plan64), b)
    rhs = np.vdot(a, ramlak_filter(b, plan64))
    assert abs(lhs - rhs) <= 1e-5 * abs(lhs)


def test_backproject_constant_is_c_pi(plan64):
    c = 0.7
    x = backproject(np.full(plan64.par.shape, c), plan64)
    u, v = pixel_centers(64)
    core = u * u + v * v <= (0.9 * 32) ** 2
    assert np.allclose(x[core], c * math.pi, rtol=1e-3)
    assert np.all(x[~fov_mask(64)] == 0)


def test_backproject_one_hot_is_tent(plan64):
    par = plan64.par
    q = np.zeros(par.shape)
    i0, k0 = 30, 17
    q[i0, k0] = 1.0
    x = backproject(q, plan64)
    u, v = pixel_centers(64)
    th = par.angles[k0]
    f = (u * math.cos(th) + v * math.sin(th)) / par.detector_spacing + (par.n_detectors - 1) / 2
    tent = par.angle_spacing * np.clip(1 - np.abs(f - i0), 0, None)
    assert np.allclose(x, np.where(fov_mask(64), tent, 0.0), atol=1e-14)


def test_zero_in_zero_out(plan64):
    assert not ril_forward(np.zeros(plan64.fan.shape), plan64).any()
    assert not ril_backward(np.zeros((64, 64)), plan64).any()
    assert not backproject(np.zeros(plan64.par.shape), plan64).any()


def test_linearity(plan64):
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((2,) + plan64.fan.shape)
    lhs = ril_forward(-1.5 * a + b, plan64)
    rhs = -1.5 * ril_forward(a, plan64) + ril_forward(b, plan64)
    assert np.allclose(lhs, rhs, atol=1e-12 * np.abs(rhs).max())


def test_stage_adjoints(plan64):
    rng = np.random.default_rng(4)
    yf = rng.standard_normal(plan64.fan.shape)
    yp = rng.standard_normal(plan64.par.shape)
    x = rng.standard_normal((64, 64))
    assert dot_test_error(lambda v: fan_to_parallel(v, plan64),
                          lambda w: fan_to_parallel_adjoint(w, plan64), yf, yp) < 1e-13
    assert dot_test_error(lambda v: backproject(v, plan64),
                          lambda w: backproject_adjoint(w, plan64), yp, x) < 1e-13


def test_dense_ril_oracle_16():
    fan = fan_covering(16, 1.0, 23, 18, 40.0)
    plan = make_plan(fan, 16)
    a = dense_ril_matrix(plan)
    rng = np.random.default_rng(5)
    y = rng.standard_normal(fan.shape)
    g = rng.standard_normal((16, 16))
    ref_f = a @ y.ravel()
    ref_b = a.T @ g.ravel()
    assert np.linalg.norm(ril_forward(y, plan).ravel() - ref_f) <= 1e-5 * np.linalg.norm(ref_f)
    assert np.linalg.norm(ril_backward(g, plan).ravel() - ref_b) <= 1e-6 * np.linalg.norm(ref_b)


def test_same_algorithm_reference_fbp():
    fan = fan_covering(64, 1.0, 81, 60)
    plan = make_plan(fan, 64)
    y = forward_fan(gaussian_phantom(64, 1.0, fbp_test_blobs(64)), fan)
    ref = reference_fbp(y, fan, 64, 1.0)
    assert np.allclose(ril_forward(y, plan), ref, rtol=0, atol=1e-12)


def test_gain_calibrated_on_disc_default_geometry():
    fan, _, side = default_geometry()
    plan = make_plan(fan, side)
    mu, r = 0.02, side / 4.0
    fine = ellipse_phantom(side * 4, 0.25, [EllipseSpec((0.0, 0.0), (r, r), 0.0, mu)])
    x = fine.reshape(side, 4, side, 4).mean(axis=(1, 3))
    rec = ril_forward(forward_fan(x, fan), plan)
    core = disc_mask(side, 1.0, radius=r / 2) > 0
    assert abs(rec[core].mean() - mu) <= 0.02 * mu


def test_round_trip_improves_with_views():
    side = 128
    x = gaussian_phantom(side, 1.0, fbp_test_blobs(side))
    inside = fov_mask(side)
    errs = []
    for n_views in (45, 90, 180, 360):
        fan = fan_covering(side, 1.0, 321, n_views)
        rec = ril_forward(forward_fan(x, fan), make_plan(fan, side))
        errs.append(np.mean((rec[inside] - x[inside]) ** 2))
    assert all(a > b for a, b in zip(errs, errs[1:]))


def test_rc_loss_zero_residual(plan64):
    y = np.random.default_rng(6).standard_normal(plan64.fan.shape)
    x_gt = ril_forward(y, plan64)
    value, grad = rc_loss(y, x_gt, plan64)
    assert value == 0.0
    assert not np.any(grad)


def test_rc_loss_value_and_gradient(plan64):
    rng = np.random.default_rng(7)
    y = rng.standard_normal(plan64.fan.shape)
    x_gt = rng.standard_normal((64, 64))
    value, grad = rc_loss(y, x_gt, plan64)
    inside = fov_mask(64)
    direct = np.abs(ril_forward(y, plan64) - x_gt)[inside].mean()
    assert math.isclose(value, direct, rel_tol=1e-12)
    h = 1e-6
    idx = rng.choice(y.size, 50, replace=False)
    fd = np.empty(50)
    for n, k in enumerate(idx):
        i, j = divmod(int(k), y.shape[1])
        yp, ym = y.copy(), y.copy()
        yp[i, j] += h
        ym[i, j] -= h
        fd[n] = (rc_loss(yp, x_gt, plan64)[0] - rc_loss(ym, x_gt, plan64)[0]) / (2 * h)
    an = grad.ravel()[idx]
    assert np.abs(fd - an).max() <= 1e-4 * np.abs(an).max()


def test_precision_modes(plan64):
    y = np.random.default_rng(8).standard_normal(plan64.fan.shape)
    p32 = plan64.with_dtype(np.float32)
    a = ril_forward(y, p32)
    assert a.dtype == np.float32
    assert ril_backward(np.ones((64, 64)), p32).dtype == np.float32
    assert np.allclose(a, ril_forward(y, plan64), rtol=1e-5, atol=1e-5 * np.abs(a).max())


def test_shape_mismatch(plan64):
    with pytest.raises(GeometryError):
        ril_forward(np.zeros((3, 3)), plan64)
    with pytest.raises(GeometryError):
        ril_backward(np.zeros((3, 3)), plan64)


def test_finite_outputs(plan64):
    y = np.random.default_rng(9).standard_normal(plan64.fan.shape) * 1e6
    assert np.all(np.isfinite(ril_forward(y, plan64)))


def test_backward_bits_independent_of_threads(plan64):
    g = np.random.default_rng(10).standard_normal((64, 64))
    before = numba.get_num_threads()
    try:
        outs = []
        for n in sorted({1, numba.config.NUMBA_NUM_THREADS}):
            numba.set_num_threads(n)
            outs.append((ril_backward(g, plan64).tobytes(),
                         ril_forward(g[:1].repeat(81, 0)[:, :60], plan64).tobytes()))
    finally:
        numba.set_num_threads(before)
    assert all(o == outs[0] for o in outs)
