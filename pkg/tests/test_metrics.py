import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_ssim
from ctmar.errors import ValidationError
from ctmar.metrics import (
    PSNR_CAP_DB, REPORT_HEADER, evaluate, grouped_report, mar_exclusion, psnr, report_csv, ssim,
)
from ctmar.simulate import MarInstance


def test_constant_offset_is_20_db():
    ref = np.random.default_rng(0).random((16, 16))
    assert psnr(ref + 0.1, ref, peak=1.0) == pytest.approx(20.0, abs=1e-12)


def test_identical_inputs():
    ref = np.random.default_rng(1).random((16, 16))
    assert psnr(ref, ref) == math.inf
    rep = evaluate(ref, ref)
    assert rep.identical and rep.psnr == PSNR_CAP_DB and rep.psnr_text() == "identical"
    assert ssim(ref, ref) == 1.0


def test_exclusion_matches_recomputation():
    rng = np.random.default_rng(2)
    ref = rng.random((20, 20))
    x = ref + 0.05 * rng.standard_normal((20, 20))
    m = np.zeros((20, 20), bool)
    m[5:9, 3:12] = True
    keep = ~m
    mse = np.mean((x[keep] - ref[keep]) ** 2)
    peak = ref.max() - ref.min()
    assert psnr(x, ref, exclude_mask=m) == pytest.approx(10 * math.log10(peak ** 2 / mse),
                                                          rel=1e-13)


def test_psnr_errors():
    a = np.ones((4, 4))
    with pytest.raises(ValidationError):
        psnr(a, a, peak=1.0, exclude_mask=np.ones((4, 4)))
    with pytest.raises(ValidationError):
        psnr(a, a[:2], peak=1.0)
    with pytest.raises(ValidationError):
        psnr(a + 1, a, peak=0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(1e-3, 1.0))
def test_psnr_symmetric_in_error(seed, amp):
    rng = np.random.default_rng(seed)
    ref = rng.random((12, 12))
    e = amp * rng.standard_normal((12, 12))
    assert psnr(ref + e, ref, 1.0) == pytest.approx(psnr(ref - e, ref, 1.0), rel=1e-12)


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(3)
    ref = rng.random((32, 32))
    e = rng.standard_normal((32, 32))
    vals = [psnr(ref + a * e, ref, 1.0) for a in (0.01, 0.02, 0.05, 0.1, 0.3)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("seed", range(5))
def test_ssim_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    ref = rng.random((32, 32))
    x = ref + 0.2 * rng.standard_normal((32, 32))
    assert ssim(x, ref, 1.0) == pytest.approx(brute_ssim(x, ref, 1.0), abs=1e-6)


def test_ssim_anticorrelated_negative():
    # zero mean in every window (checkerboard), so only the structure term can flip sign
    ref = np.indices((24, 24)).sum(axis=0) % 2 * 2.0 - 1.0
    assert ssim(-ref, ref, peak=2.0) < 0


def test_ssim_symmetric():
    rng = np.random.default_rng(5)
    a, b = rng.random((2, 20, 20))
    assert ssim(a, b, 1.0) == pytest.approx(ssim(b, a, 1.0), abs=1e-15)
    assert ssim(a, b, 1.0) <= 1.0


def test_ssim_window_too_large():
    with pytest.raises(ValidationError):
        ssim(np.ones((10, 10)), np.ones((10, 10)), 1.0)


def _instance(side, metal_px, rng):
    x_gt = rng.random((side, side))
    mask = np.zeros((side, side))
    mask.flat[:metal_px] = 1.0
    z = np.zeros((3, 3))
    return MarInstance(z, z, z, z, x_gt, x_gt, x_gt, mask)


def test_grouped_report_single_instance():
    rng = np.random.default_rng(6)
    inst = _instance(32, 40, rng)
    img = inst.x_gt + 0.01 * rng.standard_normal((32, 32))
    rows = grouped_report([(inst, img)])
    rep = evaluate(img, inst.x_gt, exclude_mask=mar_exclusion(inst.metal_mask))
    assert len(rows) == 2 and rows[-1]["bucket"] == "all"
    for row in rows:
        assert row["n"] == 1
        assert row["psnr_mean"] == rep.psnr and row["ssim_mean"] == rep.ssim


def test_grouped_report_large_to_small_and_means():
    rng = np.random.default_rng(7)
    items = []
    for px in (32, 2054, 32, 2054):
        inst = _instance(64, px, rng)
        items.append((inst, inst.x_gt + 0.02 * rng.standard_normal((64, 64))))
    rows = grouped_report(items)
    assert [r["metal_px_max"] for r in rows[:-1]] == [2054, 32]
    reps = [evaluate(img, i.x_gt, exclude_mask=mar_exclusion(i.metal_mask)) for i, img in items]
    assert rows[0]["psnr_mean"] == pytest.approx(np.mean([reps[1].psnr, reps[3].psnr]))
    assert rows[1]["ssim_mean"] == pytest.approx(np.mean([reps[0].ssim, reps[2].ssim]))
    assert rows[2]["n"] == 4
    assert rows[2]["psnr_mean"] == pytest.approx(np.mean([r.psnr for r in reps]))


def test_grouped_report_empty():
    with pytest.raises(ValidationError):
        grouped_report([])


def test_report_csv(tmp_path):
    rng = np.random.default_rng(8)
    inst = _instance(32, 10, rng)
    rows = grouped_report([(inst, inst.x_gt * 1.01)])
    p = tmp_path / "r.csv"
    text = report_csv(rows, p)
    assert text.splitlines()[0] == ",".join(REPORT_HEADER)
    assert p.read_text() == text
    assert len(text.splitlines()) == 3
