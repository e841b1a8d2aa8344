"""Image quality metrics (PSNR with a dynamic-range peak, SSIM) and grouped reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import ValidationError
from .geometry import fov_mask

PSNR_CAP_DB = 200.0
REPORT_HEADER = ["bucket", "metal_px_min", "metal_px_max", "n", "psnr_mean", "ssim_mean"]


def default_peak(ref) -> float:
    ref = np.asarray(ref)
    return float(ref.max() - ref.min())


def psnr(x, ref, peak=None, exclude_mask=None) -> float:
    """``10 log10(peak^2 / MSE)`` over pixels not in ``exclude_mask``.

    ``peak`` defaults to the dynamic range of ``ref``.  Identical inputs give ``inf``.
    """
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValidationError(f"shape mismatch {x.shape} vs {ref.shape}")
    keep = np.ones(x.shape, dtype=bool)
    if exclude_mask is not None:
        keep &= ~(np.asarray(exclude_mask) > 0.5)
    if not keep.any():
        raise ValidationError("empty evaluation region")
    peak = default_peak(ref) if peak is None else float(peak)
    if not peak > 0:
        raise ValidationError("peak must be > 0")
    mse = float(np.mean((x[keep] - ref[keep]) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(x, ref, peak=None, size=11, sigma=1.5):
    """Local SSIM over every fully-contained window position ("valid" region)."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValidationError(f"shape mismatch {x.shape} vs {ref.shape}")
    if min(x.shape) < size:
        raise ValidationError(f"image {x.shape} smaller than the {size}x{size} window")
    peak = default_peak(ref) if peak is None else float(peak)
    if not peak > 0:
        raise ValidationError("peak must be > 0")
    w = _gaussian_window(size, sigma)
    filt = lambda a: convolve2d(a, w, mode="valid")  # noqa: E731 - symmetric window
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    mx, mr = filt(x), filt(ref)
    vx = filt(x * x) - mx * mx
    vr = filt(ref * ref) - mr * mr
    cov = filt(x * ref) - mx * mr
    return ((2 * mx * mr + c1) * (2 * cov + c2)) / ((mx * mx + mr * mr + c1) * (vx + vr + c2))


def ssim(x, ref, peak=None) -> float:
    if np.array_equal(np.asarray(x), np.asarray(ref)) and min(np.shape(x)) >= 11:
        return 1.0
    return float(ssim_map(x, ref, peak).mean())


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    n_pixels: int
    peak: float
    identical: bool = False
    mask: str | None = None

    def psnr_text(self) -> str:
        return "identical" if self.identical else f"{self.psnr:.4f}"


def evaluate(x, ref, peak=None, exclude_mask=None, mask_desc=None) -> MetricReport:
    """PSNR and SSIM together.  SSIM is computed on images with excluded pixels
    set to the reference value, so they contribute perfect local structure."""
    ref = np.asarray(ref, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    peak = default_peak(ref) if peak is None else float(peak)
    p = psnr(x, ref, peak, exclude_mask)
    keep = np.ones(x.shape, dtype=bool)
    if exclude_mask is not None:
        keep = ~(np.asarray(exclude_mask) > 0.5)
    s = ssim(np.where(keep, x, ref), ref, peak)
    identical = math.isinf(p)
    return MetricReport(min(p, PSNR_CAP_DB), s, int(keep.sum()), peak, identical, mask_desc)


def mar_exclusion(metal_mask, spacing=1.0):
    """Pixels left out of MAR evaluation: metal, and everything outside the FOV."""
    metal = np.asarray(metal_mask) > 0.5
    return metal | ~fov_mask(metal.shape[0], spacing)


def _bucketize(sizes, n_buckets):
    """Split the distinct sizes into up to ``n_buckets`` contiguous groups, large first."""
    distinct = sorted(set(sizes), reverse=True)
    groups = np.array_split(np.array(distinct), min(n_buckets, len(distinct)))
    return [(int(g.min()), int(g.max())) for g in groups if g.size]


def grouped_report(results, n_buckets: int = 5, spacing: float = 1.0, peak=None):
    """Mean PSNR/SSIM per metal-size bucket (large to small) plus an overall row.

    ``results`` is a list of ``(MarInstance, reconstructed_image)`` pairs.  Metal
    pixels and pixels outside the FOV are excluded from every metric.
    """
    if not results:
        raise ValidationError("no instances to report")
    rows = []
    per = []
    for inst, img in results:
        rep = evaluate(img, inst.x_gt, peak, mar_exclusion(inst.metal_mask, spacing))
        per.append((inst.metal_pixels, rep))
    for b, (lo, hi) in enumerate(_bucketize([s for s, _ in per], n_buckets)):
        members = [r for s, r in per if lo <= s <= hi]
        rows.append({"bucket": str(b), "metal_px_min": lo, "metal_px_max": hi,
                     "n": len(members),
                     "psnr_mean": float(np.mean([r.psnr for r in members])),
                     "ssim_mean": float(np.mean([r.ssim for r in members]))})
    sizes = [s for s, _ in per]
    rows.append({"bucket": "all", "metal_px_min": min(sizes), "metal_px_max": max(sizes),
                 "n": len(per), "psnr_mean": float(np.mean([r.psnr for _, r in per])),
                 "ssim_mean": float(np.mean([r.ssim for _, r in per]))})
    return rows


def report_csv(rows, path=None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_HEADER, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
