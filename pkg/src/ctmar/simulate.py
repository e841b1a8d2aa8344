"""Metal-corrupted sinogram synthesis.

Polychromatic Beer-Lambert for the metal part, energy-independent tissue,
partial volume by supersampling the metal mask, and Poisson counting noise.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import poisson

from .errors import ValidationError
from .geometry import FanGeometry
from .projector import forward_fan, metal_trace
from .tensor_io import load_tensor, save_tensor

log = logging.getLogger(__name__)

DEFAULT_PHOTON_COUNT = 2e7
SPECTRUM_HEADER = ["energy_keV", "eta", "mu_metal_per_mm"]


@dataclass(frozen=True)
class Spectrum:
    energies: np.ndarray  # keV
    weights: np.ndarray  # eta_k, sums to 1
    mu_metal: np.ndarray  # 1/mm per bin
    reference_bin: int = 0

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.mu_metal, dtype=np.float64)
        if not (e.shape == w.shape == mu.shape) or e.ndim != 1 or e.size == 0:
            raise ValidationError("spectrum columns must be equal-length non-empty vectors")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValidationError(f"spectrum weights must be >= 0 and sum to 1 (sum={w.sum()})")
        if np.any(mu <= 0):
            raise ValidationError("metal attenuation must be > 0 in every bin")
        if not 0 <= self.reference_bin < e.size:
            raise ValidationError("reference bin out of range")
        order = np.argsort(e)
        if np.any(np.diff(mu[order]) > 0):
            warnings.warn("metal attenuation increases with energy; check the spectrum")
        for name, arr in (("energies", e), ("weights", w), ("mu_metal", mu)):
            object.__setattr__(self, name, arr)

    @property
    def mean_mu_metal(self) -> float:
        return float(self.weights @ self.mu_metal)


def default_spectrum() -> Spectrum:
    """Illustrative 10-bin, 120 kVp-like tube spectrum with titanium-like metal.

    Reference bin is 70 keV, near the spectrum's mean energy.
    """
    energies = np.arange(30.0, 121.0, 10.0)
    eta = np.array([0.04, 0.10, 0.15, 0.16, 0.15, 0.13, 0.10, 0.08, 0.06, 0.03])
    mu = np.array([1.5, 1.0, 0.75, 0.6, 0.5, 0.44, 0.39, 0.35, 0.32, 0.3])
    return Spectrum(energies, eta / eta.sum(), mu, reference_bin=4)


def monochromatic_spectrum(mu_metal: float, energy_kev: float = 70.0) -> Spectrum:
    return Spectrum(np.array([energy_kev]), np.array([1.0]), np.array([mu_metal]))


def load_spectrum(path, reference_bin: int | None = None) -> Spectrum:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != SPECTRUM_HEADER:
            raise ValidationError(f"{path}: expected header {','.join(SPECTRUM_HEADER)}")
        try:
            rows = [[float(v) for v in row] for row in reader if row]
        except ValueError as exc:
            raise ValidationError(f"{path}: non-numeric entry ({exc})") from exc
    if not rows or any(len(r) != 3 for r in rows):
        raise ValidationError(f"{path}: need at least one row of three values")
    e, eta, mu = (np.array(col) for col in zip(*rows))
    total = eta.sum()
    if not total > 0:
        raise ValidationError(f"{path}: spectrum weights sum to {total}")
    if abs(total - 1.0) > 1e-6:
        warnings.warn(f"{path}: spectrum weights sum to {total:.6g}; renormalizing")
    eta = eta / total
    if reference_bin is None:
        reference_bin = int(np.argmin(np.abs(e - (eta @ e))))
    return Spectrum(e, eta, mu, reference_bin)


def save_spectrum(s: Spectrum, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SPECTRUM_HEADER)
        for row in zip(s.energies, s.weights, s.mu_metal):
            w.writerow([repr(float(v)) for v in row])


def metal_path_length(mask, g: FanGeometry, spacing=1.0, supersample: int = 4):
    """Fan projection of the metal indicator with partial-volume supersampling.

    Each mask pixel is treated as a solid square: the mask is replicated onto a
    ``k``-times finer grid and projected with a ``k``-times finer ray step.
    """
    if supersample < 1:
        raise ValidationError("supersample factor must be >= 1")
    mask = np.asarray(mask, dtype=np.float64)
    if supersample == 1:
        return forward_fan(mask, g, spacing)
    fine = np.kron(mask, np.ones((supersample, supersample)))
    return forward_fan(fine, g, spacing / supersample)


def polychromatic_log(path_len, s: Spectrum):
    """``-log sum_k eta_k exp(-mu_k * p)`` evaluated stably (log-sum-exp)."""
    p = np.asarray(path_len, dtype=np.float64)[..., None]
    a = -p * s.mu_metal
    amax = a.max(axis=-1, keepdims=True)
    lse = amax[..., 0] + np.log(np.sum(s.weights * np.exp(a - amax), axis=-1))
    return -lse


def polychromatic_project(x_tissue, mask, s: Spectrum, g: FanGeometry, spacing=1.0,
                          supersample: int = 4):
    x_tissue = np.asarray(x_tissue, dtype=np.float64)
    mask = np.asarray(mask)
    if x_tissue.shape != mask.shape:
        raise ValidationError("tissue image and metal mask differ in shape")
    y = forward_fan(x_tissue, g, spacing)
    if not np.any(mask):
        return y
    return y + polychromatic_log(metal_path_length(mask, g, spacing, supersample), s)


@dataclass(frozen=True)
class NoiseSpec:
    photons: float = DEFAULT_PHOTON_COUNT
    seed: int = 0

    def __post_init__(self):
        if not self.photons > 0:
            raise ValidationError("photon count must be > 0")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValidationError("seed must be an unsigned 64-bit integer")


_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, rows, cols):
    """Uniform(0, 1) draws that depend only on ``(seed, row, col)``."""
    rows = np.asarray(rows, dtype=np.uint64)
    cols = np.asarray(cols, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _splitmix64(np.uint64(seed) & _M64)
        h = _splitmix64(h ^ rows)
        h = _splitmix64(h ^ cols)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def add_poisson(y, n: NoiseSpec):
    """Counting noise: ``N ~ Poisson(N0 exp(-y))``, returned as ``-log(max(N, 1) / N0)``.

    Sampling is by inverse CDF of a counter-keyed uniform, so every entry is a pure
    function of ``(seed, row, col)``.
    """
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        warnings.warn(f"clamping {int((y < 0).sum())} negative line integrals to 0")
        y = np.maximum(y, 0.0)
    r, c = np.indices(y.shape)
    u = counter_uniform(n.seed, r, c)
    counts = poisson.ppf(u, n.photons * np.exp(-y))
    return -np.log(np.maximum(counts, 1.0) / n.photons)


_INSTANCE_FILES = {
    "y": "Y.tomo", "y_gt": "Ygt.tomo", "trace": "Mt.tomo", "y_li": "YLI.tomo",
    "x_gt": "Xgt.tomo", "x_li": "XLI.tomo", "x_corrupt": "Xcorrupt.tomo",
    "metal_mask": "metal.tomo",
}


@dataclass
class MarInstance:
    y: np.ndarray
    y_gt: np.ndarray
    trace: np.ndarray
    y_li: np.ndarray
    x_gt: np.ndarray
    x_li: np.ndarray
    x_corrupt: np.ndarray
    metal_mask: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def metal_pixels(self) -> int:
        return int(np.count_nonzero(self.metal_mask))

    def save(self, outdir) -> dict:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, fname in _INSTANCE_FILES.items():
            save_tensor(getattr(self, name), outdir / fname)
            paths[name] = fname
        return paths

    @classmethod
    def load(cls, outdir, meta=None) -> "MarInstance":
        outdir = Path(outdir)
        arrays = {name: load_tensor(outdir / fname) for name, fname in _INSTANCE_FILES.items()}
        return cls(**arrays, meta=dict(meta or {}))


def make_instance(x_gt, mask, s: Spectrum, g: FanGeometry, noise: NoiseSpec | None, plan,
                  supersample: int = 4, dtype=np.float64) -> MarInstance:
    """Assemble a full MAR problem from a clean image and a metal mask.

    ``noise=None`` skips the Poisson stage.  Sinograms are rounded to ``dtype``
    before inpainting and reconstruction, so every stored array equals what the
    downstream stages produce from the stored inputs.
    """
    from .mar import li_inpaint
    from .ril import ril_forward

    dtype = np.dtype(dtype)
    spacing = plan.spacing
    x_gt = np.asarray(x_gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    y_gt = forward_fan(x_gt, g, spacing)
    y = polychromatic_project(x_gt, mask, s, g, spacing, supersample)
    if noise is not None:
        y = add_poisson(y, noise)
    y = y.astype(dtype)
    trace = metal_trace(mask, g, spacing).astype(dtype)
    y_li = li_inpaint(y, trace)
    fbp = plan.with_dtype(dtype)
    meta = {"geometry": g.to_dict(), "side": plan.side, "pixel_spacing_mm": spacing,
            "supersample": supersample,
            "noise": None if noise is None else {"photons": noise.photons, "seed": int(noise.seed)},
            "spectrum": {"energy_keV": s.energies.tolist(), "eta": s.weights.tolist(),
                         "mu_metal_per_mm": s.mu_metal.tolist(),
                         "reference_bin": s.reference_bin}}
    log.debug("instance: %d metal px, %d trace entries", int(mask.sum()), int(trace.sum()))
    return MarInstance(y=y, y_gt=y_gt.astype(dtype), trace=trace, y_li=y_li,
                       x_gt=x_gt.astype(dtype), x_li=ril_forward(y_li, fbp),
                       x_corrupt=ril_forward(y, fbp), metal_mask=mask.astype(dtype), meta=meta)


def instance_manifest_json(inst: MarInstance, paths: dict) -> str:
    return json.dumps({"files": paths, "config": inst.meta}, indent=2, sort_keys=True)
