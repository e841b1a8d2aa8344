"""Synthetic attenuation phantoms, metal masks and HU conversion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .geometry import DEFAULT_PIXEL_SPACING_MM, pixel_centers

# Linear attenuation of water near 70 keV, in 1/mm.
MU_WATER = 0.0192
METAL_THRESHOLD_HU = 2000.0


@dataclass(frozen=True)
class EllipseSpec:
    center: tuple[float, float]  # (u, v) in mm
    axes: tuple[float, float]  # semi-axes (a, b) in mm
    rotation: float = 0.0  # radians, counter-clockwise
    value: float = 0.0  # additive attenuation, 1/mm

    def __post_init__(self):
        if not (self.axes[0] > 0 and self.axes[1] > 0):
            raise ValidationError(f"ellipse semi-axes must be > 0, got {self.axes}")

    @classmethod
    def from_dict(cls, d: dict) -> "EllipseSpec":
        return cls(tuple(map(float, d["center"])), tuple(map(float, d["axes"])),
                   float(d.get("rotation", 0.0)), float(d.get("value", 0.0)))

    def to_dict(self) -> dict:
        return {"center": list(self.center), "axes": list(self.axes),
                "rotation": self.rotation, "value": self.value}


def _inside(spec: EllipseSpec, u, v):
    c, s = math.cos(spec.rotation), math.sin(spec.rotation)
    du, dv = u - spec.center[0], v - spec.center[1]
    x = c * du + s * dv
    y = -s * du + c * dv
    a, b = spec.axes
    return (x / a) ** 2 + (y / b) ** 2 <= 1.0


def ellipse_phantom(side: int, spacing: float = DEFAULT_PIXEL_SPACING_MM,
                    specs: Iterable[EllipseSpec] = (), dtype=np.float64) -> np.ndarray:
    """Sum of ellipse indicators sampled at pixel centers (no anti-aliasing)."""
    if side < 1 or not spacing > 0:
        raise ValidationError("side and spacing must be positive")
    u, v = pixel_centers(side, spacing)
    out = np.zeros((side, side), dtype=np.float64)
    for spec in specs:
        out[_inside(spec, u, v)] += spec.value
    return out.astype(dtype)


def ellipse_mask(side: int, spacing: float, specs: Iterable[EllipseSpec]) -> np.ndarray:
    """Binary union of ellipse supports, as float64 0/1."""
    u, v = pixel_centers(side, spacing)
    m = np.zeros((side, side), dtype=bool)
    for spec in specs:
        m |= _inside(spec, u, v)
    return m.astype(np.float64)


def disc_mask(side: int, spacing: float, center=(0.0, 0.0), radius: float = 5.0) -> np.ndarray:
    return ellipse_mask(side, spacing, [EllipseSpec(tuple(center), (radius, radius))])


def gaussian_phantom(side: int, spacing: float = DEFAULT_PIXEL_SPACING_MM,
                     blobs: Sequence[tuple] = ()) -> np.ndarray:
    """Sum of isotropic Gaussian blobs ``(u0, v0, sigma_mm, amplitude)``."""
    u, v = pixel_centers(side, spacing)
    out = np.zeros((side, side))
    for u0, v0, sigma, amp in blobs:
        out += amp * np.exp(-((u - u0) ** 2 + (v - v0) ** 2) / (2.0 * sigma ** 2))
    return out


def shepp_logan_specs(side: int, spacing: float = DEFAULT_PIXEL_SPACING_MM,
                      mu_scale: float = MU_WATER) -> list[EllipseSpec]:
    """Modified Shepp-Logan head phantom scaled to fill 90% of the FOV.

    Intensities are multiples of ``mu_scale`` so the outer skull is roughly water.
    """
    table = [
        # value, a, b, u0, v0, phi(deg)
        (1.0, 0.69, 0.92, 0.0, 0.0, 0),
        (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0),
        (-0.2, 0.11, 0.31, 0.22, 0.0, -18),
        (-0.2, 0.16, 0.41, -0.22, 0.0, 18),
        (0.1, 0.21, 0.25, 0.0, 0.35, 0),
        (0.1, 0.046, 0.046, 0.0, 0.1, 0),
        (0.1, 0.046, 0.046, 0.0, -0.1, 0),
        (0.1, 0.046, 0.023, -0.08, -0.605, 0),
        (0.1, 0.023, 0.023, 0.0, -0.606, 0),
        (0.1, 0.023, 0.046, 0.06, -0.605, 0),
    ]
    scale = 0.9 * side / 2.0 * spacing
    return [EllipseSpec((u0 * scale, v0 * scale), (a * scale, b * scale),
                        math.radians(phi), val * mu_scale)
            for val, a, b, u0, v0, phi in table]


def insert_metal(x, mask, mu_metal: float) -> np.ndarray:
    """Replace the attenuation inside ``mask`` by ``mu_metal``."""
    x = np.asarray(x)
    mask = np.asarray(mask)
    if x.shape != mask.shape:
        raise ValidationError(f"image {x.shape} and mask {mask.shape} differ in shape")
    return np.where(mask > 0.5, np.asarray(mu_metal, dtype=x.dtype), x)


def mu_to_hu(mu, mu_water: float = MU_WATER):
    if not mu_water > 0:
        raise ValidationError("mu_water must be > 0")
    return 1000.0 * (np.asarray(mu) - mu_water) / mu_water


def hu_to_mu(hu, mu_water: float = MU_WATER):
    if not mu_water > 0:
        raise ValidationError("mu_water must be > 0")
    return mu_water * (1.0 + np.asarray(hu) / 1000.0)


def segment_metal(x_hu, threshold_hu: float = METAL_THRESHOLD_HU) -> np.ndarray:
    """Binary (0/1 float) mask of pixels at or above ``threshold_hu``."""
    return (np.asarray(x_hu) >= threshold_hu).astype(np.float64)


def phantom_from_config(cfg: dict):
    """Return ``(image, metal_mask)`` from a phantom JSON config.

    ``metal`` is optional: ``{"ellipses": [...]}`` whose union forms the mask.
    """
    from .geometry import image_from_config

    side, spacing = image_from_config(cfg)
    try:
        specs = [EllipseSpec.from_dict(d) for d in cfg.get("ellipses", [])]
        metal_specs = [EllipseSpec.from_dict(d) for d in cfg.get("metal", {}).get("ellipses", [])]
    except (KeyError, TypeError, IndexError) as exc:
        raise ValidationError(f"malformed ellipse entry: {exc}") from exc
    image = ellipse_phantom(side, spacing, specs)
    mask = ellipse_mask(side, spacing, metal_specs)
    return image, mask
