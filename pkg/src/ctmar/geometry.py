"""Fan-beam (arc detector) and parallel-beam acquisition geometries.

Conventions used throughout the package:

* Image pixel ``(r, c)`` of a ``side x side`` grid has its center at
  ``u = (c - (side-1)/2) * spacing`` and ``v = ((side-1)/2 - r) * spacing``.
  The field of view (FOV) is the inscribed circle of radius ``side/2 * spacing``.
* Sinograms are ``(n_detectors, n_views)`` arrays: rows are detectors, columns views.
* Fan beam: the source for view angle ``beta`` sits at ``(-D sin(beta), D cos(beta))``
  (on the circle of radius ``D``, counter-clockwise from the top).  The ray hitting
  detector angle ``gamma`` is the parallel-beam line with ``t = D sin(gamma)`` and
  ``theta = beta + gamma``.
* Parallel beam: the ray ``(t, theta)`` is the line ``u cos(theta) + v sin(theta) = t``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, ValidationError

SOURCE_CONVENTION = "source_on_circle_ccw_from_top"

# Protocol constants of the simulated DeepLesion setup.
DEFAULT_SOURCE_DISTANCE_MM = 397.0
DEFAULT_N_DETECTORS = 321
DEFAULT_N_VIEWS = 320
DEFAULT_IMAGE_SIDE = 416
DEFAULT_PIXEL_SPACING_MM = 1.0


@dataclass(frozen=True)
class FanGeometry:
    source_distance: float
    n_detectors: int
    detector_spacing: float  # radians along the arc
    n_views: int

    def __post_init__(self):
        if not self.source_distance > 0:
            raise ValidationError("source distance must be > 0")
        if not self.detector_spacing > 0:
            raise ValidationError("detector spacing must be > 0")
        if self.n_detectors < 1 or self.n_views < 1:
            raise ValidationError("need at least one detector and one view")
        if self.gamma_max >= math.pi / 2:
            raise ValidationError("fan half-angle must stay below 90 degrees")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_detectors, self.n_views)

    @property
    def gamma_max(self) -> float:
        return (self.n_detectors - 1) / 2.0 * self.detector_spacing

    @property
    def view_spacing(self) -> float:
        return 2.0 * math.pi / self.n_views

    @property
    def gammas(self) -> np.ndarray:
        return (np.arange(self.n_detectors) - (self.n_detectors - 1) / 2.0) * self.detector_spacing

    @property
    def betas(self) -> np.ndarray:
        return np.arange(self.n_views) * self.view_spacing

    def covered_radius(self) -> float:
        return self.source_distance * math.sin(self.gamma_max)

    def check_covers(self, side: int, spacing: float) -> None:
        r = fov_radius(side, spacing)
        if self.source_distance <= r:
            raise GeometryError(f"source at {self.source_distance} mm lies inside the FOV (r={r})")
        if self.covered_radius() < r * (1 - 1e-9):
            raise GeometryError(
                f"fan covers radius {self.covered_radius():.4f} mm < FOV radius {r:.4f} mm")

    def to_dict(self) -> dict:
        return {
            "source_distance_mm": self.source_distance,
            "n_detectors": self.n_detectors,
            "detector_spacing_rad": self.detector_spacing,
            "n_views": self.n_views,
            "convention": SOURCE_CONVENTION,
        }


@dataclass(frozen=True)
class ParallelGeometry:
    n_detectors: int
    detector_spacing: float  # mm
    n_views: int  # angles j*pi/n_views, j = 0..n_views-1

    def __post_init__(self):
        if not self.detector_spacing > 0:
            raise ValidationError("detector spacing must be > 0")
        if self.n_detectors < 1 or self.n_views < 1:
            raise ValidationError("need at least one detector and one view")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_detectors, self.n_views)

    @property
    def angle_spacing(self) -> float:
        return math.pi / self.n_views

    @property
    def offsets(self) -> np.ndarray:
        return (np.arange(self.n_detectors) - (self.n_detectors - 1) / 2.0) * self.detector_spacing

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.n_views) * self.angle_spacing


def fov_radius(side: int, spacing: float = DEFAULT_PIXEL_SPACING_MM) -> float:
    return side / 2.0 * spacing


def pixel_centers(side: int, spacing: float = DEFAULT_PIXEL_SPACING_MM):
    """Return ``(u, v)`` coordinate arrays of shape ``(side, side)``."""
    half = (side - 1) / 2.0
    idx = np.arange(side)
    u = (idx[None, :] - half) * spacing
    v = (half - idx[:, None]) * spacing
    return np.broadcast_to(u, (side, side)), np.broadcast_to(v, (side, side))


def coords_to_index(u, v, side: int, spacing: float = DEFAULT_PIXEL_SPACING_MM):
    """Continuous (row, col) indices of physical points ``(u, v)``."""
    half = (side - 1) / 2.0
    return half - np.asarray(v) / spacing, np.asarray(u) / spacing + half


def fov_mask(side: int, spacing: float = DEFAULT_PIXEL_SPACING_MM) -> np.ndarray:
    u, v = pixel_centers(side, spacing)
    r = fov_radius(side, spacing)
    return u * u + v * v <= r * r


def fan_covering(side: int, spacing: float = DEFAULT_PIXEL_SPACING_MM,
                 n_detectors: int = DEFAULT_N_DETECTORS, n_views: int = DEFAULT_N_VIEWS,
                 source_distance: float = DEFAULT_SOURCE_DISTANCE_MM) -> FanGeometry:
    """Fan geometry whose outermost rays are tangent to the FOV circle."""
    r = fov_radius(side, spacing)
    if source_distance <= r:
        raise GeometryError(f"source distance {source_distance} must exceed FOV radius {r}")
    if n_detectors < 2:
        raise ValidationError("need at least two detectors to span the fan")
    gamma_max = math.asin(r / source_distance)
    return FanGeometry(source_distance, n_detectors, 2.0 * gamma_max / (n_detectors - 1), n_views)


def parallel_from_fan(fan: FanGeometry) -> ParallelGeometry:
    """Parallel geometry spanned by rebinning ``fan``: same detector count,
    ``t`` in ``[-D sin(gamma_max), D sin(gamma_max)]``, ``n_views`` angles over ``[0, pi)``."""
    t_max = fan.covered_radius()
    if fan.n_detectors < 2:
        raise ValidationError("need at least two detectors")
    return ParallelGeometry(fan.n_detectors, 2.0 * t_max / (fan.n_detectors - 1), fan.n_views)


def default_geometry(spacing: float = DEFAULT_PIXEL_SPACING_MM):
    """The simulation protocol geometry: ``(fan, parallel, image_side)``.

    D = 397 mm, 321 arc detectors, 320 views over [0, 2pi), 416 x 416 images.
    """
    fan = fan_covering(DEFAULT_IMAGE_SIDE, spacing, DEFAULT_N_DETECTORS, DEFAULT_N_VIEWS,
                       DEFAULT_SOURCE_DISTANCE_MM)
    return fan, parallel_from_fan(fan), DEFAULT_IMAGE_SIDE


def fan_from_config(cfg: dict) -> FanGeometry:
    """Build a fan geometry from a JSON config dict.

    ``detector_spacing_rad`` may be omitted, in which case the fan is sized to cover
    the FOV of the ``side``/``pixel_spacing_mm`` image.
    """
    conv = cfg.get("convention", SOURCE_CONVENTION)
    if conv != SOURCE_CONVENTION:
        raise ValidationError(f"unsupported source convention {conv!r}")
    side = int(cfg.get("side", DEFAULT_IMAGE_SIDE))
    spacing = float(cfg.get("pixel_spacing_mm", DEFAULT_PIXEL_SPACING_MM))
    n_det = int(cfg.get("n_detectors", DEFAULT_N_DETECTORS))
    n_views = int(cfg.get("n_views", DEFAULT_N_VIEWS))
    dist = float(cfg.get("source_distance_mm", DEFAULT_SOURCE_DISTANCE_MM))
    if cfg.get("detector_spacing_rad") is None:
        return fan_covering(side, spacing, n_det, n_views, dist)
    return FanGeometry(dist, n_det, float(cfg["detector_spacing_rad"]), n_views)


def image_from_config(cfg: dict) -> tuple[int, float]:
    side = int(cfg.get("side", DEFAULT_IMAGE_SIDE))
    spacing = float(cfg.get("pixel_spacing_mm", DEFAULT_PIXEL_SPACING_MM))
    if side < 1 or not spacing > 0:
        raise ValidationError("side and pixel_spacing_mm must be positive")
    return side, spacing


def load_config(path) -> dict:
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    return cfg


def geometry_config(fan: FanGeometry, side: int, spacing: float) -> dict:
    out = fan.to_dict()
    out.update(side=side, pixel_spacing_mm=spacing)
    return out
