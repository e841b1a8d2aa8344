import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctmar.errors import GeometryError, ValidationError
from ctmar.geometry import (
    FanGeometry, ParallelGeometry, coords_to_index, default_geometry, fan_covering,
    fan_from_config, fov_mask, fov_radius, image_from_config, load_config, pixel_centers,
)
from ctmar.phantom import (
    MU_WATER, EllipseSpec, disc_mask, ellipse_phantom, hu_to_mu, insert_metal, mu_to_hu,
    phantom_from_config, segment_metal, shepp_logan_specs,
)


def test_default_geometry_constants():
    fan, par, side = default_geometry()
    assert fan.source_distance == 397.0
    assert fan.shape == (321, 320)
    assert side == 416
    assert par.shape == (321, 320)
    assert fan.betas[0] == 0.0
    assert np.isclose(fan.betas[-1] + fan.view_spacing, 2 * math.pi)


def test_default_fan_exactly_covers_fov():
    fan, par, side = default_geometry()
    assert math.isclose(fan.covered_radius(), fov_radius(side), rel_tol=1e-12)
    assert math.isclose(fan.gamma_max, math.asin(208 / 397), rel_tol=1e-12)
    assert math.isclose(par.offsets[-1], fan.covered_radius(), rel_tol=1e-12)
    assert math.isclose(par.offsets[0], -fan.covered_radius(), rel_tol=1e-12)
    assert math.isclose(par.angle_spacing, math.pi / 320)


def test_gamma_index_map():
    fan = FanGeometry(100.0, 5, 0.01, 4)
    assert np.allclose(fan.gammas, [-0.02, -0.01, 0.0, 0.01, 0.02])


def test_geometry_validation():
    with pytest.raises(ValidationError):
        FanGeometry(0.0, 5, 0.01, 4)
    with pytest.raises(ValidationError):
        FanGeometry(10.0, 5, -0.01, 4)
    with pytest.raises(ValidationError):
        ParallelGeometry(5, 1.0, 0)


def test_fan_too_narrow_is_rejected():
    fan = FanGeometry(397.0, 11, 0.001, 8)
    with pytest.raises(GeometryError):
        fan.check_covers(64, 1.0)


def test_pixel_coordinate_convention():
    u, v = pixel_centers(4, 2.0)
    assert u[0, 0] == -3.0 and v[0, 0] == 3.0
    assert u[3, 3] == 3.0 and v[3, 3] == -3.0


@pytest.mark.parametrize("side,spacing", [(1, 1.0), (7, 0.5), (16, 1.0), (33, 2.5)])
def test_index_coordinate_bijection(side, spacing):
    u, v = pixel_centers(side, spacing)
    r, c = coords_to_index(u, v, side, spacing)
    rr, cc = np.indices((side, side))
    assert np.allclose(r, rr, atol=1e-12) and np.allclose(c, cc, atol=1e-12)


def test_fov_mask_is_inscribed_disc():
    m = fov_mask(8)
    assert m[3, 3] and m[4, 4]
    assert not m[0, 0]
    assert m.sum() == np.sum([(c - 3.5) ** 2 + (r - 3.5) ** 2 <= 16
                              for r in range(8) for c in range(8)])


def test_config_roundtrip(tmp_path):
    cfg = {"side": 64, "pixel_spacing_mm": 0.5, "n_detectors": 65, "n_views": 40,
           "source_distance_mm": 300.0}
    fan = fan_from_config(cfg)
    assert fan.shape == (65, 40)
    assert math.isclose(fan.covered_radius(), 16.0)
    assert image_from_config(cfg) == (64, 0.5)
    again = fan_from_config(dict(cfg, detector_spacing_rad=fan.detector_spacing))
    assert again == fan


def test_config_rejects_bad_json(tmp_path):
    p = tmp_path / "g.json"
    p.write_text("{not json")
    with pytest.raises(ValidationError):
        load_config(p)
    p.write_text(json.dumps([1, 2]))
    with pytest.raises(ValidationError):
        load_config(p)


def test_empty_phantom_is_zero():
    assert not ellipse_phantom(16, 1.0, []).any()


def test_centered_disc_value_at_origin():
    x = ellipse_phantom(9, 1.0, [EllipseSpec((0.0, 0.0), (3.0, 3.0), 0.0, 0.02)])
    assert x[4, 4] == 0.02
    assert x[0, 0] == 0.0


def test_overlapping_discs_add():
    a = EllipseSpec((-1.0, 0.0), (3.0, 3.0), 0.0, 1.0)
    b = EllipseSpec((1.0, 0.0), (3.0, 3.0), 0.0, 2.0)
    x = ellipse_phantom(11, 1.0, [a, b])
    assert x[5, 5] == 3.0
    assert x[5, 1] == 1.0
    assert x[5, 9] == 2.0


def test_rotated_ellipse_membership():
    e = EllipseSpec((0.0, 0.0), (4.0, 1.0), math.pi / 2, 1.0)
    x = ellipse_phantom(11, 1.0, [e])
    # long axis now vertical
    assert x[1, 5] == 1.0 and x[5, 1] == 0.0


def test_ellipse_axes_must_be_positive():
    with pytest.raises(ValidationError):
        EllipseSpec((0, 0), (0.0, 1.0))


def test_shepp_logan_inside_fov():
    x = ellipse_phantom(64, 1.0, shepp_logan_specs(64, 1.0))
    assert np.all(x[~fov_mask(64)] == 0)
    assert x.max() > 0


def test_insert_metal():
    x = np.random.default_rng(0).random((10, 10))
    empty = np.zeros((10, 10))
    assert np.array_equal(insert_metal(x, empty, 0.5), x)
    assert np.all(insert_metal(x, np.ones((10, 10)), 0.5) == 0.5)
    m = disc_mask(10, 1.0, radius=3)
    y = insert_metal(np.zeros((10, 10)), m, 0.5)
    assert np.array_equal(y, 0.5 * m)
    assert np.array_equal(insert_metal(y, m, 0.5), y)
    with pytest.raises(ValidationError):
        insert_metal(x, np.zeros((3, 3)), 1.0)


def test_hu_conversions():
    assert mu_to_hu(MU_WATER) == 0.0
    assert mu_to_hu(0.0) == -1000.0
    with pytest.raises(ValidationError):
        mu_to_hu(1.0, mu_water=0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1000.0, 30000.0))
def test_hu_roundtrip(hu):
    assert math.isclose(float(mu_to_hu(hu_to_mu(hu))), hu, rel_tol=1e-12, abs_tol=1e-9)


def test_segment_metal():
    water = np.zeros((8, 8))
    assert not segment_metal(water).any()
    m = disc_mask(8, 1.0, radius=2)
    assert np.array_equal(segment_metal(np.where(m > 0, 3000.0, 0.0)), m)
    assert segment_metal(np.where(m > 0, -1000.0, 0.0), threshold_hu=-2000).all()


def test_phantom_from_config():
    cfg = {"side": 32, "ellipses": [{"center": [0, 0], "axes": [10, 10], "value": 0.02}],
           "metal": {"ellipses": [{"center": [3, 0], "axes": [2, 2]}]}}
    x, m = phantom_from_config(cfg)
    assert x.shape == m.shape == (32, 32)
    assert set(np.unique(m)) == {0.0, 1.0}
    x0, m0 = phantom_from_config({"side": 16})
    assert not x0.any() and not m0.any()
    with pytest.raises(ValidationError):
        phantom_from_config({"side": 16, "ellipses": [{"axes": [1, 1]}]})


def test_fan_covering_rule():
    fan = fan_covering(100, 0.8, 51, 30, 250.0)
    assert math.isclose(fan.covered_radius(), 40.0, rel_tol=1e-12)
    fan.check_covers(100, 0.8)
