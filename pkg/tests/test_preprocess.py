import numpy as np
import pytest

from complexiris import preprocess as pp
from complexiris.synthdata import render_eye


def _disc(h, w, cx, cy, r, inside=0.1, outside=0.9):
    yy, xx = np.mgrid[0:h, 0:w]
    return np.where(np.hypot(xx - cx, yy - cy) < r, inside, outside)


def test_locate_single_circle():
    c = pp.integro_differential_locate(_disc(120, 120, 61, 57, 30), 10, 50)
    assert abs(c.cx - 61) <= 1 and abs(c.cy - 57) <= 1 and abs(c.r - 30) <= 1
    assert not c.low_confidence


def test_segment_rendered_eye():
    img = render_eye(cx=97.3, cy=103.6, r_pupil=23.4, r_limbus=67.8)
    g = pp.segment(img)
    assert abs(g.pupil.cx - 97.3) <= 1 and abs(g.pupil.cy - 103.6) <= 1
    assert abs(g.pupil.r - 23.4) <= 1 and abs(g.limbus.r - 67.8) <= 1


def test_uniform_image_low_confidence():
    c = pp.integro_differential_locate(np.full((80, 80), 0.5), 10, 30)
    assert c.low_confidence


def test_bad_radius_range():
    with pytest.raises(ValueError):
        pp.integro_differential_locate(np.zeros((50, 50)), 20, 10)
    with pytest.raises(ValueError):
        pp.integro_differential_locate(np.zeros((50, 50)), 5, 40)


def test_geometry_validation():
    with pytest.raises(ValueError):
        pp.IrisGeometry(pp.Circle(0, 0, 30), pp.Circle(0, 0, 20))


def test_bilinear_exact_on_grid_and_linear():
    img = np.add.outer(np.arange(5.0), 2 * np.arange(6.0))
    v, inside = pp.bilinear(img, np.array([2.0, 2.5, -1.0]), np.array([3.0, 1.25, 0.0]))
    assert v[0] == img[3, 2] and v[1] == pytest.approx(1.25 + 5.0)
    assert inside.tolist() == [True, True, False]


def test_radial_texture_rows_constant():
    yy, xx = np.mgrid[0:200, 0:200]
    r = np.hypot(xx - 101, yy - 98)
    geom = pp.IrisGeometry(pp.Circle(101, 98, 20), pp.Circle(101, 98, 50))
    n = pp.rubber_sheet(0.5 + 0.4 * np.sin(r / 3), geom)
    assert n.strip.shape == (64, 256) and n.mask.all()
    assert np.abs(n.strip - n.strip.mean(1, keepdims=True)).max() < 1e-2


def test_rotation_is_column_shift():
    kw = dict(cx=97.3, cy=103.6, r_pupil=23.4, r_limbus=67.8)
    geom = pp.IrisGeometry(pp.Circle(97.3, 103.6, 23.4), pp.Circle(97.3, 103.6, 67.8))
    a = pp.rubber_sheet(render_eye(**kw), geom).strip
    for dth in (0.1, -0.3):
        b = pp.rubber_sheet(render_eye(rotation=dth, **kw), geom).strip
        errs = [np.abs(np.roll(a, s, 1)[4:60] - b[4:60]).mean() for s in range(-64, 65)]
        assert abs((int(np.argmin(errs)) - 64) - round(256 * dth / (2 * np.pi))) <= 1


def test_out_of_image_and_occlusion_masked():
    img = np.full((60, 60), 0.5)
    geom = pp.IrisGeometry(pp.Circle(10, 30, 5), pp.Circle(10, 30, 25))
    n = pp.rubber_sheet(img, geom)
    assert not n.mask.all() and n.mask[0].all()
    assert (n.strip[~n.mask] == 0).all()
    occ = np.zeros((60, 60), bool)
    occ[:, 20:] = True
    n2 = pp.rubber_sheet(img, geom, occ)
    assert n2.mask.sum() < n.mask.sum()
    with pytest.raises(ValueError):
        pp.rubber_sheet(img, geom, np.zeros((3, 3), bool))


def test_uint8_input_scaled():
    assert pp.as_float_image(np.array([[255]], np.uint8))[0, 0] == 1.0
    with pytest.raises(ValueError):
        pp.as_float_image(np.zeros(3))
