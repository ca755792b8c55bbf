import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsslab.errors import DegenerateConfiguration, NumericalInstability, ValidationError
from rsslab.geometry import (
    CameraSetup,
    GroundPoint,
    Homography,
    PixelPoint,
    fit_homography,
    ideal_homography,
    marker_grid,
    pixel_pitch,
    pixel_to_world,
    probe_grid,
    reprojection_error,
    world_to_pixel,
)

BASE = CameraSetup()


def test_ideal_corners_and_center():
    h = ideal_homography(BASE)
    assert world_to_pixel(h, GroundPoint(0, 0)) == pytest.approx((0, 0), abs=1e-12)
    assert world_to_pixel(h, GroundPoint(5, 5)) == pytest.approx((1080, 1080), abs=1e-9)
    assert world_to_pixel(h, GroundPoint(2.5, 2.5)) == pytest.approx((540, 540), abs=1e-9)
    assert pixel_to_world(h, PixelPoint(540, 540)) == pytest.approx((2.5, 2.5), abs=1e-12)


def test_ideal_round_trip():
    h = ideal_homography(BASE)
    p = world_to_pixel(h, pixel_to_world(h, PixelPoint(123.4, 567.8)))
    assert isinstance(p, PixelPoint)
    assert p == pytest.approx((123.4, 567.8), abs=1e-9)


def test_identity_homography():
    h = Homography.identity()
    assert pixel_to_world(h, (3.2, 4.4)) == pytest.approx((3.2, 4.4))
    assert world_to_pixel(h, (3.2, 4.4)) == pytest.approx((3.2, 4.4))


@pytest.mark.parametrize("fov,res,expected", [(5.0, 1080, 5 / 1080), (25.0, 1080, 25 / 1080), (5.0, 16, 5 / 16)])
def test_pixel_pitch(fov, res, expected):
    assert pixel_pitch(CameraSetup(fov_ground_m=fov, resolution_px=res)) == pytest.approx(expected, rel=1e-15)


def test_pixel_pitch_rounded_values():
    assert round(pixel_pitch(BASE), 5) == 0.00463
    assert round(pixel_pitch(CameraSetup(fov_ground_m=25.0)), 5) == 0.02315


def test_fit_recovers_ideal_from_corners():
    h = ideal_homography(BASE)
    world = [(0, 0), (5, 0), (5, 5), (0, 5)]
    pix = world_to_pixel(h, world)
    fit = fit_homography(world, pix)
    assert reprojection_error(fit, world, pix).max() < 1e-9
    np.testing.assert_allclose(fit.matrix, h.matrix, atol=1e-9)


def test_fit_overdetermined_exact_same_result():
    h = ideal_homography(BASE)
    world4 = np.array([(0, 0), (5, 0), (5, 5), (0, 5)], float)
    world8 = np.vstack([world4, [(2.5, 0), (5, 2.5), (2.5, 5), (0, 2.5)]])
    f4 = fit_homography(world4, world_to_pixel(h, world4))
    f8 = fit_homography(world8, world_to_pixel(h, world8))
    np.testing.assert_allclose(f4.matrix, f8.matrix, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fit_recovers_random_homography(seed):
    rng = np.random.default_rng(seed)
    m = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
    m[2, :2] *= 0.05
    if abs(np.linalg.det(m)) < 0.1:
        return
    h = Homography(m)
    world = rng.uniform(0, 5, size=(8, 2))
    try:
        pix = world_to_pixel(h, world)
    except NumericalInstability:
        return
    fit = fit_homography(world, pix)
    assert reprojection_error(fit, world, pix).max() < 1e-8 * max(1.0, np.abs(pix).max())


def test_fit_degenerate_collinear():
    world = [(0, 0), (1, 1), (2, 2), (3, 3)]
    with pytest.raises(DegenerateConfiguration):
        fit_homography(world, world)


def test_fit_too_few_points():
    with pytest.raises(DegenerateConfiguration):
        fit_homography([(0, 0), (1, 0), (0, 1)], [(0, 0), (1, 0), (0, 1)])


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1080), st.floats(0, 1080))
def test_round_trip_property(u, v):
    h = Homography(np.array([[200.0, 10.0, 3.0], [-5.0, 190.0, 7.0], [1e-3, 2e-3, 1.0]]))
    back = world_to_pixel(h, pixel_to_world(h, (u, v)))
    assert back == pytest.approx((u, v), rel=1e-9, abs=1e-9)


def test_w_near_zero_raises():
    h = Homography(np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 1.0]]))
    with pytest.raises(NumericalInstability):
        world_to_pixel(h, (-1.0, 0.0))


@pytest.mark.parametrize("m", [np.zeros((3, 3)), np.ones((3, 3)), np.diag([1.0, 0.0, 1.0])])
def test_singular_homography_rejected(m):
    with pytest.raises(DegenerateConfiguration):
        Homography(m)


def test_non_finite_homography_rejected():
    with pytest.raises(ValidationError):
        Homography(np.full((3, 3), np.nan))


def test_homography_normalized_and_readonly():
    h = Homography(2.0 * np.eye(3))
    assert h.matrix[2, 2] == 1.0
    with pytest.raises(ValueError):
        h.matrix[0, 0] = 5.0


@pytest.mark.parametrize("kw", [dict(height_m=0), dict(fov_ground_m=-1), dict(resolution_px=15)])
def test_camera_setup_invariants(kw):
    with pytest.raises(ValidationError):
        CameraSetup(**kw)


def test_camera_setup_marker_rules():
    with pytest.raises(ValidationError):
        CameraSetup(marker_world_positions=((0, 0), (1, 0), (0, 1)))
    with pytest.raises(ValidationError):
        CameraSetup(marker_world_positions=((0, 0), (1, 0), (2, 0), (0, 1)))
    s = CameraSetup(marker_world_positions=((0, 0), (5, 0), (5, 5), (0, 5)))
    assert len(s.markers) == 4


def test_camera_setup_dict_round_trip():
    s = CameraSetup(height_m=15.0, fov_ground_m=25.0)
    assert CameraSetup.from_dict(s.to_dict()) == s
    with pytest.raises(ValidationError):
        CameraSetup.from_dict({**s.to_dict(), "zoom": 2})


def test_default_layout_and_probes():
    assert len(BASE.markers) == 9
    assert marker_grid(5.0)[0] == (0.0, 0.0)
    p = probe_grid(BASE, 9)
    assert p.shape == (81, 2)
    assert p.min() == pytest.approx(0.5 * 1080 / 9)
    assert p.max() == pytest.approx(8.5 * 1080 / 9)


def test_center_error_linear_in_marker_perturbation():
    # induced center error grows linearly with the perturbation size
    rng = np.random.default_rng(4)
    h = ideal_homography(BASE)
    world = np.asarray(BASE.markers)
    pix = world_to_pixel(h, world)
    center = PixelPoint(540.0, 540.0)
    errs = {}
    for s in (0.01, 0.02):
        d = []
        for _ in range(2000):
            fit = fit_homography(world + rng.normal(0, s / np.sqrt(2), world.shape), pix)
            d.append(np.subtract(pixel_to_world(fit, center), (2.5, 2.5)))
        errs[s] = np.sqrt(np.mean(np.sum(np.square(d), axis=1)))
    assert errs[0.02] / errs[0.01] == pytest.approx(2.0, rel=0.05)
