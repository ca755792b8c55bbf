"""Planar overhead-camera model and homography estimation.

The camera looks straight down on a square patch of floor. World points are
floor-plane coordinates in meters, pixel points are image coordinates with the
origin at the top-left corner. A 3x3 homography ``H`` maps homogeneous world
coordinates to homogeneous pixel coordinates::

    [u, v, 1]^T  ~  H @ [x, y, 1]^T
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateConfiguration, NumericalInstability, ValidationError

# Smallest admissible ratio between the second-smallest and largest singular
# value of the DLT design matrix.
DEGENERACY_TOL = 1e-10
# |det| floor for a Frobenius-normalized homography.
DET_FLOOR = 1e-12
# Floor on |w| (relative to the row norms of H) when dehomogenizing.
W_EPS = 1e-12


class PixelPoint(NamedTuple):
    u: float
    v: float


class GroundPoint(NamedTuple):
    x: float
    y: float


def marker_grid(fov_ground_m: float, per_side: int = 3) -> list[tuple[float, float]]:
    """Markers on a regular ``per_side x per_side`` lattice spanning the footprint."""
    ticks = np.linspace(0.0, fov_ground_m, per_side)
    return [(float(x), float(y)) for y in ticks for x in ticks]


def _has_general_quad(points: np.ndarray, tol: float = 1e-9) -> bool:
    """True if some four points have no three collinear."""
    scale = max(float(np.ptp(points, axis=0).max()), 1e-300)
    p = points / scale
    n = len(p)

    def collinear(i, j, k):
        a, b, c = p[i], p[j], p[k]
        return abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])) < tol

    for quad in itertools.combinations(range(n), 4):
        if not any(collinear(*tri) for tri in itertools.combinations(quad, 3)):
            return True
    return False


@dataclass(frozen=True)
class CameraSetup:
    """Axis-aligned overhead camera imaging a square floor footprint.

    ``marker_world_positions`` defaults to a 3x3 lattice covering the
    footprint (corners, edge midpoints and center).
    """

    height_m: float = 3.0
    fov_ground_m: float = 5.0
    resolution_px: int = 1080
    marker_world_positions: tuple[tuple[float, float], ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.marker_world_positions is None:
            object.__setattr__(self, "marker_world_positions", tuple(marker_grid(self.fov_ground_m)))
        else:
            object.__setattr__(
                self,
                "marker_world_positions",
                tuple((float(x), float(y)) for x, y in self.marker_world_positions),
            )
        self.validate()

    def validate(self) -> None:
        if not (np.isfinite(self.height_m) and self.height_m > 0):
            raise ValidationError(f"height_m must be > 0, got {self.height_m}")
        if not (np.isfinite(self.fov_ground_m) and self.fov_ground_m > 0):
            raise ValidationError(f"fov_ground_m must be > 0, got {self.fov_ground_m}")
        if int(self.resolution_px) != self.resolution_px or self.resolution_px < 16:
            raise ValidationError(f"resolution_px must be an integer >= 16, got {self.resolution_px}")
        pts = np.asarray(self.marker_world_positions, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
            raise ValidationError("need at least 4 marker positions")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("marker positions must be finite")
        if len(pts) == 4:
            if not _has_general_quad(pts):
                raise ValidationError("marker layout has three collinear points")
        elif not _has_general_quad(pts):
            raise ValidationError("marker layout contains no four points in general position")

    @property
    def markers(self) -> np.ndarray:
        return np.asarray(self.marker_world_positions, dtype=float)

    def to_dict(self) -> dict:
        return {
            "height_m": self.height_m,
            "fov_ground_m": self.fov_ground_m,
            "resolution_px": int(self.resolution_px),
            "marker_world_positions": [list(p) for p in self.marker_world_positions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraSetup":
        known = {"height_m", "fov_ground_m", "resolution_px", "marker_world_positions"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown camera keys: {sorted(unknown)}")
        kw = dict(d)
        if kw.get("marker_world_positions") is not None:
            kw["marker_world_positions"] = tuple(tuple(p) for p in kw["marker_world_positions"])
        return cls(**kw)


@dataclass(frozen=True)
class Homography:
    """World-to-pixel homography, stored with ``matrix[2, 2] == 1`` when possible."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ValidationError("homography must be a finite 3x3 matrix")
        scale = np.linalg.norm(m)
        if scale == 0.0:
            raise DegenerateConfiguration("homography is singular")
        if abs(m[2, 2]) > 1e-14 * scale:
            m = m / m[2, 2]
        if abs(np.linalg.det(m / np.linalg.norm(m))) < DET_FLOOR:
            raise DegenerateConfiguration("homography is singular")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))


def pixel_pitch(setup: CameraSetup) -> float:
    """Ground distance subtended by one pixel, in meters."""
    return setup.fov_ground_m / setup.resolution_px


def ideal_homography(setup: CameraSetup) -> Homography:
    s = setup.resolution_px / setup.fov_ground_m
    return Homography(np.diag([s, s, 1.0]))


def _transform(m: np.ndarray, pts: np.ndarray, eps: float) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    flat = pts.reshape(-1, 2)
    w = flat @ m[2, :2] + m[2, 2]
    scale = np.abs(flat) @ np.abs(m[2, :2]) + abs(m[2, 2])
    if np.any(np.abs(w) <= eps * np.maximum(scale, 1e-300)):
        raise NumericalInstability("point maps to (or near) the line at infinity")
    num = flat @ m[:2, :2].T + m[:2, 2]
    return (num / w[:, None]).reshape(pts.shape)


def world_to_pixel(h: Homography, g, eps: float = W_EPS):
    """Project floor point(s) into the image. Single points come back as ``PixelPoint``."""
    out = _transform(h.matrix, g, eps)
    return PixelPoint(*map(float, out)) if out.ndim == 1 else out


def pixel_to_world(h: Homography, p, eps: float = W_EPS):
    """Back-project pixel(s) onto the floor. Single points come back as ``GroundPoint``."""
    out = _transform(h.inverse, p, eps)
    return GroundPoint(*map(float, out)) if out.ndim == 1 else out


def isotropic_normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity that moves the centroid to 0 and the mean distance to sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.mean(np.linalg.norm(pts - c, axis=1))
    if d < 1e-300:
        raise DegenerateConfiguration("points are coincident")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _dlt_rows(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    n = len(src)
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    one, zero = np.ones(n), np.zeros(n)
    a = np.empty((2 * n, 9))
    a[0::2] = np.stack([x, y, one, zero, zero, zero, -u * x, -u * y, -u], axis=1)
    a[1::2] = np.stack([zero, zero, zero, x, y, one, -v * x, -v * y, -v], axis=1)
    return a


def fit_homography(world_pts: Sequence, pixel_pts: Sequence) -> Homography:
    """Least-squares world-to-pixel homography by normalized DLT.

    Raises:
        DegenerateConfiguration: fewer than 4 correspondences, or the design
            matrix has a null space of dimension > 1.
    """
    src = np.asarray(world_pts, dtype=float).reshape(-1, 2)
    dst = np.asarray(pixel_pts, dtype=float).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValidationError("world and pixel point counts differ")
    if len(src) < 4:
        raise DegenerateConfiguration(f"need >= 4 correspondences, got {len(src)}")
    t_src = isotropic_normalization(src)
    t_dst = isotropic_normalization(dst)
    src_n = src @ t_src[:2, :2].T + t_src[:2, 2]
    dst_n = dst @ t_dst[:2, :2].T + t_dst[:2, 2]
    a = _dlt_rows(src_n, dst_n)
    _, s, vt = np.linalg.svd(a)
    if s[-2] < DEGENERACY_TOL * s[0]:
        raise DegenerateConfiguration("correspondences are rank-deficient")
    hn = vt[-1].reshape(3, 3)
    return Homography(np.linalg.solve(t_dst, hn @ t_src))


def reprojection_error(h: Homography, world_pts, pixel_pts) -> np.ndarray:
    """Per-point pixel distance between projected world points and observations."""
    proj = world_to_pixel(h, np.asarray(world_pts, dtype=float).reshape(-1, 2))
    return np.linalg.norm(proj - np.asarray(pixel_pts, dtype=float).reshape(-1, 2), axis=1)


def probe_grid(setup: CameraSetup, per_side: int = 9) -> np.ndarray:
    """Pixel coordinates of cell centers of a ``per_side x per_side`` image grid."""
    ticks = (np.arange(per_side) + 0.5) * setup.resolution_px / per_side
    uu, vv = np.meshgrid(ticks, ticks)
    return np.stack([uu.ravel(), vv.ravel()], axis=1)
