"""Fingertip surface model and pinhole back-projection.

The camera sits at the origin of the sensor frame looking along +z into the
fingertip. The membrane is a hemisphere of radius ``r`` centred at
``(o_x, o_y, o_z)`` (the part with z > o_z) on top of an open cylinder of the
same radius whose axis is parallel to z (the part with z <= o_z).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import BehindCamera, EmptyResult, NoIntersection, OutOfBounds


class Region(enum.Enum):
    HEMISPHERE = "hemisphere"
    CYLINDER = "cylinder"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 500.0
    fy: float = 500.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def in_bounds(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-centre coordinates (u, v) for every pixel, each shaped (height, width)."""
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        return u.astype(float), v.astype(float)


@dataclass(frozen=True)
class SensorGeometry:
    r: float = 8.0
    o_x: float = 0.0
    o_y: float = 0.0
    o_z: float = 10.0

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ValueError("surface radius must be positive")
        if self.o_z < 0:
            raise ValueError("o_z must be non-negative")
        if abs(self.o_x) >= self.r or abs(self.o_y) >= self.r:
            raise ValueError("lateral offsets must be smaller than the radius")

    @property
    def centre(self) -> np.ndarray:
        return np.array([self.o_x, self.o_y, self.o_z])

    @property
    def apex(self) -> np.ndarray:
        """Fingertip top: the highest point of the hemisphere."""
        return np.array([self.o_x, self.o_y, self.o_z + self.r])

    def with_offsets(self, o_x: float | None = None, o_y: float | None = None,
                     o_z: float | None = None) -> SensorGeometry:
        return SensorGeometry(
            r=self.r,
            o_x=self.o_x if o_x is None else o_x,
            o_y=self.o_y if o_y is None else o_y,
            o_z=self.o_z if o_z is None else o_z,
        )

    def surface_residual(self, p: np.ndarray, region: Region) -> float:
        """Signed residual of the surface equation for the branch ``region``."""
        x, y, z = np.asarray(p, dtype=float)
        lateral = (x - self.o_x) ** 2 + (y - self.o_y) ** 2
        if region is Region.HEMISPHERE:
            return lateral + (z - self.o_z) ** 2 - self.r**2
        return lateral - self.r**2

    def support_point(self, direction: Sequence[float]) -> np.ndarray:
        """Surface point furthest along ``direction`` (which must point up, d_z > 0).

        For an upward direction the extreme point is on the hemisphere:
        ``centre + r * d``.
        """
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        if d[2] <= 0:
            raise ValueError("support direction must have a positive z component")
        return self.centre + self.r * d


@dataclass(frozen=True)
class SurfacePoint:
    position: np.ndarray
    region: Region


def pixel_to_ray(u: float, v: float, k: CameraIntrinsics) -> np.ndarray:
    """Unit ray through pixel (u, v): normalised ((u - c_x)/f_x, (v - c_y)/f_y, 1)."""
    if not bool(k.in_bounds(u, v)):
        raise OutOfBounds(f"pixel ({u}, {v}) outside {k.width}x{k.height} image")
    d = np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
    return d / np.linalg.norm(d)


def pixels_to_rays(u: np.ndarray, v: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Vectorised ``pixel_to_ray``; returns (N, 3) unit rays."""
    u = np.asarray(u, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    if not np.all(k.in_bounds(u, v)):
        raise OutOfBounds("one or more pixels fall outside the image")
    d = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=1)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


RIM_TOL = 1e-9  # mm


def intersect_rays(rays: np.ndarray, g: SensorGeometry) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cast rays from the camera origin onto the fingertip surface.

    Returns ``(points (N, 3), on_hemisphere (N,) bool, valid (N,) bool)``.
    Rays must have a positive z component. The hemisphere root is taken when
    it lies strictly above ``o_z``; otherwise the cylinder root is used when
    it lies at or below ``o_z``. Heights within ``RIM_TOL`` of ``o_z`` count
    as the rim and go to the cylinder.
    """
    d = np.atleast_2d(np.asarray(rays, dtype=float))
    if np.any(d[:, 2] <= 0):
        raise ValueError("rays must point into the fingertip (positive z)")
    n = d.shape[0]
    pts = np.full((n, 3), np.nan)
    hemi = np.zeros(n, dtype=bool)
    valid = np.zeros(n, dtype=bool)

    # Sphere: |k d - c|^2 = r^2  ->  a k^2 - 2 b k + cc = 0
    c = g.centre
    a = np.einsum("ij,ij->i", d, d)
    b = d @ c
    cc = float(c @ c) - g.r**2
    disc = b * b - a * cc
    has = disc >= 0
    sq = np.sqrt(np.where(has, disc, 0.0))
    k_roots = np.stack([(b - sq) / a, (b + sq) / a], axis=1)
    for j in range(2):
        kj = k_roots[:, j]
        ok = has & ~valid & (kj > 0) & (kj * d[:, 2] > g.o_z + RIM_TOL)
        pts[ok] = kj[ok, None] * d[ok]
        hemi[ok] = True
        valid[ok] = True

    # Cylinder: |k d_xy - o_xy|^2 = r^2
    rest = ~valid
    if np.any(rest):
        dxy = d[rest, :2]
        oxy = np.array([g.o_x, g.o_y])
        a2 = np.einsum("ij,ij->i", dxy, dxy)
        b2 = dxy @ oxy
        c2 = float(oxy @ oxy) - g.r**2
        disc2 = b2 * b2 - a2 * c2
        with np.errstate(invalid="ignore", divide="ignore"):
            k2 = np.where((a2 > 0) & (disc2 >= 0), (b2 + np.sqrt(np.maximum(disc2, 0.0))) / a2, np.nan)
        z2 = k2 * d[rest, 2]
        ok2 = np.isfinite(k2) & (k2 > 0) & (z2 <= g.o_z + RIM_TOL)
        idx = np.flatnonzero(rest)[ok2]
        pts[idx] = k2[ok2, None] * d[idx]
        valid[idx] = True
    return pts, hemi, valid


def ray_surface_intersect(ray: Sequence[float], g: SensorGeometry) -> SurfacePoint:
    d = np.asarray(ray, dtype=float).reshape(3)
    if d[2] <= 0:
        raise ValueError("ray must have a positive z component")
    pts, hemi, valid = intersect_rays(d[None, :], g)
    if not valid[0]:
        raise NoIntersection(f"ray {d.tolist()} misses the fingertip surface")
    return SurfacePoint(pts[0], Region.HEMISPHERE if hemi[0] else Region.CYLINDER)


def project_point(p: SurfacePoint | Sequence[float], k: CameraIntrinsics) -> tuple[float, float]:
    pos = p.position if isinstance(p, SurfacePoint) else np.asarray(p, dtype=float)
    x, y, z = (float(c) for c in pos)
    if z <= 0:
        raise BehindCamera(f"point {pos.tolist()} is not in front of the camera")
    return k.fx * x / z + k.cx, k.fy * y / z + k.cy


def project_points(points: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(p[:, 2] <= 0):
        raise BehindCamera("one or more points are not in front of the camera")
    return np.stack([k.fx * p[:, 0] / p[:, 2] + k.cx, k.fy * p[:, 1] / p[:, 2] + k.cy], axis=1)


@dataclass(frozen=True)
class BackProjection:
    points: np.ndarray  # (M, 3) in the sensor camera frame
    on_hemisphere: np.ndarray
    pixels: np.ndarray  # (M, 2) pixels that produced the points
    dropped: int


def backproject_contour(contour: Iterable[Sequence[float]], k: CameraIntrinsics,
                        g: SensorGeometry) -> BackProjection:
    """Back-project contour pixels onto the fingertip surface.

    Pixels whose ray misses the surface are dropped and counted.
    """
    px = np.asarray(list(contour) if not isinstance(contour, np.ndarray) else contour, dtype=float)
    if px.size == 0:
        raise ValueError("contour is empty")
    px = px.reshape(-1, 2)
    rays = pixels_to_rays(px[:, 0], px[:, 1], k)
    pts, hemi, valid = intersect_rays(rays, g)
    if not np.any(valid):
        raise EmptyResult("no contour pixel intersects the fingertip surface")
    return BackProjection(pts[valid], hemi[valid], px[valid], int(np.count_nonzero(~valid)))


def surface_points_for_image(k: CameraIntrinsics, g: SensorGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Surface point behind every pixel: ``(points (H, W, 3), valid (H, W))``."""
    u, v = k.pixel_grid()
    d = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    pts, _, valid = intersect_rays(d, g)
    return pts.reshape(k.height, k.width, 3), valid.reshape(k.height, k.width)


def polar_angle(ray: Sequence[float]) -> float:
    d = np.asarray(ray, dtype=float)
    return math.atan2(math.hypot(d[0], d[1]), d[2])
