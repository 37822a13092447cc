"""RANSAC plane estimation for contact point clouds, plus simulated baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateCloud
from .geometry import as_unit, axis_angle_matrix, perpendicular_unit

DEFAULT_ITERS = 200
DEFAULT_TOL = 0.15  # mm

VISION_NOISE_DEG = 7.82
FORCE_NOISE_DEG = 11.14


@dataclass(frozen=True, eq=False)
class ContactPointCloud:
    points: np.ndarray  # (N, 3) mm
    frame: str = "sensor"

    def __post_init__(self) -> None:
        p = np.atleast_2d(np.asarray(self.points, dtype=float))
        if p.shape[-1] != 3:
            raise ValueError("points must be (N, 3)")
        if not self.frame:
            raise ValueError("frame tag must be explicit")
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True, eq=False)
class PlaneEstimate:
    """Plane ``normal . p = offset`` with fit statistics.

    ``source`` labels how the estimate was produced: ``"ransac"`` for the
    tactile pipeline, ``"vision(folded-normal model)"`` and
    ``"force(folded-normal model)"`` for the simulated baselines.
    """

    normal: np.ndarray
    offset: float
    inlier_count: int
    rms_residual: float
    source: str = "ransac"

    def __post_init__(self) -> None:
        object.__setattr__(self, "normal", as_unit(self.normal, "plane normal"))
        if self.inlier_count < 0 or self.rms_residual < 0:
            raise ValueError("inlier_count and rms_residual must be non-negative")

    def distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal - self.offset


def _tls(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centroid, singular values and right singular vectors of the centred points."""
    c = points.mean(axis=0)
    _, s, vt = np.linalg.svd(points - c, full_matrices=False)
    return c, s, vt


def fit_plane_lstsq(points: np.ndarray, toward: Sequence[float] = (0.0, 0.0, 0.0)) -> PlaneEstimate:
    """Total-least-squares plane through all points (no outlier rejection)."""
    p = np.asarray(points, dtype=float)
    c, _, vt = _tls(p)
    n = vt[-1]
    n = _orient(n, c, np.asarray(toward, dtype=float))
    res = p @ n - float(n @ c)
    return PlaneEstimate(n, float(n @ c), len(p), float(np.sqrt(np.mean(res**2))), "lstsq")


def _orient(n: np.ndarray, centroid: np.ndarray, toward: np.ndarray) -> np.ndarray:
    n = n / np.linalg.norm(n)
    return -n if float(np.dot(n, toward - centroid)) < 0 else n


def _check_not_collinear(p: np.ndarray, tol: float) -> None:
    if len(p) < 3:
        raise DegenerateCloud(f"need at least 3 points, got {len(p)}")
    c, _, vt = _tls(p)
    d = p - c
    along = d @ vt[0]
    perp = d - np.outer(along, vt[0])
    if float(np.max(np.linalg.norm(perp, axis=1))) <= tol:
        raise DegenerateCloud("all points lie on a line within tolerance")


def _distinct_triples(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """``k`` uniform draws of three distinct indices below ``n``."""
    i = rng.integers(0, n, k)
    j = rng.integers(0, n - 1, k)
    j += j >= i
    m = rng.integers(0, n - 2, k)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    m += m >= lo
    m += m >= hi
    return np.stack([i, j, m], axis=1)


def ransac_plane(cloud: ContactPointCloud | np.ndarray, iters: int = DEFAULT_ITERS,
                 tol: float = DEFAULT_TOL, seed: int = 0,
                 toward: Sequence[float] = (0.0, 0.0, 0.0)) -> PlaneEstimate:
    """Consensus plane over ``iters`` random 3-point hypotheses.

    The best hypothesis (most inliers, ties broken by lower residual) is
    refined by total least squares over its inliers, inliers are re-selected
    against the refined plane and the refit repeated once. The normal is
    oriented towards ``toward`` (the camera origin of the cloud's frame).
    """
    p = cloud.points if isinstance(cloud, ContactPointCloud) else np.atleast_2d(np.asarray(cloud, dtype=float))
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    _check_not_collinear(p, tol)
    rng = np.random.default_rng(seed)
    n_pts = len(p)

    idx = _distinct_triples(rng, n_pts, iters)
    a, b, c = p[idx[:, 0]], p[idx[:, 1]], p[idx[:, 2]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1)
    ok = norms > 1e-12
    if not np.any(ok):
        # every sample was collinear; fall back to a plain fit of all points
        best_mask = np.ones(n_pts, dtype=bool)
    else:
        normals = normals[ok] / norms[ok, None]
        offsets = np.einsum("ij,ij->i", normals, a[ok])
        dist = np.abs(p @ normals.T - offsets)  # (N, H)
        inl = dist <= tol
        counts = inl.sum(axis=0)
        sq = np.where(inl, dist**2, 0.0).sum(axis=0)
        # lexicographic: most inliers, then smallest inlier residual, then first drawn
        order = np.lexsort((np.arange(len(counts)), sq, -counts))
        best_mask = inl[:, order[0]]
        if best_mask.sum() < 3:
            best_mask = np.ones(n_pts, dtype=bool)

    for _ in range(2):
        inliers = p[best_mask]
        cen, _, vt = _tls(inliers)
        n = vt[-1]
        d = float(n @ cen)
        new_mask = np.abs(p @ n - d) <= tol
        if new_mask.sum() < 3 or np.array_equal(new_mask, best_mask):
            break
        best_mask = new_mask
    inliers = p[best_mask]
    cen, _, vt = _tls(inliers)
    n = _orient(vt[-1], cen, np.asarray(toward, dtype=float))
    d = float(n @ cen)
    res = inliers @ n - d
    return PlaneEstimate(n, d, int(best_mask.sum()), float(np.sqrt(np.mean(res**2))))


def folded_normal_sigma(mean_deg: float) -> float:
    """Scale of a zero-mean normal whose absolute value has the given mean."""
    return mean_deg * math.sqrt(math.pi / 2.0)


def perturb_normal(normal: Sequence[float], mean_error_deg: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Rotate ``normal`` by |N(0, s)| degrees about a random perpendicular axis,
    with ``s`` chosen so the expected angle equals ``mean_error_deg``."""
    n = as_unit(normal, "normal")
    if mean_error_deg == 0:
        return n.copy()
    angle = abs(rng.normal(0.0, folded_normal_sigma(mean_error_deg)))
    axis = perpendicular_unit(n, rng)
    return axis_angle_matrix(axis, math.radians(angle)) @ n


def _baseline(true_plane: PlaneEstimate | tuple[Sequence[float], float], noise_deg: float,
              seed: int, label: str) -> PlaneEstimate:
    if noise_deg < 0:
        raise ValueError("noise_deg must be non-negative")
    if isinstance(true_plane, PlaneEstimate):
        n_true, d_true = true_plane.normal, true_plane.offset
    else:
        n_true, d_true = as_unit(true_plane[0], "normal"), float(true_plane[1])
    rng = np.random.default_rng(seed)
    n = perturb_normal(n_true, noise_deg, rng)
    # keep the plane through the point of the true plane closest to the origin
    anchor = d_true * np.asarray(n_true)
    return PlaneEstimate(n, float(n @ anchor), 0, 0.0, f"{label}(folded-normal model)")


def vision_plane_baseline(true_plane: PlaneEstimate | tuple[Sequence[float], float],
                          noise_deg: float = VISION_NOISE_DEG, seed: int = 0) -> PlaneEstimate:
    return _baseline(true_plane, noise_deg, seed, "vision")


def force_plane_baseline(true_plane: PlaneEstimate | tuple[Sequence[float], float],
                         noise_deg: float = FORCE_NOISE_DEG, seed: int = 0) -> PlaneEstimate:
    return _baseline(true_plane, noise_deg, seed, "force")
