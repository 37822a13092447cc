from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rotipsim.errors import DegenerateCloud
from rotipsim.geometry import angle_error, random_rotation
from rotipsim.planefit import (
    DEFAULT_TOL,
    ContactPointCloud,
    PlaneEstimate,
    fit_plane_lstsq,
    folded_normal_sigma,
    force_plane_baseline,
    ransac_plane,
    vision_plane_baseline,
)

seeds = st.integers(0, 2**32 - 1)


def plane_points(n_pts: int, rng: np.random.Generator, z: float = 5.0) -> np.ndarray:
    xy = rng.uniform(-10, 10, size=(n_pts, 2))
    return np.column_stack([xy, np.full(n_pts, z)])


def with_outliers(pts: np.ndarray, frac: float, rng: np.random.Generator, dist: float) -> np.ndarray:
    k = int(round(frac * len(pts) / (1 - frac)))
    out = plane_points(k, rng)
    out[:, 2] += rng.choice([-1.0, 1.0], size=k) * rng.uniform(dist, 3 * dist, size=k)
    return np.vstack([pts, out])


def test_exact_plane():
    pts = plane_points(100, np.random.default_rng(0))
    est = ransac_plane(ContactPointCloud(pts), seed=1)
    # camera origin is below z = 5, so the normal points to -z
    assert np.allclose(est.normal, [0, 0, -1], atol=1e-12)
    assert est.offset == pytest.approx(-5.0, abs=1e-9)
    assert est.rms_residual < 1e-9
    assert est.inlier_count == 100


def test_outliers_are_rejected():
    rng = np.random.default_rng(1)
    pts = with_outliers(plane_points(100, rng), 20 / 120, rng, 10 * DEFAULT_TOL)
    est = ransac_plane(pts, seed=3)
    assert est.inlier_count >= 100
    assert angle_error(est.normal, [0, 0, -1]) < 0.01


def test_collinear_points_are_degenerate():
    with pytest.raises(DegenerateCloud):
        ransac_plane(np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2]], dtype=float))
    with pytest.raises(DegenerateCloud):
        ransac_plane(np.array([[0, 0, 0], [1, 0, 0]], dtype=float))


def test_argument_validation():
    pts = plane_points(10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        ransac_plane(pts, iters=0)
    with pytest.raises(ValueError):
        ransac_plane(pts, tol=0.0)
    with pytest.raises(ValueError):
        ContactPointCloud(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        PlaneEstimate(np.array([0, 0, 1.0]), 0.0, -1, 0.0)


def test_ransac_is_seeded():
    rng = np.random.default_rng(2)
    pts = with_outliers(plane_points(60, rng) + rng.normal(0, 0.05, (60, 3)), 0.3, rng, 2.0)
    a, b = ransac_plane(pts, seed=9), ransac_plane(pts, seed=9)
    assert np.array_equal(a.normal, b.normal) and a.offset == b.offset


def test_orientation_toward_camera():
    pts = plane_points(30, np.random.default_rng(3), z=-5.0)
    assert ransac_plane(pts).normal[2] > 0
    assert ransac_plane(pts, toward=(0, 0, -100)).normal[2] < 0


@pytest.mark.parametrize("fn,preset", [(vision_plane_baseline, 7.82), (force_plane_baseline, 11.14)])
def test_baseline_presets(fn, preset):
    n = np.array([0.0, 0.6, 0.8])
    assert np.allclose(fn((n, 2.0), 0.0, 1).normal, n, atol=1e-15)
    errs = [angle_error(fn((n, 2.0), seed=s).normal, n) for s in range(10_000)]
    assert np.mean(errs) == pytest.approx(preset, abs=0.3)
    assert np.array_equal(fn((n, 2.0), seed=4).normal, fn((n, 2.0), seed=4).normal)
    assert "folded-normal" in fn((n, 2.0), seed=4).source


def test_baseline_rejects_negative_noise():
    with pytest.raises(ValueError):
        vision_plane_baseline(((0, 0, 1), 0.0), -1.0)


def test_folded_normal_scale():
    # E|X| = s * sqrt(2 / pi) for X ~ N(0, s^2)
    assert folded_normal_sigma(1.0) * math.sqrt(2 / math.pi) == pytest.approx(1.0)


@given(seeds)
def test_noiseless_recovery(s):
    rng = np.random.default_rng(s)
    r = random_rotation(rng)
    d = float(rng.uniform(-20, 20))
    n = r[:, 2]
    pts = plane_points(50, rng, z=0.0) @ r.T + d * n
    est = ransac_plane(pts, seed=s, toward=d * n + 50 * n)
    assert angle_error(est.normal, n) < 1e-6
    assert abs(est.offset - d) < 1e-9


@given(seeds)
def test_rotation_equivariance(s):
    rng = np.random.default_rng(s)
    pts = plane_points(40, rng) + rng.normal(0, 0.02, (40, 3))
    r = random_rotation(rng)
    a = ransac_plane(pts, seed=1)
    b = ransac_plane(pts @ r.T, seed=1)
    assert angle_error(b.normal, r @ a.normal) < 1e-6


def test_ransac_beats_least_squares_under_outliers():
    wins = 0
    for s in range(100):
        rng = np.random.default_rng(s)
        pts = with_outliers(plane_points(70, rng) + rng.normal(0, 0.02, (70, 3)), 0.3, rng, 10 * DEFAULT_TOL)
        truth = np.array([0, 0, -1.0])
        wins += angle_error(ransac_plane(pts, seed=s).normal, truth) < angle_error(fit_plane_lstsq(pts).normal, truth)
    assert wins >= 95
