"""Recover the fingertip offsets (o_x, o_y, o_z) from contact images.

Lateral offsets come from flat, vertical presses: the contact patch must be
centred on the apex. The height offset comes from presses at +/-45 deg: the
plane fitted to the back-projected boundary must match the known plane.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import AmbiguousMinimum, EmptyMask, EmptyResult, NoConvergence
from .geometry import angle_error
from .oracle import ContactMask, MaskNoiseParams, NO_MASK_NOISE, corrupt_mask, contact_edge, pressed_scene, render_contact_mask
from .planefit import ransac_plane
from .sensor import CameraIntrinsics, SensorGeometry, backproject_contour

SEARCH_HALF_WIDTH = 3.0  # mm
TOL = 0.01  # mm
INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True, eq=False)
class TiltedMask:
    angle_deg: float
    mask: ContactMask
    normal: np.ndarray  # known plane normal in the sensor frame


@dataclass(frozen=True, eq=False)
class CalibrationSet:
    vertical_masks: tuple[ContactMask, ...]
    tilted_masks: tuple[TiltedMask, ...]
    true_geometry: SensorGeometry | None = field(default=None, repr=False)
    # contact-edge pixels per mask; the masks never change, so trace them once
    vertical_edges: tuple[np.ndarray, ...] = field(init=False, repr=False)
    tilted_edges: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertical_edges", tuple(np.asarray(contact_edge(m), dtype=float)
                                                         for m in self.vertical_masks))
        object.__setattr__(self, "tilted_edges", tuple(np.asarray(contact_edge(t.mask), dtype=float)
                                                       for t in self.tilted_masks))

    def has_both_tilts(self) -> bool:
        return any(t.angle_deg > 0 for t in self.tilted_masks) and any(t.angle_deg < 0 for t in self.tilted_masks)


def make_calibration_set(true_geometry: SensorGeometry, k: CameraIntrinsics = CameraIntrinsics(), *,
                         noise: MaskNoiseParams = NO_MASK_NOISE, seed: int = 0, per_angle: int = 1,
                         angles: Sequence[float] = (45.0, -45.0), press: float = 0.6) -> CalibrationSet:
    """Render synthetic calibration presses against ``true_geometry``."""
    rng = np.random.default_rng(seed)
    vertical = []
    tilted = []
    for _ in range(per_angle):
        m = render_contact_mask(pressed_scene(true_geometry, 0.0, press), k, true_geometry)
        vertical.append(corrupt_mask(m, noise, int(rng.integers(2**31))))
        for a in angles:
            scene = pressed_scene(true_geometry, math.radians(a), press)
            m = render_contact_mask(scene, k, true_geometry)
            tilted.append(TiltedMask(a, corrupt_mask(m, noise, int(rng.integers(2**31))), scene.normal_in_sensor()))
    return CalibrationSet(tuple(vertical), tuple(tilted), true_geometry)


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float = TOL,
                   max_iter: int = 100) -> tuple[float, int]:
    """Minimise a unimodal ``f`` on [lo, hi]; returns (argmin, evaluations)."""
    a, b = lo, hi
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = f(c), f(d)
    n = 2
    while b - a > tol:
        if n > max_iter:
            raise NoConvergence(f"golden section did not reach tol {tol} in {max_iter} evaluations")
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (b - a)
            fd = f(d)
        n += 1
    return 0.5 * (a + b), n


def _boundary_points(edge: np.ndarray, k: CameraIntrinsics, g: SensorGeometry) -> np.ndarray:
    return backproject_contour(edge, k, g).points


def _weighted_centroid(points: np.ndarray) -> np.ndarray:
    """Centroid of a closed polyline, weighted by segment length."""
    nxt = np.roll(points, -1, axis=0)
    seg = np.linalg.norm(nxt - points, axis=1)
    mid = 0.5 * (points + nxt)
    total = seg.sum()
    return mid.mean(axis=0) if total == 0 else (mid * seg[:, None]).sum(axis=0) / total


def xy_objective(cal: CalibrationSet, k: CameraIntrinsics, g: SensorGeometry) -> float:
    """Mean squared lateral distance between the contact centroid and the apex."""
    errs = []
    for edge in cal.vertical_edges:
        c = _weighted_centroid(_boundary_points(edge, k, g))
        errs.append((c[0] - g.o_x) ** 2 + (c[1] - g.o_y) ** 2)
    return float(np.mean(errs))


def z_objective(cal: CalibrationSet, k: CameraIntrinsics, g: SensorGeometry, seed: int = 0) -> float:
    """Mean angle (deg) between fitted and known planes for the tilted presses."""
    errs = []
    for i, (t, edge) in enumerate(zip(cal.tilted_masks, cal.tilted_edges)):
        try:
            est = ransac_plane(_boundary_points(edge, k, g), seed=seed + i)
        except (EmptyResult, EmptyMask):
            return 180.0
        errs.append(angle_error(est.normal, t.normal))
    return float(np.mean(errs))


@dataclass(frozen=True)
class XYResult:
    o_x: float
    o_y: float
    residual: float
    evaluations: int
    sweeps: int


def calibrate_xy(cal: CalibrationSet, k: CameraIntrinsics, g0: SensorGeometry, *,
                 half_width: float = SEARCH_HALF_WIDTH, tol: float = TOL, max_sweeps: int = 20) -> XYResult:
    """Coordinate descent with golden-section line searches in a box around ``g0``."""
    if not cal.vertical_masks:
        raise ValueError("calibrate_xy needs at least one vertical mask")
    x, y = g0.o_x, g0.o_y
    lim = 0.999 * g0.r
    bx = (max(-lim, g0.o_x - half_width), min(lim, g0.o_x + half_width))
    by = (max(-lim, g0.o_y - half_width), min(lim, g0.o_y + half_width))
    evals = 0
    for sweep in range(1, max_sweeps + 1):
        nx, n1 = golden_section(lambda v: xy_objective(cal, k, g0.with_offsets(o_x=v, o_y=y)), *bx, tol=tol)
        ny, n2 = golden_section(lambda v: xy_objective(cal, k, g0.with_offsets(o_x=nx, o_y=v)), *by, tol=tol)
        evals += n1 + n2
        moved = max(abs(nx - x), abs(ny - y))
        x, y = nx, ny
        if moved < tol:
            return XYResult(x, y, xy_objective(cal, k, g0.with_offsets(o_x=x, o_y=y)), evals, sweep)
    raise NoConvergence(f"lateral offsets still moving after {max_sweeps} sweeps")


@dataclass(frozen=True)
class ZResult:
    o_z: float
    residual_deg: float
    evaluations: int


def check_unimodal(f: Callable[[float], float], lo: float, hi: float, *, flat_tol: float = 1e-3,
                   flat_span: float = 0.5, samples: int = 61) -> None:
    """Raise AmbiguousMinimum when the sampled minimum is flat over more than ``flat_span``."""
    zs = np.linspace(lo, hi, samples)
    vals = np.array([f(z) for z in zs])
    near = zs[vals <= vals.min() + flat_tol]
    if near.max() - near.min() > flat_span:
        raise AmbiguousMinimum(f"objective flat within {flat_tol} over [{near.min():.3f}, {near.max():.3f}]")


def calibrate_z(cal: CalibrationSet, k: CameraIntrinsics, g_xy: SensorGeometry, *,
                half_width: float = SEARCH_HALF_WIDTH, tol: float = TOL, seed: int = 0,
                check: bool = False) -> ZResult:
    if not cal.has_both_tilts():
        raise ValueError("calibrate_z needs presses at both +45 and -45 deg")
    lo = max(0.0, g_xy.o_z - half_width)
    hi = g_xy.o_z + half_width

    def f(z: float) -> float:
        return z_objective(cal, k, g_xy.with_offsets(o_z=z), seed)

    if check:
        check_unimodal(f, lo, hi)
    z, n = golden_section(f, lo, hi, tol=tol)
    return ZResult(z, f(z), n)


@dataclass(frozen=True)
class CalibrationReport:
    o_x: float
    o_y: float
    o_z: float
    xy_residual: float
    plane_residual_deg: float
    evaluations: int
    rounds: int
    true_offsets: tuple[float, float, float] | None = None

    @property
    def errors(self) -> tuple[float, float, float] | None:
        if self.true_offsets is None:
            return None
        return (abs(self.o_x - self.true_offsets[0]), abs(self.o_y - self.true_offsets[1]),
                abs(self.o_z - self.true_offsets[2]))

    def to_json(self) -> str:
        d = {
            "offsets": {"o_x": round(self.o_x, 6), "o_y": round(self.o_y, 6), "o_z": round(self.o_z, 6)},
            "residuals": {"xy_mm2": round(self.xy_residual, 9), "plane_deg": round(self.plane_residual_deg, 6)},
            "iterations": {"evaluations": self.evaluations, "rounds": self.rounds},
        }
        if self.true_offsets is not None:
            d["true_offsets"] = dict(zip(("o_x", "o_y", "o_z"), (round(v, 6) for v in self.true_offsets)))
            d["abs_errors"] = dict(zip(("o_x", "o_y", "o_z"), (round(v, 6) for v in self.errors)))
        return json.dumps(d, sort_keys=True)


def calibrate(cal: CalibrationSet, k: CameraIntrinsics, g0: SensorGeometry, *, rounds: int = 4,
              tol: float = TOL, seed: int = 0) -> CalibrationReport:
    """Lateral stage then height stage, repeated until neither moves.

    The lateral objective depends weakly on o_z, so a single pass leaves a
    residual of roughly o_x * (o_z error) / (o_z + r); repeating the pair
    removes it.
    """
    g = g0
    evals = 0
    xy = z = None
    for rnd in range(1, rounds + 1):
        xy = calibrate_xy(cal, k, g, tol=tol)
        g_xy = g.with_offsets(o_x=xy.o_x, o_y=xy.o_y)
        z = calibrate_z(cal, k, g_xy, tol=tol, seed=seed)
        g_new = g_xy.with_offsets(o_z=z.o_z)
        evals += xy.evaluations + z.evaluations
        moved = max(abs(g_new.o_x - g.o_x), abs(g_new.o_y - g.o_y), abs(g_new.o_z - g.o_z))
        g = g_new
        if rnd > 1 and moved < tol:
            break
    truth = None
    if cal.true_geometry is not None:
        t = cal.true_geometry
        truth = (t.o_x, t.o_y, t.o_z)
    return CalibrationReport(g.o_x, g.o_y, g.o_z, xy.residual, z.residual_deg, evals, rnd, truth)
