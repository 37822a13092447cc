"""Geometric stand-ins for the learned perception stages.

Contact masks are rendered from the fingertip geometry and a contact plane,
and edge detections are sampled from the ground-truth sheet trajectory of a
feed run. Noise is injected separately (``corrupt_mask`` and the detector
parameters) so its effect on downstream estimators can be controlled.
"""

from __future__ import annotations

import functools
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np
from scipy import ndimage

from .errors import EmptyMask
from .geometry import RigidTransform, as_unit, rodrigues_align, rot_x, rot_y
from .sensor import CameraIntrinsics, SensorGeometry, surface_points_for_image

DEFAULT_INDENTATION = 0.2  # mm


@dataclass(frozen=True, eq=False)
class ContactMask:
    bits: np.ndarray  # (height, width) bool

    def __post_init__(self) -> None:
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim != 2:
            raise ValueError("mask must be 2-D")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    @property
    def pixel_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def is_empty(self) -> bool:
        return not bool(self.bits.any())

    def centroid(self) -> tuple[float, float]:
        """Mean (u, v) of set pixels."""
        v, u = np.nonzero(self.bits)
        if u.size == 0:
            raise EmptyMask("centroid of an empty mask")
        return float(u.mean()), float(v.mean())

    def matches(self, k: CameraIntrinsics) -> bool:
        return self.width == k.width and self.height == k.height

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ContactMask) and np.array_equal(self.bits, other.bits)

    def to_pgm(self) -> bytes:
        header = f"P5\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + (self.bits.astype(np.uint8) * 255).tobytes()

    def write_pgm(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_pgm())

    @classmethod
    def from_pgm(cls, data: bytes) -> ContactMask:
        buf = io.BytesIO(data)
        tokens: list[bytes] = []
        while len(tokens) < 4:
            line = buf.readline()
            if not line:
                raise ValueError("truncated PGM header")
            line = line.split(b"#", 1)[0]
            tokens.extend(line.split())
        if tokens[0] != b"P5":
            raise ValueError("not a binary PGM (P5) file")
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        if maxval > 255:
            raise ValueError("16-bit PGM not supported")
        raw = np.frombuffer(buf.read(w * h), dtype=np.uint8)
        if raw.size != w * h:
            raise ValueError("PGM pixel data is truncated")
        return cls(raw.reshape(h, w) > 0)


@dataclass(frozen=True, eq=False)
class ContactScene:
    """Sensor pose in the world plus the contact plane ``n . p = d`` (world frame).

    The plane normal points out of the object, towards the sensor. A surface
    point is in contact when it lies at least ``indentation`` mm behind the
    plane, i.e. its signed distance is <= -indentation.
    """

    sensor_pose: RigidTransform
    normal: np.ndarray
    offset: float
    indentation: float = DEFAULT_INDENTATION

    def __post_init__(self) -> None:
        object.__setattr__(self, "normal", as_unit(self.normal, "plane normal"))
        if not self.indentation > 0:
            raise ValueError("indentation threshold must be positive")

    def normal_in_sensor(self) -> np.ndarray:
        return self.sensor_pose.rotation.T @ self.normal

    def signed_distance(self, points_sensor: np.ndarray) -> np.ndarray:
        pw = self.sensor_pose.apply(points_sensor)
        return pw @ self.normal - self.offset

    def penetration(self, g: SensorGeometry) -> float:
        """Depth of the deepest surface point behind the plane (negative when clear)."""
        n_s = self.normal_in_sensor()
        if n_s[2] >= 0:
            return -math.inf  # plane faces away from the fingertip
        deepest = g.support_point(-n_s)
        return -float(self.signed_distance(deepest[None, :])[0])


@functools.lru_cache(maxsize=16)
def _surface_cache(k: CameraIntrinsics, g: SensorGeometry) -> tuple[np.ndarray, np.ndarray]:
    pts, valid = surface_points_for_image(k, g)
    pts.setflags(write=False)
    valid.setflags(write=False)
    return pts, valid


def render_contact_mask(scene: ContactScene, k: CameraIntrinsics, g: SensorGeometry) -> ContactMask:
    pts, valid = _surface_cache(k, g)
    if scene.penetration(g) < scene.indentation:
        return ContactMask(np.zeros((k.height, k.width), dtype=bool))
    r = scene.sensor_pose.rotation
    t = scene.sensor_pose.translation
    # n . (R p + t) - d, folded into a single dot product per pixel
    n_local = r.T @ scene.normal
    bias = float(scene.normal @ t) - scene.offset
    with np.errstate(invalid="ignore"):
        signed = pts @ n_local + bias
        bits = valid & (signed <= -scene.indentation)
    return ContactMask(bits)


def sensor_tilt_rotation(tilt_x: float = 0.0, tilt_y: float = 0.0) -> np.ndarray:
    """Rotation R_WS for a fingertip pointing down (-z world) tilted by the given
    angles (radians) about its own x and y axes."""
    return rot_x(math.pi) @ rot_y(-tilt_y) @ rot_x(-tilt_x)


def pressed_scene(g: SensorGeometry, tilt_y: float = 0.0, press: float = 0.6, *,
                  tilt_x: float = 0.0, indentation: float = DEFAULT_INDENTATION,
                  plane_normal: Sequence[float] = (0.0, 0.0, 1.0),
                  plane_offset: float = 0.0) -> ContactScene:
    """Scene with the fingertip pressed ``press`` mm into a plane at a given tilt.

    The tilt is the angle between the fingertip axis and the plane normal,
    expressed as rotations about the sensor x and y axes. The world plane is
    ``plane_normal . p = plane_offset``; the sensor is placed so its deepest
    surface point lies exactly ``press`` mm behind the plane.
    """
    n_w = as_unit(plane_normal, "plane normal")
    r_tilt = sensor_tilt_rotation(tilt_x, tilt_y)
    # Align the canonical table normal (0, 0, 1) with the requested plane normal.
    r_ws = rodrigues_align((0.0, 0.0, 1.0), n_w) @ r_tilt
    n_s = r_ws.T @ n_w
    deepest = g.support_point(-n_s)
    t = (plane_offset - press) * n_w - r_ws @ deepest
    return ContactScene(RigidTransform(r_ws, t), n_w, plane_offset, indentation)


# --------------------------------------------------------------------------- boundary

_MOORE = [(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1)]


def boundary_bits(bits: np.ndarray) -> np.ndarray:
    """Set pixels with at least one unset (or out-of-image) 4-neighbour."""
    b = np.asarray(bits, dtype=bool)
    p = np.pad(b, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return b & ~interior


def _moore_trace(bits: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]]:
    h, w = bits.shape

    def is_set(r: int, c: int) -> bool:
        return 0 <= r < h and 0 <= c < w and bool(bits[r, c])

    path = [start]
    cur = start
    back = 0  # index into _MOORE of the backtrack neighbour (west of start)
    first_move: tuple[tuple[int, int], int] | None = None
    for _ in range(8 * bits.size + 8):
        found = None
        for step in range(8):
            idx = (back + step) % 8
            dr, dc = _MOORE[idx]
            if is_set(cur[0] + dr, cur[1] + dc):
                found = idx
                break
        if found is None:
            return path  # isolated pixel
        nxt = (cur[0] + _MOORE[found][0], cur[1] + _MOORE[found][1])
        # the neighbour examined just before ``found`` becomes the new backtrack,
        # expressed relative to ``nxt``
        prev = ((found - 1) % 8)
        bp = (cur[0] + _MOORE[prev][0], cur[1] + _MOORE[prev][1])
        back = _MOORE.index((bp[0] - nxt[0], bp[1] - nxt[1])) if (bp[0] - nxt[0], bp[1] - nxt[1]) in _MOORE else 0
        if first_move is None:
            first_move = (nxt, back)
        elif cur == start and (nxt, back) == first_move:
            break
        cur = nxt
        path.append(cur)
    if path[-1] == start and len(path) > 1:
        path.pop()
    return path


def mask_boundary(m: ContactMask | np.ndarray) -> list[tuple[int, int]]:
    """Ordered boundary pixels as (u, v) pairs.

    A pixel is on the boundary iff it is set and 4-adjacent to an unset or
    out-of-image pixel. Pixels are ordered by Moore-neighbour tracing of the
    outer contour; boundary pixels the trace does not reach (hole rims) are
    appended in raster order.
    """
    bits = m.bits if isinstance(m, ContactMask) else np.asarray(m, dtype=bool)
    if not bits.any():
        raise EmptyMask("mask has no set pixels")
    edge = boundary_bits(bits)
    rows, cols = np.nonzero(bits)
    start = (int(rows[0]), int(cols[0]))
    seen: set[tuple[int, int]] = set()
    ordered: list[tuple[int, int]] = []
    for rc in _moore_trace(bits, start):
        if rc not in seen and edge[rc]:
            seen.add(rc)
            ordered.append(rc)
    er, ec = np.nonzero(edge)
    for rc in zip(er.tolist(), ec.tolist()):
        if rc not in seen:
            seen.add(rc)
            ordered.append(rc)
    return [(c, r) for r, c in ordered]



def contact_edge(m: ContactMask | np.ndarray) -> list[tuple[int, int]]:
    """Boundary pixels that lie on the physical contact edge.

    Where the patch runs off the image the traced boundary follows the image
    frame; those pixels say nothing about the contact plane and are dropped.
    Raises EmptyMask when nothing is left.
    """
    bits = m.bits if isinstance(m, ContactMask) else np.asarray(m, dtype=bool)
    h, w = bits.shape
    pts = [(u, v) for u, v in mask_boundary(bits) if 0 < u < w - 1 and 0 < v < h - 1]
    if not pts:
        raise EmptyMask("mask boundary lies entirely on the image frame")
    return pts

# --------------------------------------------------------------------------- noise


@dataclass(frozen=True)
class MaskNoiseParams:
    """Segmentation-error model.

    ``warp_px`` is the amplitude of a smooth random displacement of the
    contour (harmonics 1..``harmonics`` of the angle around the mask
    centroid, coefficient std ``warp_px / k``); ``flip_rate`` is the
    probability of flipping each boundary pixel afterwards.
    """

    flip_rate: float = 0.0
    warp_px: float = 0.0
    harmonics: int = 3
    iou_floor: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.flip_rate <= 1.0:
            raise ValueError("flip_rate must be in [0, 1]")
        if self.warp_px < 0:
            raise ValueError("warp_px must be non-negative")
        if self.harmonics < 1:
            raise ValueError("harmonics must be >= 1")

    @property
    def is_noiseless(self) -> bool:
        return self.flip_rate == 0.0 and self.warp_px == 0.0


# Calibrated so the two-class mIoU of corrupted versus clean masks averages
# ~0.969 over random contact masks (see tests/test_oracle.py).
DEFAULT_MASK_NOISE = MaskNoiseParams(flip_rate=0.05, warp_px=2.5, harmonics=3, iou_floor=0.95)
NO_MASK_NOISE = MaskNoiseParams()


def corrupt_mask(m: ContactMask, noise: MaskNoiseParams, seed: int) -> ContactMask:
    if noise.is_noiseless or m.is_empty():
        return ContactMask(m.bits)
    rng = np.random.default_rng(seed)
    bits = m.bits
    if noise.warp_px > 0:
        inside = ndimage.distance_transform_edt(bits) - 0.5
        outside = ndimage.distance_transform_edt(~bits) - 0.5
        signed = np.where(bits, inside, -outside)
        uc, vc = m.centroid()
        band = np.abs(signed) <= 4.0 * noise.warp_px * noise.harmonics + 2.0
        vv, uu = np.nonzero(band)
        phi = np.arctan2(vv - vc, uu - uc)
        shift = np.zeros_like(phi)
        for order in range(1, noise.harmonics + 1):
            a, b = rng.normal(0.0, noise.warp_px / order, size=2)
            shift += a * np.cos(order * phi) + b * np.sin(order * phi)
        new_bits = bits.copy()
        new_bits[vv, uu] = signed[vv, uu] + shift > 0
        bits = new_bits
    if noise.flip_rate > 0 and bits.any():
        edge = boundary_bits(bits)
        flips = edge & (rng.random(bits.shape) < noise.flip_rate)
        bits = bits & ~flips
    if not bits.any():
        # never erase contact entirely; fall back to the clean mask
        bits = m.bits
    return ContactMask(bits)


def mask_iou(a: ContactMask, b: ContactMask) -> float:
    inter = np.count_nonzero(a.bits & b.bits)
    union = np.count_nonzero(a.bits | b.bits)
    return 1.0 if union == 0 else inter / union


def mask_miou(a: ContactMask, b: ContactMask) -> float:
    """Mean IoU over the contact and background classes (segmentation mIoU)."""
    inv_a = ContactMask(~a.bits)
    inv_b = ContactMask(~b.bits)
    return 0.5 * (mask_iou(a, b) + mask_iou(inv_a, inv_b))


# --------------------------------------------------------------------------- edge events


@dataclass(frozen=True)
class EdgeDetection:
    frame_index: int
    center: tuple[float, float]
    bbox: tuple[float, float, float, float]  # x0, y0, x1, y1
    confidence: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "frame": self.frame_index,
                "center": [round(self.center[0], 4), round(self.center[1], 4)],
                "bbox": [round(x, 4) for x in self.bbox],
                "confidence": round(self.confidence, 6),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> EdgeDetection:
        d = json.loads(line)
        return cls(int(d["frame"]), tuple(d["center"]), tuple(d["bbox"]), float(d["confidence"]))


@dataclass(frozen=True)
class DetectorParams:
    """Per-frame edge detector model: misses with probability ``1 - recall``."""

    recall: float = 1.0
    fp_rate: float = 0.0  # spurious detections per frame
    jitter_px: float = 0.0
    edge_width_px: float = 200.0
    edge_height_px: float = 12.0
    width: int = 640
    height: int = 480

    def __post_init__(self) -> None:
        if not 0.0 <= self.recall <= 1.0:
            raise ValueError("recall must be in [0, 1]")
        if not 0.0 <= self.fp_rate <= 1.0:
            raise ValueError("fp_rate must be in [0, 1]")
        if self.jitter_px < 0:
            raise ValueError("jitter_px must be non-negative")


# Recall per material comes from the detector evaluation; the spurious-detection
# rates are simulator calibration constants (see README, "Noise presets").
DETECTOR_PRESETS: dict[str, DetectorParams] = {
    "print_paper": DetectorParams(recall=0.919, fp_rate=5e-5, jitter_px=2.0),
    "coated_paper": DetectorParams(recall=0.878, fp_rate=1.35e-4, jitter_px=3.0),
    "plastic_sheet": DetectorParams(recall=0.954, fp_rate=3e-5, jitter_px=2.0),
    "ideal": DetectorParams(recall=1.0, fp_rate=0.0, jitter_px=0.0),
}


def _bbox(center: tuple[float, float], det: DetectorParams) -> tuple[float, float, float, float]:
    u, v = center
    x0 = min(max(u - det.edge_width_px / 2, 0.0), det.width - 1.0)
    x1 = min(max(u + det.edge_width_px / 2, 0.0), det.width - 1.0)
    y0 = min(max(v - det.edge_height_px / 2, 0.0), det.height - 1.0)
    y1 = min(max(v + det.edge_height_px / 2, 0.0), det.height - 1.0)
    return (x0, y0, x1, y1)


def edge_event_stream(feed_trace: Any, det: DetectorParams, seed: int) -> list[EdgeDetection]:
    """Sample detections from the ground-truth edge positions of a feed run.

    ``feed_trace`` must expose ``edge_truth`` (records with ``tick``, ``u``
    and ``v``) and ``n_ticks``. Each visible edge is detected independently
    per frame with probability ``det.recall``; each frame additionally
    carries a spurious detection with probability ``det.fp_rate``.
    """
    rng = np.random.default_rng(seed)
    by_tick: dict[int, list[Any]] = {}
    for rec in feed_trace.edge_truth:
        by_tick.setdefault(int(rec.tick), []).append(rec)
    out: list[EdgeDetection] = []
    for tick in range(int(feed_trace.n_ticks)):
        for rec in by_tick.get(tick, ()):
            hit = rng.random() < det.recall
            jitter = rng.normal(0.0, det.jitter_px, size=2) if det.jitter_px > 0 else np.zeros(2)
            conf = 0.6 + 0.4 * rng.random()
            if hit:
                u = float(np.clip(rec.u + jitter[0], 0.0, det.width - 1.0))
                v = float(np.clip(rec.v + jitter[1], 0.0, det.height - 1.0))
                out.append(EdgeDetection(tick, (u, v), _bbox((u, v), det), float(conf)))
        if det.fp_rate > 0:
            spurious = rng.random() < det.fp_rate
            pos = rng.random(2)
            conf = 0.3 + 0.4 * rng.random()
            if spurious:
                u = float(pos[0] * (det.width - 1))
                v = float(pos[1] * (det.height - 1))
                out.append(EdgeDetection(tick, (u, v), _bbox((u, v), det), float(conf)))
    return out


def write_detections_jsonl(detections: Iterable[EdgeDetection], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in detections:
            fh.write(d.to_json() + "\n")


def read_detections_jsonl(path: str | Path) -> list[EdgeDetection]:
    with open(path, encoding="utf-8") as fh:
        return [EdgeDetection.from_json(line) for line in fh if line.strip()]


def group_by_frame(detections: Iterable[EdgeDetection]) -> Iterator[tuple[int, list[EdgeDetection]]]:
    """Yield ``(frame, detections)`` in increasing frame order."""
    frames: dict[int, list[EdgeDetection]] = {}
    for d in detections:
        frames.setdefault(d.frame_index, []).append(d)
    for f in sorted(frames):
        yield f, frames[f]
