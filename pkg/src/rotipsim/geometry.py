"""Rigid transforms, SE(3) exp/log, vector alignment and the angle-error metric.

Conventions:
    - A transform T_AB maps points expressed in frame B into frame A:
      p_A = R_AB @ p_B + t_AB. Frame chains compose left to right,
      T_WT = T_WE * T_EC * T_CM * T_MT.
    - Translations are millimetres, rotations radians. Degrees appear only at
      I/O boundaries (``angle_error`` returns degrees).
    - Twists are 6-vectors ``[rho; omega]``: translational part first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AntiparallelInput

ORTHO_TOL = 1e-9
UNIT_TOL = 1e-6

# Below this angle the closed forms are replaced by Taylor series.
_SMALL_ANGLE = 1e-6
# Within this distance of pi the log uses the diagonal branch.
_NEAR_PI = 1e-6


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """An element of SE(3): 3x3 rotation plus translation in millimetres."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if t.shape != (3,):
            raise ValueError(f"translation must have 3 entries, got {t.shape}")
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise ValueError("transform contains non-finite values")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", _readonly(r))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> RigidTransform:
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError("homogeneous matrix must be 4x4")
        if np.max(np.abs(m[3] - [0.0, 0.0, 0.0, 1.0])) > ORTHO_TOL:
            raise ValueError("bottom row of a homogeneous transform must be [0 0 0 1]")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> RigidTransform:
        return cls(np.eye(3), np.array([x, y, z], dtype=float))

    @classmethod
    def from_rotation(cls, r: np.ndarray) -> RigidTransform:
        return cls(r, np.zeros(3))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points (3,) or (N, 3) from the child frame into the parent frame."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def apply_vector(self, vectors: np.ndarray) -> np.ndarray:
        """Rotate directions (no translation)."""
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def allclose(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0.0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0.0)
        )

    def __repr__(self) -> str:
        return (
            f"RigidTransform(rotation={self.rotation.tolist()}, "
            f"translation={self.translation.tolist()})"
        )


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Return ``a * b``: apply ``b`` first, then ``a`` (frame-chain order)."""
    r = a.rotation @ b.rotation
    # Re-orthonormalise so long chains do not drift past the 1e-9 invariant.
    u, _, vt = np.linalg.svd(r)
    r = u @ vt
    return RigidTransform(r, a.rotation @ b.translation + a.translation)


def chain(*transforms: RigidTransform) -> RigidTransform:
    out = RigidTransform.identity()
    for t in transforms:
        out = compose(out, t)
    return out


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def skew(v: Sequence[float]) -> np.ndarray:
    x, y, z = (float(c) for c in v)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def axis_angle_matrix(axis: Sequence[float], angle: float) -> np.ndarray:
    """Rotation by ``angle`` radians about ``axis`` (normalised internally)."""
    a = np.asarray(axis, dtype=float)
    n = np.linalg.norm(a)
    if n == 0.0:
        raise ValueError("rotation axis must be non-zero")
    k = skew(a / n)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def rot_x(angle: float) -> np.ndarray:
    return axis_angle_matrix((1.0, 0.0, 0.0), angle)


def rot_y(angle: float) -> np.ndarray:
    return axis_angle_matrix((0.0, 1.0, 0.0), angle)


def rot_z(angle: float) -> np.ndarray:
    return axis_angle_matrix((0.0, 0.0, 1.0), angle)


def so3_exp(omega: Sequence[float]) -> np.ndarray:
    w = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(w))
    k = skew(w)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    return np.eye(3) + (math.sin(theta) / theta) * k + ((1.0 - math.cos(theta)) / theta**2) * (k @ k)


def so3_log(r: np.ndarray) -> np.ndarray:
    """Rotation vector of ``r``.

    At an angle of exactly pi the axis sign is ambiguous; the axis is built
    from the column of the largest diagonal entry and that entry's component
    is taken positive, so the result is deterministic.
    """
    r = np.asarray(r, dtype=float)
    skew_part = vee(r - r.T) / 2.0  # = sin(theta) * axis
    s = float(np.linalg.norm(skew_part))
    c = float(np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0))
    theta = math.atan2(s, c)
    if theta < _SMALL_ANGLE:
        return skew_part * (1.0 + theta**2 / 6.0)
    if math.pi - theta > _NEAR_PI:
        return skew_part * (theta / s)
    # theta ~ pi: R ~ 2 a a^T - I, read the axis off the dominant diagonal.
    k = int(np.argmax(np.diag(r)))
    denom = 1.0 - c
    a = np.empty(3)
    a[k] = math.sqrt(max((r[k, k] - c) / denom, 0.0))
    for j in range(3):
        if j != k:
            a[j] = (r[k, j] + r[j, k]) / (2.0 * denom * a[k])
    a /= np.linalg.norm(a)
    if float(np.dot(skew_part, a)) < 0.0:
        a = -a
    return a * theta


def _v_matrix(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    k = skew(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * k + (k @ k) / 6.0
    return (
        np.eye(3)
        + ((1.0 - math.cos(theta)) / theta**2) * k
        + ((theta - math.sin(theta)) / theta**3) * (k @ k)
    )


def _v_inverse(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    k = skew(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * k + (k @ k) / 12.0
    half = theta / 2.0
    coeff = (1.0 - half / math.tan(half)) / theta**2
    return np.eye(3) - 0.5 * k + coeff * (k @ k)


def se3_exp(twist: Sequence[float]) -> RigidTransform:
    xi = np.asarray(twist, dtype=float).reshape(6)
    rho, omega = xi[:3], xi[3:]
    return RigidTransform(so3_exp(omega), _v_matrix(omega) @ rho)


def se3_log(t: RigidTransform) -> np.ndarray:
    omega = so3_log(t.rotation)
    rho = _v_inverse(omega) @ t.translation
    return np.concatenate([rho, omega])


def pose_error(current: RigidTransform, target: RigidTransform) -> np.ndarray:
    """Body-frame twist taking ``current`` to ``target``.

    Equals ``log(current^-1 * target)``; ``current * exp(err) == target``.
    """
    return se3_log(compose(invert(current), target))


def as_unit(v: Sequence[float], name: str = "vector") -> np.ndarray:
    """Validate that ``v`` is (close to) unit length and return it renormalised."""
    a = np.asarray(v, dtype=float).reshape(3)
    n = float(np.linalg.norm(a))
    if not math.isfinite(n) or abs(n - 1.0) > UNIT_TOL:
        raise ValueError(f"{name} must be a unit vector (norm={n!r})")
    return a / n


def normalize(v: Sequence[float]) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    n = np.linalg.norm(a)
    if n == 0.0:
        raise ValueError("cannot normalise a zero vector")
    return a / n


def antiparallel_axis(n1: np.ndarray) -> np.ndarray:
    """Fallback rotation axis for a half-turn that maps ``n1`` to ``-n1``."""
    for candidate in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
        proj = candidate - np.dot(candidate, n1) * n1
        norm = np.linalg.norm(proj)
        if norm > 1e-6:
            return proj / norm
    raise AssertionError("unreachable: x and y cannot both be parallel to a unit vector")


def rodrigues_align(n1: Sequence[float], n2: Sequence[float]) -> np.ndarray:
    """Rotation matrix R with ``R @ n1 == n2`` about the axis ``n1 x n2``.

    R = I + sin(theta) A + (1 - cos(theta)) A^2 with A the skew matrix of the
    normalised axis. Antiparallel inputs use a deterministic fallback axis
    (see ``antiparallel_axis``); call ``rodrigues_align_strict`` to get
    ``AntiparallelInput`` instead.
    """
    a = as_unit(n1, "n1")
    b = as_unit(n2, "n2")
    c = float(np.clip(np.dot(a, b), -1.0, 1.0))
    if c < -1.0 + 1e-9:
        axis = antiparallel_axis(a)
        theta = math.pi
    else:
        cross = np.cross(a, b)
        s = float(np.linalg.norm(cross))
        if s < 1e-15:
            return np.eye(3)
        axis = cross / s
        theta = math.acos(c)
    k = skew(axis)
    r = np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)
    # acos loses precision near 0 and pi; a final polar step keeps R exact.
    u, _, vt = np.linalg.svd(r)
    return u @ vt


def rodrigues_align_strict(n1: Sequence[float], n2: Sequence[float]) -> np.ndarray:
    a = as_unit(n1, "n1")
    b = as_unit(n2, "n2")
    if float(np.dot(a, b)) < -1.0 + 1e-9:
        raise AntiparallelInput("n1 and n2 are antiparallel; rotation axis is undefined")
    return rodrigues_align(a, b)


def angle_error(estimated: Sequence[float], truth: Sequence[float]) -> float:
    """Angle between two unit vectors, in degrees, in [0, 180]."""
    a = as_unit(estimated, "estimated")
    b = as_unit(truth, "truth")
    return math.degrees(math.acos(float(np.clip(np.dot(a, b), -1.0, 1.0))))


def angle_error_many(estimated: np.ndarray, truth: Sequence[float]) -> np.ndarray:
    est = np.asarray(estimated, dtype=float)
    est = est / np.linalg.norm(est, axis=-1, keepdims=True)
    b = as_unit(truth, "truth")
    return np.degrees(np.arccos(np.clip(est @ b, -1.0, 1.0)))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation (unit quaternion from four normals)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_transform(rng: np.random.Generator, scale: float = 100.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-scale, scale, size=3))


def perpendicular_unit(n: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random unit vector orthogonal to ``n``."""
    n = normalize(n)
    while True:
        v = rng.normal(size=3)
        v -= np.dot(v, n) * n
        norm = np.linalg.norm(v)
        if norm > 1e-9:
            return v / norm
