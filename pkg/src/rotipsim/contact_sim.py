"""Closed-loop two-finger contact trials against the geometric contact oracle.

The plant is a kinematic end-effector carrying two fingertips spaced
``finger_spacing`` mm apart along its x-axis, pointing along its -z axis,
above a rigid contact plane. Commands are applied exactly
(``pose <- pose * exp(twist)``); a fingertip pressed deeper than
``max_press`` trips the emergency stop.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .control import (
    ControlGains,
    ControllerState,
    Observation,
    Phase,
    TICK_S,
    contact_classifier,
    control_step,
    precontact_pose,
    trace_record,
)
from .geometry import (
    RigidTransform,
    as_unit,
    axis_angle_matrix,
    compose,
    normalize,
    perpendicular_unit,
    rodrigues_align,
    rot_x,
    se3_exp,
)
from .oracle import ContactMask, ContactScene, MaskNoiseParams, NO_MASK_NOISE, corrupt_mask, contact_edge, render_contact_mask
from .planefit import FORCE_NOISE_DEG, VISION_NOISE_DEG, folded_normal_sigma, force_plane_baseline, ransac_plane, vision_plane_baseline
from .sensor import CameraIntrinsics, SensorGeometry, backproject_contour


class Method(enum.Enum):
    VISION = "Vision"
    VISION_FORCE_WA = "VisionForceWA"
    VISION_FORCE = "VisionForce"
    VISION_FORCE_TACTILE = "VisionForceTactile"

    @classmethod
    def parse(cls, name: str) -> Method:
        for m in cls:
            if m.value.lower() == name.lower() or m.name.lower() == name.lower():
                return m
        raise ValueError(f"unknown contact method {name!r}")


@dataclass(frozen=True)
class GripperModel:
    intrinsics: CameraIntrinsics = CameraIntrinsics()
    geometry: SensorGeometry = SensorGeometry()
    finger_spacing: float = 20.0
    indentation: float = 0.2
    max_press: float = 3.0

    def mounts(self) -> tuple[RigidTransform, RigidTransform]:
        """Sensor frames in the end-effector frame (camera axis along -z_E)."""
        half = self.finger_spacing / 2.0
        flip = rot_x(math.pi)
        return (RigidTransform(flip, np.array([half, 0.0, 0.0])),
                RigidTransform(flip, np.array([-half, 0.0, 0.0])))

    @property
    def reach(self) -> float:
        """Distance from the end-effector origin to the fingertip apex plane."""
        return self.geometry.o_z + self.geometry.r


@dataclass(frozen=True, eq=False)
class ContactWorld:
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    offset: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "normal", as_unit(self.normal, "plane normal"))

    @classmethod
    def tilted(cls, tilt_deg: float) -> ContactWorld:
        """Support surface tilted about the world x-axis."""
        return cls(axis_angle_matrix((1.0, 0.0, 0.0), math.radians(tilt_deg)) @ np.array([0.0, 0.0, 1.0]))


@dataclass(frozen=True, eq=False)
class FingerReading:
    penetration: float
    mask: ContactMask | None

    @property
    def pixels(self) -> int:
        return 0 if self.mask is None else self.mask.pixel_count


def _sub_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([abs(int(p)) for p in parts]).generate_state(1)[0])


def read_fingers(pose: RigidTransform, model: GripperModel, world: ContactWorld,
                 noise: MaskNoiseParams = NO_MASK_NOISE, seed: int = 0,
                 tick: int = 0) -> tuple[FingerReading, FingerReading]:
    out = []
    for i, mount in enumerate(model.mounts()):
        scene = ContactScene(compose(pose, mount), world.normal, world.offset, model.indentation)
        pen = scene.penetration(model.geometry)
        mask = None
        if pen >= model.indentation:
            mask = render_contact_mask(scene, model.intrinsics, model.geometry)
            mask = corrupt_mask(mask, noise, _sub_seed(seed, tick, i))
        out.append(FingerReading(pen, mask))
    return out[0], out[1]


def estimate_contact_normal(mask: ContactMask, model: GripperModel, mount: RigidTransform,
                            seed: int = 0) -> np.ndarray:
    """Tactile plane estimate for one finger, returned in the end-effector frame."""
    bp = backproject_contour(contact_edge(mask), model.intrinsics, model.geometry)
    est = ransac_plane(bp.points, seed=seed)
    return mount.rotation @ est.normal


@dataclass(frozen=True, eq=False)
class TrialSetup:
    """One contact trial: the true grasp pose and the vision estimate of it."""

    true_pose: RigidTransform
    vision_pose: RigidTransform
    world: ContactWorld
    seed: int


def ideal_grasp_pose(world: ContactWorld, model: GripperModel, yaw: float = 0.0,
                     anchor: np.ndarray | None = None) -> RigidTransform:
    """End-effector pose with z along the plane normal and both apexes on the plane."""
    n = world.normal
    x0 = normalize(rodrigues_align((0.0, 0.0, 1.0), n) @ np.array([math.cos(yaw), math.sin(yaw), 0.0]))
    y0 = np.cross(n, x0)
    r = np.column_stack([x0, y0, n])
    p = world.offset * n if anchor is None else anchor
    return RigidTransform(r, p + model.reach * n)


def sample_trial(seed: int, world: ContactWorld, model: GripperModel, *,
                 vision_noise_deg: float = VISION_NOISE_DEG, max_tilt_deg: float | None = None,
                 z_noise_mm: float = 1.0, vision_press: float = 0.5) -> TrialSetup:
    """Draw a vision pose estimate around the true grasp pose.

    With ``max_tilt_deg`` the orientation error is uniform in
    [-max_tilt_deg, max_tilt_deg] about a random in-plane axis; otherwise it
    follows the folded-normal vision model with mean ``vision_noise_deg``.
    The vision target aims ``vision_press`` mm into the surface, with
    Gaussian depth error ``z_noise_mm``.
    """
    rng = np.random.default_rng(seed)
    yaw = rng.uniform(-math.pi, math.pi)
    truth = ideal_grasp_pose(world, model, yaw)
    axis = perpendicular_unit(np.array([0.0, 0.0, 1.0]), rng)
    if max_tilt_deg is not None:
        angle = math.radians(rng.uniform(-max_tilt_deg, max_tilt_deg))
    else:
        angle = math.radians(abs(rng.normal(0.0, folded_normal_sigma(vision_noise_deg)))) if vision_noise_deg > 0 else 0.0
    dz = rng.normal(0.0, z_noise_mm) if z_noise_mm > 0 else 0.0
    r_err = axis_angle_matrix(axis, angle)
    vision = RigidTransform(truth.rotation @ r_err,
                            truth.translation - (vision_press + dz) * world.normal)
    return TrialSetup(truth, vision, world, seed)


@dataclass(frozen=True, eq=False)
class ContactTrialResult:
    method: Method
    seed: int
    one_finger: bool
    two_finger: bool
    adjust_rounds: int
    ticks: int
    failure: str | None
    final_pose: RigidTransform
    trace: list[dict[str, Any]] = field(default_factory=list)

    @property
    def elapsed(self) -> float:
        return self.ticks * TICK_S


def _count(readings: tuple[FingerReading, FingerReading], model: GripperModel, gains: ControlGains) -> int:
    return sum(contact_classifier(r.pixels, gains.contact_pixels) for r in readings)


def run_contact_loop(setup: TrialSetup, target: RigidTransform, model: GripperModel,
                     gains: ControlGains, noise: MaskNoiseParams = NO_MASK_NOISE,
                     max_ticks: int = 3000, record: bool = False) -> tuple[ControllerState, RigidTransform, list[dict[str, Any]], bool]:
    """Run the controller until contact is established or the loop fails.

    Returns ``(final_state, final_pose, trace, emergency_stop)``.
    """
    pose = compose(precontact_pose(target, gains.precontact_offset),
                   RigidTransform.from_translation(0.0, 0.0, 30.0))
    state = ControllerState.start(target)
    mounts = model.mounts()
    trace: list[dict[str, Any]] = []
    for _ in range(max_ticks):
        readings = read_fingers(pose, model, setup.world, noise, setup.seed, state.tick)
        if max(r.penetration for r in readings) > model.max_press:
            return state, pose, trace, True
        pixels = tuple(r.pixels for r in readings)
        in_contact = [contact_classifier(p, gains.contact_pixels) for p in pixels]
        normal = None
        if state.phase is Phase.PRECONTACT and sum(in_contact) == 1:
            i = in_contact.index(True)
            normal = estimate_contact_normal(readings[i].mask, model, mounts[i], seed=_sub_seed(setup.seed, state.tick, 7))
        obs = Observation(pose, pixels, normal)
        state, cmd = control_step(state, gains, obs)
        if record:
            trace.append(trace_record(state, cmd))
        if state.terminal or state.phase >= Phase.FEEDING:
            break
        pose = compose(pose, se3_exp(cmd.twist))
    return state, pose, trace, False


def fused_force_target(setup: TrialSetup, seed: int, vision_noise_deg: float = VISION_NOISE_DEG,
                       force_noise_deg: float = FORCE_NOISE_DEG) -> RigidTransform:
    """Re-orient the vision target with an inverse-variance blend of the vision
    and force normal estimates."""
    n_vision = setup.vision_pose.rotation[:, 2]
    n_force = force_plane_baseline((setup.world.normal, setup.world.offset), force_noise_deg, seed).normal
    wv = 1.0 / max(vision_noise_deg, 1e-9) ** 2
    wf = 1.0 / max(force_noise_deg, 1e-9) ** 2
    fused = normalize(wv * n_vision + wf * n_force)
    local = setup.vision_pose.rotation.T @ fused
    return compose(setup.vision_pose, RigidTransform.from_rotation(rodrigues_align((0.0, 0.0, 1.0), local)))


def run_contact_trial(method: Method, setup: TrialSetup, model: GripperModel = GripperModel(),
                      gains: ControlGains = ControlGains(), noise: MaskNoiseParams = NO_MASK_NOISE,
                      record: bool = False) -> ContactTrialResult:
    if method is Method.VISION:
        pose = setup.vision_pose
        readings = read_fingers(pose, model, setup.world, noise, setup.seed, 0)
        if max(r.penetration for r in readings) > model.max_press:
            return ContactTrialResult(method, setup.seed, False, False, 0, 0, "emergency_stop", pose)
        n = _count(readings, model, gains)
        return ContactTrialResult(method, setup.seed, n >= 1, n == 2, 0, 0, None, pose)

    if method is Method.VISION_FORCE_TACTILE:
        loop_gains = gains if gains.tactile_adjust else _with(gains, tactile_adjust=True)
        target = setup.vision_pose
    else:
        loop_gains = _with(gains, tactile_adjust=False)
        target = setup.vision_pose
        if method is Method.VISION_FORCE:
            target = fused_force_target(setup, _sub_seed(setup.seed, 11))

    state, pose, trace, estop = run_contact_loop(setup, target, model, loop_gains, noise, record=record)
    if estop:
        return ContactTrialResult(method, setup.seed, False, False, state.adjust_rounds, state.tick,
                                  "emergency_stop", pose, trace)
    readings = read_fingers(pose, model, setup.world, noise, setup.seed, state.tick)
    n = _count(readings, model, loop_gains)
    return ContactTrialResult(method, setup.seed, n >= 1, n == 2, state.adjust_rounds, state.tick,
                              state.failure, pose, trace)


def _with(gains: ControlGains, **changes: Any) -> ControlGains:
    from dataclasses import replace

    return replace(gains, **changes)
