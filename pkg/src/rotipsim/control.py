"""Two-finger contact controller and the per-sheet continuous adjustment.

``control_step`` is a pure function ``(state, gains, observation) ->
(state, command)``. The loop it implements:

    Approach    PD to the pre-contact pose (target shifted +offset along its z)
    PreContact  no contact: PD towards the target while the translational
                error exceeds epsilon, feedforward along local -z otherwise;
                one finger in contact: rotate the target so its z-axis matches
                the estimated contact normal, then AdjustPose;
                two fingers in contact: Feeding
    AdjustPose  PD back to the refined pre-contact pose, then PreContact
    Feeding     hold until the feed reports completion, then Grasp
    Grasp       close the gripper, then Done

Commands are body-frame twists applied once per control tick; the gains are
therefore per tick (K_p = 1 closes the whole error in one tick before the
speed clamp).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import InfeasibleStack
from .geometry import RigidTransform, compose, pose_error, rodrigues_align, rot_y, se3_exp

EPSILON = 0.02  # mm, threshold on the translational part of the pose error
TICK_S = 0.033  # 30 Hz tactile frame rate
DEFAULT_CONTACT_PIXELS = 500
PRECONTACT_OFFSET = 20.0  # mm
MAX_ADJUST_ROUNDS = 5


class Phase(enum.IntEnum):
    APPROACH = 0
    PRECONTACT = 1
    ADJUST_POSE = 2
    FEEDING = 3
    GRASP = 4
    DONE = 5
    FAILED = 6

    @property
    def label(self) -> str:
        return {
            Phase.APPROACH: "Approach",
            Phase.PRECONTACT: "PreContact",
            Phase.ADJUST_POSE: "AdjustPose",
            Phase.FEEDING: "Feeding",
            Phase.GRASP: "Grasp",
            Phase.DONE: "Done",
            Phase.FAILED: "Failed",
        }[self]


TRANSITIONS: dict[Phase, frozenset[Phase]] = {
    Phase.APPROACH: frozenset({Phase.APPROACH, Phase.PRECONTACT, Phase.FAILED}),
    Phase.PRECONTACT: frozenset({Phase.PRECONTACT, Phase.ADJUST_POSE, Phase.FEEDING, Phase.FAILED}),
    Phase.ADJUST_POSE: frozenset({Phase.ADJUST_POSE, Phase.PRECONTACT, Phase.FAILED}),
    Phase.FEEDING: frozenset({Phase.FEEDING, Phase.GRASP, Phase.FAILED}),
    Phase.GRASP: frozenset({Phase.DONE, Phase.FAILED}),
    Phase.DONE: frozenset({Phase.DONE}),
    Phase.FAILED: frozenset({Phase.FAILED}),
}


class Gripper(enum.Enum):
    HOLD = "Hold"
    CLOSE = "Close"


@dataclass(frozen=True, eq=False)
class ControlGains:
    kp: np.ndarray = field(default_factory=lambda: np.ones(6))
    kd: np.ndarray = field(default_factory=lambda: np.full(6, 0.1))
    epsilon: float = EPSILON
    v_ff: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -0.4, 0.0, 0.0, 0.0]))
    max_step_mm: float = 1.0
    max_step_rad: float = 0.05
    precontact_offset: float = PRECONTACT_OFFSET
    contact_pixels: int = DEFAULT_CONTACT_PIXELS
    max_adjust_rounds: int = MAX_ADJUST_ROUNDS
    tactile_adjust: bool = True
    stall_window: int = 30
    stall_progress: float = 0.01  # mm of error reduction required per window
    max_feedforward_ticks: int = 150
    rot_epsilon: float = 1e-3  # rad, orientation tolerance for reaching a waypoint

    def __post_init__(self) -> None:
        kp = np.asarray(self.kp, dtype=float).reshape(-1)
        kd = np.asarray(self.kd, dtype=float).reshape(-1)
        if kp.shape == (1,):
            kp = np.full(6, kp[0])
        if kd.shape == (1,):
            kd = np.full(6, kd[0])
        if kp.shape != (6,) or kd.shape != (6,):
            raise ValueError("K_p and K_d must be 6-element diagonals")
        if np.any(kp <= 0) or np.any(kd <= 0):
            raise ValueError("gain diagonals must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_step_mm <= 0 or self.max_step_rad <= 0:
            raise ValueError("speed limits must be positive")
        if self.contact_pixels <= 0:
            raise ValueError("contact pixel threshold must be positive")
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kd", kd)
        object.__setattr__(self, "v_ff", np.asarray(self.v_ff, dtype=float).reshape(6))


@dataclass(frozen=True, eq=False)
class Command:
    twist: np.ndarray
    gripper: Gripper = Gripper.HOLD

    @classmethod
    def hold(cls) -> Command:
        return cls(np.zeros(6), Gripper.HOLD)


@dataclass(frozen=True, eq=False)
class Observation:
    pose: RigidTransform
    contact_pixels: tuple[int, ...] = (0, 0)
    # contact-plane normal estimated from the touching finger, end-effector frame
    contact_normal: np.ndarray | None = None
    feed_complete: bool = False
    dt: float = TICK_S


@dataclass(frozen=True, eq=False)
class ControllerState:
    phase: Phase
    target: RigidTransform
    contact_count: int = 0
    last_error: np.ndarray = field(default_factory=lambda: np.zeros(6))
    prev_error: np.ndarray | None = None
    adjust_rounds: int = 0
    tick: int = 0
    phase_ticks: int = 0
    feedforward_ticks: int = 0
    window_start_norm: float | None = None
    failure: str | None = None

    def __post_init__(self) -> None:
        if self.contact_count not in (0, 1, 2):
            raise ValueError("contact count must be 0, 1 or 2")
        if self.contact_count == 2 and self.phase < Phase.FEEDING:
            raise ValueError("two-finger contact is only valid from Feeding onwards")

    @classmethod
    def start(cls, target: RigidTransform) -> ControllerState:
        return cls(Phase.APPROACH, target)

    @property
    def terminal(self) -> bool:
        return self.phase in (Phase.DONE, Phase.FAILED)


def contact_classifier(mask_pixels: int, threshold: int = DEFAULT_CONTACT_PIXELS) -> bool:
    """True when the contact area reaches ``threshold`` pixels (inclusive)."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return mask_pixels >= threshold


def precontact_pose(target: RigidTransform, offset: float) -> RigidTransform:
    return compose(target, RigidTransform.from_translation(0.0, 0.0, offset))


def _clamp(twist: np.ndarray, gains: ControlGains) -> np.ndarray:
    out = twist.copy()
    tn = float(np.linalg.norm(out[:3]))
    if tn > gains.max_step_mm:
        out[:3] *= gains.max_step_mm / tn
    rn = float(np.linalg.norm(out[3:]))
    if rn > gains.max_step_rad:
        out[3:] *= gains.max_step_rad / rn
    return out


def _pd(err: np.ndarray, prev: np.ndarray | None, gains: ControlGains) -> np.ndarray:
    de = np.zeros(6) if prev is None else err - prev
    return _clamp(gains.kp * err + gains.kd * de, gains)


def _enter(state: ControllerState, phase: Phase, **changes: Any) -> ControllerState:
    if phase not in TRANSITIONS[state.phase]:
        raise AssertionError(f"illegal transition {state.phase.label} -> {phase.label}")
    if phase != state.phase:
        changes.setdefault("prev_error", None)
        changes.setdefault("phase_ticks", 0)
        changes.setdefault("window_start_norm", None)
        changes.setdefault("feedforward_ticks", 0)
    return replace(state, phase=phase, **changes)


def _stalled(state: ControllerState, norm: float, gains: ControlGains) -> tuple[bool, float | None]:
    """Progress check on the translational error over fixed windows of ticks."""
    start = state.window_start_norm
    if start is None:
        return False, norm
    if state.phase_ticks > 0 and state.phase_ticks % gains.stall_window == 0:
        if start - norm < gains.stall_progress:
            return True, start
        return False, norm
    return False, start


def _drive(state: ControllerState, waypoint: RigidTransform, obs: Observation,
           gains: ControlGains, arrived: Phase) -> tuple[ControllerState, Command]:
    err = pose_error(obs.pose, waypoint)
    tnorm = float(np.linalg.norm(err[:3]))
    if tnorm <= gains.epsilon and float(np.linalg.norm(err[3:])) <= gains.rot_epsilon:
        nxt = _enter(state, arrived, last_error=err, contact_count=0)
        return nxt, Command.hold()
    stalled, window = _stalled(state, tnorm, gains)
    if stalled:
        return _enter(state, Phase.FAILED, last_error=err, failure="stall"), Command.hold()
    cmd = _pd(err, state.prev_error, gains)
    nxt = replace(state, last_error=err, prev_error=err, window_start_norm=window,
                  phase_ticks=state.phase_ticks + 1, contact_count=0)
    return nxt, Command(cmd)


def control_step(state: ControllerState, gains: ControlGains,
                 obs: Observation) -> tuple[ControllerState, Command]:
    if state.terminal:
        return state, Command.hold()
    state = replace(state, tick=state.tick + 1)

    if state.phase is Phase.APPROACH:
        return _drive(state, precontact_pose(state.target, gains.precontact_offset), obs, gains,
                      Phase.PRECONTACT)

    if state.phase is Phase.ADJUST_POSE:
        return _drive(state, precontact_pose(state.target, gains.precontact_offset), obs, gains,
                      Phase.PRECONTACT)

    if state.phase is Phase.FEEDING:
        if obs.feed_complete:
            return _enter(state, Phase.GRASP), Command(np.zeros(6), Gripper.CLOSE)
        return replace(state, phase_ticks=state.phase_ticks + 1), Command.hold()

    if state.phase is Phase.GRASP:
        return _enter(state, Phase.DONE), Command(np.zeros(6), Gripper.CLOSE)

    # PreContact: the body of the contact loop
    n = sum(contact_classifier(p, gains.contact_pixels) for p in obs.contact_pixels)
    err = pose_error(obs.pose, state.target)
    if n >= 2:
        return _enter(state, Phase.FEEDING, contact_count=2, last_error=err), Command.hold()
    if n == 1:
        if not gains.tactile_adjust:
            # force-only variants stop at the first contact and proceed
            return _enter(state, Phase.FEEDING, contact_count=1, last_error=err), Command.hold()
        if state.adjust_rounds >= gains.max_adjust_rounds:
            return _enter(state, Phase.FAILED, contact_count=1, last_error=err,
                          failure="adjust_limit"), Command.hold()
        if obs.contact_normal is None:
            raise ValueError("one-finger contact requires a contact-normal estimate")
        r = rodrigues_align((0.0, 0.0, 1.0), obs.contact_normal)
        target = compose(state.target, RigidTransform.from_rotation(r))
        nxt = _enter(state, Phase.ADJUST_POSE, target=target, contact_count=0, last_error=err,
                     adjust_rounds=state.adjust_rounds + 1)
        return nxt, Command.hold()

    tnorm = float(np.linalg.norm(err[:3]))
    if tnorm > gains.epsilon:
        stalled, window = _stalled(state, tnorm, gains)
        if stalled:
            return _enter(state, Phase.FAILED, last_error=err, failure="stall"), Command.hold()
        cmd = _pd(err, state.prev_error, gains)
        return replace(state, contact_count=0, last_error=err, prev_error=err,
                       window_start_norm=window, phase_ticks=state.phase_ticks + 1), Command(cmd)
    if state.feedforward_ticks >= gains.max_feedforward_ticks:
        return _enter(state, Phase.FAILED, last_error=err, failure="stall"), Command.hold()
    # descend past the vision target; the reference moves with the command so PD does not pull back
    ff = _clamp(gains.v_ff, gains)
    return replace(state, target=compose(state.target, se3_exp(ff)), contact_count=0, last_error=err,
                   prev_error=None, phase_ticks=state.phase_ticks + 1,
                   feedforward_ticks=state.feedforward_ticks + 1), Command(ff)


def trace_record(state: ControllerState, cmd: Command) -> dict[str, Any]:
    return {
        "tick": state.tick,
        "phase": state.phase.label,
        "e_T": [round(float(x), 9) for x in state.last_error],
        "N": state.contact_count,
        "command": {"twist": [round(float(x), 9) for x in cmd.twist], "gripper": cmd.gripper.value},
    }


def write_trace_jsonl(records: Iterable[dict[str, Any]], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# --------------------------------------------------------------------------- continuous adjustment


@dataclass(frozen=True)
class LocalAdjustment:
    beta: float  # rad, about local y
    dx: float  # mm, local x
    dz: float  # mm, local z


def continuous_adjust(n: int, h: float, l: float) -> LocalAdjustment:
    """End-effector correction after ``n`` fed sheets of thickness ``h`` with
    finger spacing ``l``: beta = asin(n h / l), dx = -(l/2)(1 - cos beta),
    dz = -(l/2) sin beta."""
    if n < 0:
        raise ValueError("sheet count must be non-negative")
    if not (h > 0 and l > 0):
        raise ValueError("thickness and finger spacing must be positive")
    ratio = n * h / l
    if ratio >= 1.0:
        raise InfeasibleStack(f"stack of {n} x {h} mm does not fit a {l} mm finger gap")
    beta = math.asin(ratio)
    return LocalAdjustment(beta, -(l / 2.0) * (1.0 - math.cos(beta)), -(l / 2.0) * math.sin(beta))


def apply_local_adjustment(pose: RigidTransform, adj: LocalAdjustment | Sequence[float]) -> RigidTransform:
    if not isinstance(adj, LocalAdjustment):
        adj = LocalAdjustment(*adj)
    local = RigidTransform(rot_y(adj.beta), np.array([adj.dx, 0.0, adj.dz]))
    return compose(pose, local)
