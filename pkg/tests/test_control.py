from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rotipsim.contact_sim import ContactWorld, GripperModel, Method, TrialSetup, ideal_grasp_pose, run_contact_trial
from rotipsim.control import (
    ControlGains,
    ControllerState,
    Gripper,
    Observation,
    Phase,
    TRANSITIONS,
    apply_local_adjustment,
    contact_classifier,
    continuous_adjust,
    control_step,
    precontact_pose,
    trace_record,
    write_trace_jsonl,
)
from rotipsim.errors import InfeasibleStack
from rotipsim.geometry import RigidTransform, compose, invert, random_transform, rodrigues_align, rot_y, se3_exp
from rotipsim.oracle import pressed_scene, render_contact_mask
from rotipsim.sensor import CameraIntrinsics, SensorGeometry

GAINS = ControlGains()


def precontact_state(target: RigidTransform, **kw) -> ControllerState:
    return ControllerState(Phase.PRECONTACT, target, **kw)


def test_feedforward_when_on_target():
    t = random_transform(np.random.default_rng(0))
    state, cmd = control_step(precontact_state(t), GAINS, Observation(t))
    assert np.allclose(cmd.twist, [0, 0, -0.4, 0, 0, 0])
    assert cmd.gripper is Gripper.HOLD
    assert state.phase is Phase.PRECONTACT
    # the reference descends with the command, so the next tick is feedforward again
    nxt = compose(t, se3_exp(cmd.twist))
    _, cmd2 = control_step(state, GAINS, Observation(nxt))
    assert np.allclose(cmd2.twist, [0, 0, -0.4, 0, 0, 0])


def test_two_contacts_start_feeding():
    t = RigidTransform.identity()
    state, cmd = control_step(precontact_state(t), GAINS, Observation(t, (600, 900)))
    assert state.phase is Phase.FEEDING and state.contact_count == 2
    assert np.all(cmd.twist == 0) and cmd.gripper is Gripper.HOLD


def test_one_contact_rotates_target():
    t = random_transform(np.random.default_rng(1))
    a = math.radians(10)
    normal = np.array([math.sin(a), 0.0, math.cos(a)])
    state, cmd = control_step(precontact_state(t), GAINS, Observation(t, (800, 0), normal))
    expected = compose(t, RigidTransform.from_rotation(rodrigues_align((0, 0, 1), normal)))
    assert state.phase is Phase.ADJUST_POSE
    assert state.adjust_rounds == 1
    assert state.target.allclose(expected, atol=1e-12)
    assert np.all(cmd.twist == 0)


def test_one_contact_needs_normal():
    t = RigidTransform.identity()
    with pytest.raises(ValueError):
        control_step(precontact_state(t), GAINS, Observation(t, (800, 0)))


def test_ten_degree_error_converges_in_one_adjustment():
    model = GripperModel()
    world = ContactWorld()
    truth = ideal_grasp_pose(world, model)
    # vision pose tilted 10 deg about y: one fingertip lands first
    vision = RigidTransform(truth.rotation @ rot_y(math.radians(10)), truth.translation - 0.5 * world.normal)
    res = run_contact_trial(Method.VISION_FORCE_TACTILE, TrialSetup(truth, vision, world, 0), model)
    assert res.two_finger
    assert res.adjust_rounds == 1


def test_adjust_limit_fails():
    t = RigidTransform.identity()
    state = precontact_state(t, adjust_rounds=5)
    state, _ = control_step(state, GAINS, Observation(t, (800, 0), np.array([0, 0, 1.0])))
    assert state.phase is Phase.FAILED and state.failure == "adjust_limit"


def test_stall_is_detected():
    target = RigidTransform.identity()
    stuck = RigidTransform.from_translation(5.0, 0.0, 0.0)
    state = precontact_state(target)
    for _ in range(200):
        state, _ = control_step(state, GAINS, Observation(stuck))
        if state.terminal:
            break
    assert state.phase is Phase.FAILED and state.failure == "stall"


def test_feeding_to_done():
    state = ControllerState(Phase.FEEDING, RigidTransform.identity(), contact_count=2)
    obs = Observation(RigidTransform.identity())
    state, cmd = control_step(state, GAINS, obs)
    assert state.phase is Phase.FEEDING
    state, cmd = control_step(state, GAINS, Observation(RigidTransform.identity(), feed_complete=True))
    assert state.phase is Phase.GRASP and cmd.gripper is Gripper.CLOSE
    state, cmd = control_step(state, GAINS, obs)
    assert state.phase is Phase.DONE
    again, cmd = control_step(state, GAINS, obs)
    assert again is state and np.all(cmd.twist == 0)


def test_state_invariants():
    with pytest.raises(ValueError):
        ControllerState(Phase.PRECONTACT, RigidTransform.identity(), contact_count=2)
    with pytest.raises(ValueError):
        ControllerState(Phase.APPROACH, RigidTransform.identity(), contact_count=3)
    assert Phase.DONE not in TRANSITIONS[Phase.FAILED]
    assert TRANSITIONS[Phase.DONE] == {Phase.DONE}


def test_gain_validation():
    with pytest.raises(ValueError):
        ControlGains(kp=np.zeros(6))
    with pytest.raises(ValueError):
        ControlGains(epsilon=0.0)
    with pytest.raises(ValueError):
        ControlGains(kd=np.ones(5))
    assert np.array_equal(ControlGains(kp=2.0).kp, np.full(6, 2.0))


def test_contact_classifier():
    assert not contact_classifier(0, 500)
    assert contact_classifier(500, 500)
    assert not contact_classifier(499, 500)
    with pytest.raises(ValueError):
        contact_classifier(10, 0)


def test_default_threshold_registers_shallow_indentation():
    k, g = CameraIntrinsics(), SensorGeometry()
    # fingertip indented 0.2 mm into the surface
    m = render_contact_mask(pressed_scene(g, 0.0, 0.2, indentation=1e-6), k, g)
    assert contact_classifier(m.pixel_count)


def test_continuous_adjust_examples():
    a = continuous_adjust(0, 0.1, 20)
    assert (a.beta, a.dx, a.dz) == (0.0, 0.0, 0.0)
    a = continuous_adjust(10, 0.1, 20)
    # independent evaluation: asin(0.05) by series, cos/sin from it
    x = 0.05
    beta = x + x**3 / 6 + 3 * x**5 / 40 + 5 * x**7 / 112
    assert a.beta == pytest.approx(beta, abs=1e-10)
    assert a.beta == pytest.approx(0.050021, abs=1e-6)
    assert math.degrees(a.beta) == pytest.approx(2.866, abs=1e-3)
    assert a.dx == pytest.approx(-10 * (1 - math.sqrt(1 - x * x)), abs=1e-12)
    assert a.dx == pytest.approx(-0.01251, abs=1e-5)
    assert a.dz == pytest.approx(-0.5, abs=1e-12)
    with pytest.raises(InfeasibleStack):
        continuous_adjust(200, 0.1, 20)
    with pytest.raises(ValueError):
        continuous_adjust(-1, 0.1, 20)


def test_local_adjustment_examples():
    t = random_transform(np.random.default_rng(3))
    assert apply_local_adjustment(t, (0.0, 0.0, 0.0)).allclose(t, atol=1e-15)
    out = apply_local_adjustment(RigidTransform.identity(), (math.pi / 2, 0.0, 0.0))
    assert np.allclose(out.rotation, rot_y(math.pi / 2), atol=1e-15)
    assert np.allclose(out.translation, 0.0)


@given(st.integers(0, 2**32 - 1), st.floats(0, 0.5), st.floats(-1, 1), st.floats(-1, 1))
def test_local_adjustment_commutes_with_relabeling(s, beta, dx, dz):
    rng = np.random.default_rng(s)
    pose, relabel = random_transform(rng), random_transform(rng)
    a = compose(relabel, apply_local_adjustment(pose, (beta, dx, dz)))
    b = apply_local_adjustment(compose(relabel, pose), (beta, dx, dz))
    assert a.allclose(b, atol=1e-9)


@given(st.floats(0.01, 0.5), st.floats(5, 40))
def test_continuous_adjust_monotone(h, l):
    n_max = int(math.ceil(l / h)) - 1
    ns = sorted({0, 1, n_max // 2, n_max})
    adj = [continuous_adjust(n, h, l) for n in ns]
    betas = [a.beta for a in adj]
    assert all(b2 > b1 for b1, b2 in zip(betas, betas[1:]))
    assert all(a.dx <= 0 and a.dz <= 0 for a in adj)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.05))
def test_exactly_one_branch_fires(s, scale):
    rng = np.random.default_rng(s)
    target = random_transform(rng)
    pose = compose(target, se3_exp(np.concatenate([rng.normal(size=3) * scale, np.zeros(3)])))
    state, cmd = control_step(precontact_state(target), GAINS, Observation(pose))
    norm = np.linalg.norm(state.last_error[:3])
    is_ff = np.allclose(cmd.twist, GAINS.v_ff)
    assert is_ff == (norm <= GAINS.epsilon)


def test_pd_law_first_tick_has_no_derivative():
    target = RigidTransform.identity()
    pose = RigidTransform.from_translation(0.3, 0.0, 0.0)
    state, cmd = control_step(precontact_state(target), GAINS, Observation(pose))
    assert np.allclose(cmd.twist, [-0.3, 0, 0, 0, 0, 0])
    pose2 = RigidTransform.from_translation(0.2, 0.0, 0.0)
    _, cmd2 = control_step(state, GAINS, Observation(pose2))
    # K_p e + K_d (e - e_prev) = -0.2 + 0.1 * 0.1
    assert np.allclose(cmd2.twist, [-0.19, 0, 0, 0, 0, 0])


def test_speed_clamp():
    pose = RigidTransform.from_translation(50.0, 0.0, 0.0)
    _, cmd = control_step(precontact_state(RigidTransform.identity()), GAINS, Observation(pose))
    assert np.linalg.norm(cmd.twist[:3]) == pytest.approx(GAINS.max_step_mm)


def test_approach_reaches_precontact():
    target = random_transform(np.random.default_rng(5))
    pose = compose(precontact_pose(target, 20.0), RigidTransform.from_translation(3, -2, 10))
    state = ControllerState.start(target)
    phases = []
    for _ in range(500):
        state, cmd = control_step(state, GAINS, Observation(pose))
        phases.append(state.phase)
        if state.phase is not Phase.APPROACH:
            break
        pose = compose(pose, se3_exp(cmd.twist))
    assert state.phase is Phase.PRECONTACT
    assert np.linalg.norm(compose(invert(pose), precontact_pose(target, 20.0)).translation) <= GAINS.epsilon


def test_trace_jsonl(tmp_path):
    t = RigidTransform.identity()
    state, cmd = control_step(precontact_state(t), GAINS, Observation(t))
    rec = trace_record(state, cmd)
    assert set(rec) == {"tick", "phase", "e_T", "N", "command"}
    path = tmp_path / "trace.jsonl"
    write_trace_jsonl([rec, rec], str(path))
    lines = path.read_text().splitlines()
    assert len(lines) == 2 and json.loads(lines[0])["phase"] == "PreContact"
