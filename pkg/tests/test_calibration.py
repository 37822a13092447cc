from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rotipsim.calibration import (
    CalibrationSet,
    calibrate,
    calibrate_xy,
    calibrate_z,
    check_unimodal,
    golden_section,
    make_calibration_set,
    z_objective,
)
from rotipsim.errors import AmbiguousMinimum, NoConvergence
from rotipsim.oracle import DEFAULT_MASK_NOISE
from rotipsim.sensor import CameraIntrinsics, SensorGeometry

K = CameraIntrinsics()
NOMINAL = SensorGeometry()


def test_golden_section_quadratic():
    x, n = golden_section(lambda v: (v - 1.234) ** 2, -3.0, 3.0, tol=1e-6)
    assert x == pytest.approx(1.234, abs=1e-6)
    # interval shrinks by 1/phi per evaluation
    assert n == 2 + math.ceil(math.log(6.0 / 1e-6) / math.log(1 / 0.6180339887))


def test_golden_section_budget():
    with pytest.raises(NoConvergence):
        golden_section(abs, -1.0, 1.0, tol=1e-12, max_iter=10)


def test_check_unimodal():
    check_unimodal(lambda z: (z - 1.0) ** 2, -3.0, 3.0)
    with pytest.raises(AmbiguousMinimum):
        check_unimodal(lambda z: 0.0, -3.0, 3.0)


def test_zero_offsets():
    truth = NOMINAL
    rep = calibrate(make_calibration_set(truth, K), K, NOMINAL)
    assert max(rep.errors) < 0.05


def test_lateral_offsets_recovered():
    truth = NOMINAL.with_offsets(o_x=1.0, o_y=-0.5)
    xy = calibrate_xy(make_calibration_set(truth, K), K, NOMINAL.with_offsets(o_z=truth.o_z))
    assert abs(xy.o_x - 1.0) < 0.05 and abs(xy.o_y + 0.5) < 0.05


def test_height_offset_recovered():
    truth = NOMINAL.with_offsets(o_z=12.0)
    cal = make_calibration_set(truth, K)
    z = calibrate_z(cal, K, NOMINAL, check=True)
    assert abs(z.o_z - 12.0) < 0.05
    assert z.residual_deg < 0.2


def test_preconditions():
    full = make_calibration_set(NOMINAL, K)
    with pytest.raises(ValueError):
        calibrate_xy(CalibrationSet((), full.tilted_masks), K, NOMINAL)
    only_pos = make_calibration_set(NOMINAL, K, angles=(45.0,))
    with pytest.raises(ValueError):
        calibrate_z(only_pos, K, NOMINAL)


def test_z_objective_minimum_at_truth():
    truth = NOMINAL.with_offsets(o_x=0.4, o_z=10.7)
    cal = make_calibration_set(truth, K)
    at_truth = z_objective(cal, K, truth)
    for dz in np.linspace(-3.0, 3.0, 13):
        if abs(dz) >= 0.5:
            assert at_truth <= z_objective(cal, K, truth.with_offsets(o_z=max(0.0, truth.o_z + dz)))


def test_report_json():
    truth = NOMINAL.with_offsets(o_x=0.3)
    rep = calibrate(make_calibration_set(truth, K), K, NOMINAL)
    d = json.loads(rep.to_json())
    assert set(d) == {"offsets", "residuals", "iterations", "true_offsets", "abs_errors"}
    assert d["iterations"]["rounds"] == rep.rounds >= 2
    assert d["true_offsets"]["o_x"] == 0.3


def test_noisy_recovery_is_graceful():
    truth = NOMINAL.with_offsets(o_x=0.8, o_y=-0.6, o_z=11.0)
    cal = make_calibration_set(truth, K, noise=DEFAULT_MASK_NOISE, seed=3, per_angle=3)
    rep = calibrate(cal, K, NOMINAL)
    assert max(rep.errors) < 0.3


@settings(max_examples=8)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_round_trip(dx, dy, dz):
    truth = NOMINAL.with_offsets(o_x=dx, o_y=dy, o_z=NOMINAL.o_z + dz)
    rep = calibrate(make_calibration_set(truth, K), K, NOMINAL)
    assert max(rep.errors) < 0.05
