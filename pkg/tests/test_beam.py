from __future__ import annotations

import math
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from rotipsim.beam import (
    BeamSpec,
    Constant,
    CornerLinear,
    DeflectionCurve,
    bending_moment,
    corner_case2,
    default_curve,
    default_location_specs,
    inertia_moment,
    location_report,
    min_squeeze_force,
)
from rotipsim.errors import Infeasible, SingularSlope


def test_inertia_constant():
    assert inertia_moment(BeamSpec(width_profile=Constant(210.0))) == pytest.approx(0.35, rel=1e-12)


def test_inertia_corner_bisector():
    iz = inertia_moment(BeamSpec(width_profile=corner_case2()))
    assert iz == pytest.approx(400 * 0.1**3 / 12, rel=1e-12)
    assert iz == pytest.approx(inertia_moment(BeamSpec(width_profile=Constant(210.0))) / 10.5, rel=1e-12)


def test_inertia_capped_corner():
    # slope 2 capped at 10: ramp to x=5 then flat
    iz = inertia_moment(BeamSpec(width_profile=CornerLinear(2.0, 10.0)))
    assert iz == pytest.approx((25 + 150) * 0.1**3 / 12, rel=1e-12)


def test_inertia_numeric_profile_matches_analytic():
    analytic = inertia_moment(BeamSpec(width_profile=CornerLinear(1.5, 12.0)))
    numeric = inertia_moment(BeamSpec(width_profile=lambda x: min(1.5 * x, 12.0)))
    assert numeric == pytest.approx(analytic, rel=1e-8)


def test_inertia_vanishes_with_thickness():
    assert inertia_moment(BeamSpec(h=1e-6)) < 1e-15


def test_flat_curve_has_no_moment():
    assert bending_moment(DeflectionCurve(0.0, 20.0), 828.0, 0.35, 10.0) == 0.0


def test_small_deflection_apex_moment():
    c = default_curve(20.0)
    expected = 828.0 * 0.35 * 1.0 * (2 * math.pi / 20) ** 2 / 2
    assert bending_moment(c, 828.0, 0.35, 10.0) == pytest.approx(expected, rel=1e-12)


def test_small_deflection_matches_finite_difference():
    c = DeflectionCurve(1.3, 20.0)
    for x in (2.0, 7.5, 10.0, 13.0):
        h = 1e-3
        fd = (c.v(x + h) - 2 * c.v(x) + c.v(x - h)) / h**2
        assert bending_moment(c, 828.0, 0.35, x) == pytest.approx(abs(828.0 * 0.35 * fd), rel=1e-6)


def test_regime_switch_agrees():
    l = 20.0
    below = bending_moment(DeflectionCurve(l / 10, l), 828.0, 0.35, l / 2)
    above = bending_moment(DeflectionCurve(l / 10 * (1 + 1e-9), l), 828.0, 0.35, l / 2)
    assert DeflectionCurve(l / 10 * (1 + 1e-9), l).large
    assert above == pytest.approx(below, rel=0.05)


def test_large_deflection_off_apex_is_graph_curvature():
    c = DeflectionCurve(4.0, 20.0)
    x = 3.0
    k = c.d2v(x) / (1 + c.dv(x) ** 2) ** 1.5
    assert bending_moment(c, 1.0, 1.0, x) == pytest.approx(abs(k), rel=1e-5)


def test_large_deflection_singular_at_inflection():
    c = DeflectionCurve(4.0, 20.0)
    with pytest.raises(SingularSlope):
        # the slope angle is symmetric about the inflection x = l/4 to first order
        bending_moment(c, 1.0, 1.0, 5.0)


def test_moment_rejects_off_span():
    with pytest.raises(ValueError):
        bending_moment(default_curve(), 1.0, 1.0, 21.0)


def test_massless_unbent_needs_no_force():
    spec = BeamSpec(m1=0.0, m2=0.0)
    assert min_squeeze_force(spec, default_curve()).F_min > 0
    zero = min_squeeze_force(replace(spec, E=1e-30), default_curve())
    assert zero.F_min == pytest.approx(0.0, abs=1e-25)


def test_closed_form_force():
    spec = BeamSpec()
    c = default_curve()
    res = min_squeeze_force(spec, c)
    m1 = 828.0 * 0.35 * 1.0 * (2 * math.pi / 20) ** 2 / 2
    expected = (0.1 * 0.005 * 9.81 + m1 / 1.0) / 0.4
    assert res.F_min == pytest.approx(expected, rel=1e-12)
    assert res.torque_bound == pytest.approx(8.0 * 0.5 * expected, rel=1e-12)


def test_infeasible_friction():
    with pytest.raises(Infeasible):
        min_squeeze_force(BeamSpec(mu_s1=0.1, mu_k2=0.1), default_curve())


def test_default_ordering():
    rep = location_report(default_location_specs())
    assert [r.location for r in rep.rows] == ["center", "edge", "corner_case1", "corner_case2"]
    assert rep.verdict == "strict"
    assert rep.ratio("center", "corner_case2") >= 2


def test_report_tie_and_infeasible():
    spec = BeamSpec()
    assert location_report([("a", spec), ("b", spec)]).verdict == "tie"
    swapped = [(n, replace(s, mu_s1=0.1, mu_k2=0.5)) for n, s in default_location_specs()]
    rep = location_report(swapped)
    assert rep.verdict == "infeasible"
    assert not any(r.feasible for r in rep.rows)
    with pytest.raises(ValueError):
        location_report([("a", spec)])


def test_report_violated():
    specs = default_location_specs()
    assert location_report(specs[::-1]).verdict == "violated"


def test_report_csv():
    text = location_report(default_location_specs()).to_csv()
    lines = text.split("\n")
    assert lines[0] == "location,F_min_N,I_z,M1,feasible"
    assert "\r" not in text and len(lines) == 6 and lines[-1] == ""
    assert lines[1].startswith("center,") and lines[1].endswith(",true")


def test_spec_validation():
    with pytest.raises(ValueError):
        BeamSpec(h=0)
    with pytest.raises(ValueError):
        BeamSpec(m2=-1)
    with pytest.raises(ValueError):
        DeflectionCurve(-1.0, 20.0)


pos = st.floats(0.01, 10.0)


@given(st.floats(0.01, 1.0), st.floats(1.0, 300.0), st.floats(0.1, 5.0))
def test_inertia_scaling(h, w, k):
    base = inertia_moment(BeamSpec(h=h, width_profile=Constant(w)))
    assert inertia_moment(BeamSpec(h=2 * h, width_profile=Constant(w))) == pytest.approx(8 * base, rel=1e-12)
    assert inertia_moment(BeamSpec(h=h, width_profile=Constant(k * w))) == pytest.approx(k * base, rel=1e-12)
    corner = inertia_moment(BeamSpec(h=h, width_profile=CornerLinear(w / 20)))
    assert inertia_moment(BeamSpec(h=h, width_profile=CornerLinear(k * w / 20))) == pytest.approx(k * corner, rel=1e-12)


@given(st.floats(0.0, 0.5), st.floats(0.0, 0.02), st.floats(0.0, 0.02), st.floats(0.1, 2.0))
def test_force_monotonicity(mu_k2, m1, m2, delta):
    spec = BeamSpec(mu_k2=mu_k2, m1=m1, m2=m2, mu_s1=0.6)
    c = DeflectionCurve(delta, 20.0)
    f = min_squeeze_force(spec, c).F_min
    assert min_squeeze_force(replace(spec, mu_k2=mu_k2 + 0.05), c).F_min >= f
    assert min_squeeze_force(replace(spec, m2=m2 + 0.01), c).F_min >= f
    assert min_squeeze_force(replace(spec, mu_s1=0.7), c).F_min <= f
    # stiffer sheet means a larger moment for the same curve
    assert min_squeeze_force(replace(spec, E=spec.E * 2), c).F_min >= f


@given(st.lists(st.floats(1.0, 400.0), min_size=2, max_size=5, unique=True))
def test_ordering_follows_width_area(widths):
    specs = [(str(w), BeamSpec(width_profile=Constant(w))) for w in widths]
    rep = location_report(specs)
    by_area = sorted(widths, reverse=True)
    by_force = [float(r.location) for r in sorted(rep.rows, key=lambda r: -r.F_min)]
    assert by_force == by_area
