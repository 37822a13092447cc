"""Thin-sheet beam model for choosing where to squeeze.

A sheet between the two fingers is treated as a beam of span ``l`` bent into
an arch. Squeezing is feasible when the finger keeps static friction on the
top sheet while the top sheet slides over the one below and still bends.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from scipy import integrate

from .errors import Infeasible, SingularSlope

G = 9.81  # m/s^2
A4_MASS_KG = 0.005  # 80 g/m^2 over 0.0624 m^2


@dataclass(frozen=True)
class Constant:
    w0: float

    def __call__(self, x: float) -> float:
        return self.w0

    def integral(self, l: float) -> float:
        return self.w0 * l


@dataclass(frozen=True)
class CornerLinear:
    """Width growing linearly from a corner, optionally capped at the sheet width."""

    slope: float
    cap: float = math.inf

    def __call__(self, x: float) -> float:
        return min(self.slope * x, self.cap)

    def integral(self, l: float) -> float:
        if self.slope <= 0:
            return 0.0
        x_cap = self.cap / self.slope
        if x_cap >= l:
            return 0.5 * self.slope * l * l
        return 0.5 * self.slope * x_cap * x_cap + self.cap * (l - x_cap)


@dataclass(frozen=True)
class BeamSpec:
    E: float = 828.0  # MPa
    h: float = 0.1  # mm
    l: float = 20.0  # mm
    width_profile: Constant | CornerLinear | Callable[[float], float] = field(default_factory=lambda: Constant(210.0))
    mu_s1: float = 0.5
    mu_k2: float = 0.1
    m1: float = 0.0  # kg
    m2: float = A4_MASS_KG  # kg
    r: float = 8.0  # mm
    g: float = G

    def __post_init__(self) -> None:
        if not (self.E > 0 and self.h > 0 and self.l > 0 and self.r > 0):
            raise ValueError("E, h, l and r must be positive")
        if self.m1 < 0 or self.m2 < 0:
            raise ValueError("masses must be non-negative")
        if self.mu_s1 < 0 or self.mu_k2 < 0:
            raise ValueError("friction coefficients must be non-negative")


def corner_case1(angle_deg: float = 20.0, cap: float = 105.0) -> CornerLinear:
    """Corner squeezed parallel to an edge: w(x) = x tan(90 deg - angle), capped."""
    return CornerLinear(math.tan(math.radians(90.0 - angle_deg)), cap)


def corner_case2() -> CornerLinear:
    """Right-angle corner squeezed along its bisector: w(x) = 2x tan(45 deg)."""
    return CornerLinear(2.0 * math.tan(math.radians(45.0)))


DEFAULT_LOCATIONS: tuple[tuple[str, Constant | CornerLinear], ...] = (
    ("center", Constant(210.0)),
    ("edge", Constant(105.0)),
    ("corner_case1", corner_case1()),
    ("corner_case2", corner_case2()),
)


def inertia_moment(spec: BeamSpec) -> float:
    """Integral of w(x) h^3 / 12 over the span."""
    wp = spec.width_profile
    if isinstance(wp, (Constant, CornerLinear)):
        area = wp.integral(spec.l)
    else:
        area, _ = integrate.quad(wp, 0.0, spec.l, epsrel=1e-8, limit=200)
    return area * spec.h**3 / 12.0


@dataclass(frozen=True)
class DeflectionCurve:
    """Raised-cosine arch v(x) = delta (1 - cos(2 pi x / l)) / 2."""

    delta: float
    l: float

    def __post_init__(self) -> None:
        if self.delta < 0 or not self.l > 0:
            raise ValueError("delta must be >= 0 and l > 0")

    @property
    def apex(self) -> float:
        return self.l / 2.0

    @property
    def large(self) -> bool:
        return self.delta > self.l / 10.0

    def _k(self) -> float:
        return 2.0 * math.pi / self.l

    def v(self, x: float) -> float:
        return 0.5 * self.delta * (1.0 - math.cos(self._k() * x))

    def dv(self, x: float) -> float:
        return 0.5 * self.delta * self._k() * math.sin(self._k() * x)

    def d2v(self, x: float) -> float:
        return 0.5 * self.delta * self._k() ** 2 * math.cos(self._k() * x)

    def slope_angle(self, x: float) -> float:
        return math.atan(self.dv(x))

    def arc_length(self, x: float) -> float:
        s, _ = integrate.quad(lambda t: math.sqrt(1.0 + self.dv(t) ** 2), 0.0, x, epsabs=1e-13, epsrel=1e-12)
        return s


def _curvature_numeric(curve: DeflectionCurve, x: float) -> float:
    """d(slope angle)/d(arc length) by central differences, refined until stable."""
    h = curve.l / 100.0
    prev = None
    for _ in range(30):
        a, b = max(0.0, x - h), min(curve.l, x + h)
        dk = curve.slope_angle(b) - curve.slope_angle(a)
        ds = curve.arc_length(b) - curve.arc_length(a)
        if abs(dk) < 1e-14:
            raise SingularSlope(f"slope angle is stationary at x={x}")
        cur = dk / ds
        if prev is not None and abs(cur - prev) <= 1e-6 * abs(cur):
            return cur
        prev = cur
        h /= 2.0
    return cur


def bending_moment(curve: DeflectionCurve, E: float, I_z: float, x: float) -> float:
    """Magnitude of the bending moment at ``x``.

    Small deflections (apex <= l/10) use E I v''(x); larger ones use the
    curvature of the arc-length/slope-angle parameterization.
    """
    if not 0.0 <= x <= curve.l:
        raise ValueError("x must lie on the span")
    if curve.delta == 0:
        return 0.0
    if not curve.large:
        return abs(E * I_z * curve.d2v(x))
    return abs(E * I_z * _curvature_numeric(curve, x))


@dataclass(frozen=True)
class SqueezeResult:
    F_min: float  # N
    torque_bound: float  # N mm, at F_min
    M1: float
    I_z: float


def min_squeeze_force(spec: BeamSpec, curve: DeflectionCurve) -> SqueezeResult:
    """Smallest squeeze force keeping the finger stuck to a sliding, bending sheet."""
    if spec.mu_s1 <= spec.mu_k2:
        raise Infeasible(f"mu_s1={spec.mu_s1} must exceed mu_k2={spec.mu_k2}")
    x = curve.apex
    vx = curve.v(x)
    if not vx > 0:
        raise ValueError("deflection at the apex must be positive")
    iz = inertia_moment(spec)
    m1 = bending_moment(curve, spec.E, iz, x)
    num = spec.mu_k2 * (spec.m1 + spec.m2) * spec.g - spec.mu_s1 * spec.m1 * spec.g + m1 / vx
    f = max(0.0, num / (spec.mu_s1 - spec.mu_k2))
    return SqueezeResult(f, spec.r * spec.mu_s1 * (spec.m1 * spec.g + f), m1, iz)


@dataclass(frozen=True)
class LocationRow:
    location: str
    F_min: float | None
    I_z: float
    M1: float | None

    @property
    def feasible(self) -> bool:
        return self.F_min is not None


@dataclass(frozen=True)
class LocationReport:
    rows: tuple[LocationRow, ...]

    @property
    def verdict(self) -> str:
        """``"strict"`` when forces strictly decrease down the list, ``"tie"`` if
        any neighbours are equal, ``"violated"`` otherwise; ``"infeasible"`` if
        any row is infeasible."""
        if not all(r.feasible for r in self.rows):
            return "infeasible"
        f = [r.F_min for r in self.rows]
        pairs = list(zip(f, f[1:]))
        if any(math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-15) for a, b in pairs):
            return "tie"
        return "strict" if all(a > b for a, b in pairs) else "violated"

    def ratio(self, a: str, b: str) -> float:
        by = {r.location: r for r in self.rows}
        return by[a].F_min / by[b].F_min

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["location", "F_min_N", "I_z", "M1", "feasible"])
        for r in self.rows:
            w.writerow([r.location, "" if r.F_min is None else f"{r.F_min:.9g}", f"{r.I_z:.9g}",
                        "" if r.M1 is None else f"{r.M1:.9g}", str(r.feasible).lower()])
        return buf.getvalue()


def default_curve(l: float = 20.0) -> DeflectionCurve:
    return DeflectionCurve(l / 20.0, l)


def location_report(specs: Sequence[tuple[str, BeamSpec]], curve: DeflectionCurve | None = None) -> LocationReport:
    if len(specs) < 2:
        raise ValueError("need at least two locations")
    rows = []
    for label, spec in specs:
        c = curve or default_curve(spec.l)
        try:
            res = min_squeeze_force(spec, c)
            rows.append(LocationRow(label, res.F_min, res.I_z, res.M1))
        except Infeasible:
            rows.append(LocationRow(label, None, inertia_moment(spec), None))
    return LocationReport(tuple(rows))


def default_location_specs(base: BeamSpec = BeamSpec()) -> list[tuple[str, BeamSpec]]:
    return [(name, replace(base, width_profile=wp)) for name, wp in DEFAULT_LOCATIONS]
