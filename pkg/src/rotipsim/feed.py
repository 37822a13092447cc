"""Quasi-static multi-sheet feeding and grasping.

The active finger rolls at ``omega`` so the top sheet advances at
``omega * r``. Each sheet travels ``l_c`` mm before it sits in the gap
between the fingers. Without continuous adjustment the normal force drops
linearly with the fed thickness, which slows feeding (less traction) and
eventually loses contact.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .beam import BeamSpec, corner_case2, default_curve, min_squeeze_force
from .control import TICK_S
from .counting import TrackParams, count_step, CounterState
from .errors import InvalidScenario
from .oracle import DetectorParams, edge_event_stream, group_by_frame


class Policy(enum.Enum):
    WITH_CA = "WithCA"
    WITHOUT_CA = "WithoutCA"

    @classmethod
    def parse(cls, name: str) -> Policy:
        for p in cls:
            if name.lower() in (p.value.lower(), p.name.lower()):
                return p
        raise ValueError(f"unknown policy {name!r}")


@dataclass(frozen=True)
class MaterialSpec:
    name: str
    h: float  # mm
    mu_s1: float
    mu_k2: float
    detector: str


MATERIALS: dict[str, MaterialSpec] = {
    "PrintPaper": MaterialSpec("PrintPaper", 0.10, 0.5, 0.1, "print_paper"),
    "CoatedPaper": MaterialSpec("CoatedPaper", 0.06, 0.5, 0.12, "coated_paper"),
    "PlasticSheet": MaterialSpec("PlasticSheet", 0.16, 0.5, 0.08, "plastic_sheet"),
}


@dataclass(frozen=True)
class FeedScenario:
    total_sheets: int = 15
    material: str = "PrintPaper"
    omega_deg: float = 90.0  # deg/s
    finger_radius: float = 8.0  # mm
    l_c: float = 11.25  # mm, sensor to corner
    finger_spacing: float = 20.0  # mm
    f0: float = 4.0  # N per finger
    decay: float = 5.1  # N per mm of fed thickness
    f_contact_min: float = 1.0  # N
    traction_exp: float = 1.0
    slip_cv: float = 0.10
    tilt_deg: float = 0.0
    tilt_slip: float = 0.1  # extra slip CV at 90 deg tilt
    tick: float = TICK_S
    edge_rows: tuple[float, float] = (40.0, 440.0)
    edge_u: float = 320.0
    check_squeeze: bool = False

    def __post_init__(self) -> None:
        if self.total_sheets < 1:
            raise InvalidScenario("total_sheets must be >= 1")
        if self.material not in MATERIALS:
            raise InvalidScenario(f"unknown material {self.material!r}")
        for name in ("omega_deg", "finger_radius", "l_c", "finger_spacing", "f0", "tick"):
            if not getattr(self, name) > 0:
                raise InvalidScenario(f"{name} must be positive")
        if self.decay < 0 or self.f_contact_min < 0 or self.slip_cv < 0 or self.tilt_slip < 0:
            raise InvalidScenario("decay, f_contact_min and noise levels must be non-negative")
        if self.f0 < self.f_contact_min:
            raise InvalidScenario("initial force is below the contact threshold")
        if not 0.0 <= self.tilt_deg <= 90.0:
            raise InvalidScenario("tilt_deg must lie in [0, 90]")
        if self.total_sheets * self.mat.h >= self.finger_spacing:
            raise InvalidScenario("stack thicker than the finger spacing")

    @property
    def mat(self) -> MaterialSpec:
        return MATERIALS[self.material]

    @property
    def v_feed(self) -> float:
        return math.radians(self.omega_deg) * self.finger_radius

    @property
    def nominal_sheet_time(self) -> float:
        return self.l_c / self.v_feed

    @property
    def cv(self) -> float:
        return self.slip_cv + self.tilt_slip * math.sin(math.radians(self.tilt_deg))

    def squeeze_force(self) -> float:
        """Minimum squeeze force at the corner for this material."""
        m = self.mat
        spec = BeamSpec(h=m.h, l=self.finger_spacing, width_profile=corner_case2(), mu_s1=m.mu_s1, mu_k2=m.mu_k2)
        return min_squeeze_force(spec, default_curve(self.finger_spacing)).F_min


@dataclass(frozen=True)
class StackState:
    total_sheets: int
    fed: int
    h: float
    l_c: float
    material: str
    mu_s1: float
    mu_k2: float
    contact_normal_force: tuple[float, float]

    def __post_init__(self) -> None:
        if not 0 <= self.fed <= self.total_sheets:
            raise ValueError("fed must lie in [0, total_sheets]")
        if not self.h > 0 or min(self.contact_normal_force) < 0:
            raise ValueError("h must be positive and forces non-negative")

    @property
    def remaining(self) -> int:
        return self.total_sheets - self.fed


@dataclass(frozen=True)
class EdgeTruth:
    tick: int
    sheet: int
    u: float
    v: float


@dataclass(frozen=True)
class Outcome:
    kind: str  # "AllFed", "ContactLost", "Grasped"
    sheet: int | None = None
    count: int | None = None

    def __str__(self) -> str:
        if self.kind == "ContactLost":
            return f"ContactLost({self.sheet})"
        if self.kind == "Grasped":
            return f"Grasped({self.count})"
        return self.kind


@dataclass(frozen=True, eq=False)
class FeedLog:
    policy: Policy
    seed: int
    sheet_times: tuple[float, ...]
    forces: np.ndarray  # (n_ticks, 2) N
    edge_truth: tuple[EdgeTruth, ...]
    n_ticks: int
    outcome: Outcome
    starts: tuple[float, ...] = field(default=())

    @property
    def sheets_fed(self) -> int:
        return len(self.sheet_times)

    @property
    def finish_times(self) -> np.ndarray:
        return np.cumsum(self.sheet_times)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"policy": self.policy.value, "seed": self.seed, "outcome": str(self.outcome),
                             "n_ticks": self.n_ticks}, sort_keys=True)]
        for i, t in enumerate(self.sheet_times):
            lines.append(json.dumps({"sheet": i + 1, "time_s": round(t, 9)}, sort_keys=True))
        for e in self.edge_truth:
            lines.append(json.dumps({"tick": e.tick, "sheet": e.sheet, "u": round(e.u, 6), "v": round(e.v, 6)},
                                    sort_keys=True))
        return "\n".join(lines) + "\n"

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_jsonl())


def contact_force(scenario: FeedScenario, policy: Policy, fed: int) -> float:
    if policy is Policy.WITH_CA:
        return scenario.f0
    return max(0.0, scenario.f0 - scenario.decay * fed * scenario.mat.h)


def _slip_factors(rng: np.random.Generator, n: int, cv: float) -> np.ndarray:
    """Multiplicative time noise with unit mean and the given CV."""
    if cv <= 0:
        return np.ones(n)
    s2 = math.log1p(cv * cv)
    return rng.lognormal(-0.5 * s2, math.sqrt(s2), size=n)


def simulate_feed(scenario: FeedScenario, policy: Policy = Policy.WITH_CA, seed: int = 0,
                  speed_factor: float = 1.0) -> FeedLog:
    """Feed the stack sheet by sheet until every sheet is fed or contact is lost.

    Sheet boundaries are solved in continuous time so noiseless sheet times
    equal ``l_c / v_feed`` exactly; forces and edge positions are sampled at
    the tick rate.
    """
    if not speed_factor > 0:
        raise InvalidScenario("speed_factor must be positive")
    if scenario.check_squeeze and scenario.squeeze_force() > scenario.f0:
        raise InvalidScenario("initial force cannot bend the sheet at the squeeze location")
    rng = np.random.default_rng(seed)
    slip = _slip_factors(rng, scenario.total_sheets, scenario.cv)
    base = scenario.nominal_sheet_time / speed_factor

    times: list[float] = []
    starts: list[float] = []
    sheet_force: list[float] = []
    outcome = Outcome("AllFed")
    t = 0.0
    for k in range(scenario.total_sheets):
        f = contact_force(scenario, policy, k)
        if f < scenario.f_contact_min:
            outcome = Outcome("ContactLost", sheet=k + 1)
            break
        eta = (f / scenario.f0) ** scenario.traction_exp
        dur = base * slip[k] / eta
        starts.append(t)
        times.append(dur)
        sheet_force.append(f)
        t += dur

    n_ticks = max(1, math.ceil(t / scenario.tick - 1e-9))
    if outcome.kind == "ContactLost":
        n_ticks += 1
    forces = np.zeros((n_ticks, 2))
    edges: list[EdgeTruth] = []
    r0, r1 = scenario.edge_rows
    k = 0
    for j in range(n_ticks):
        tj = j * scenario.tick
        while k < len(times) and tj >= starts[k] + times[k]:
            k += 1
        if k < len(times):
            forces[j] = sheet_force[k]
            frac = (tj - starts[k]) / times[k]
            edges.append(EdgeTruth(j, k + 1, scenario.edge_u, r0 + (r1 - r0) * frac))
        else:
            forces[j] = contact_force(scenario, policy, len(times))
    return FeedLog(policy, seed, tuple(times), forces, tuple(edges), n_ticks, outcome, tuple(starts))


def stack_state(scenario: FeedScenario, policy: Policy, fed: int) -> StackState:
    m = scenario.mat
    f = contact_force(scenario, policy, fed)
    return StackState(scenario.total_sheets, fed, m.h, scenario.l_c, m.name, m.mu_s1, m.mu_k2, (f, f))


@dataclass(frozen=True)
class GraspResult:
    grasped: int
    target: int
    elapsed: float  # s

    def __post_init__(self) -> None:
        if self.grasped < 0 or self.target < 1 or not self.elapsed > 0:
            raise ValueError("grasped >= 0, target >= 1 and elapsed > 0 required")


def sr_metric(g: GraspResult) -> float:
    return max(0.0, 1.0 - abs(g.grasped - g.target) / g.target)


def ppm_metric(g: GraspResult) -> float:
    return g.grasped * 60.0 / g.elapsed


def estimate_total_time(n_desired: int, l_c: float, v_feed: float) -> float:
    if n_desired <= 0 or not l_c > 0 or not v_feed > 0:
        raise ValueError("all arguments must be positive")
    return n_desired * (l_c / v_feed)


@dataclass(frozen=True)
class BenchParams:
    counting_speed: float = 0.6  # feed slower so every edge is seen
    overhead_s: float = 42.0  # approach, adjust, lift and place
    extra_sheets: int = 5


def grasp_with_counting(scenario: FeedScenario, target: int, det: DetectorParams, seed: int,
                        track: TrackParams = TrackParams(), bench: BenchParams = BenchParams()) -> GraspResult:
    """Feed until the counter reaches ``target`` with its newest edge held,
    finish the sheet under the finger and close."""
    sc = replace(scenario, total_sheets=target + bench.extra_sheets)
    log = simulate_feed(sc, Policy.WITH_CA, seed, bench.counting_speed)
    dets = dict(group_by_frame(edge_event_stream(log, det, seed + 7919)))
    state = CounterState(threshold_line=track.threshold_row)
    ends = log.finish_times
    for f in range(log.n_ticks):
        state = count_step(state, dets.get(f, []), track, frame_index=f)
        if state.ready_to_grasp(target):
            tf = f * sc.tick
            sheet = int(np.searchsorted(ends, tf, side="right")) + 1
            grasped = min(sheet, log.sheets_fed)
            return GraspResult(grasped, target, float(ends[grasped - 1]) + bench.overhead_s)
    return GraspResult(log.sheets_fed, target, float(ends[-1]) + bench.overhead_s)


def grasp_fixed_time(scenario: FeedScenario, target: int, seed: int,
                     bench: BenchParams = BenchParams()) -> GraspResult:
    """Feed for ``target`` nominal sheet times, then close on whatever has been fed."""
    sc = replace(scenario, total_sheets=target + bench.extra_sheets)
    log = simulate_feed(sc, Policy.WITH_CA, seed)
    budget = estimate_total_time(target, sc.l_c, sc.v_feed)
    grasped = int(np.count_nonzero(log.finish_times <= budget * (1 + 1e-12)))
    return GraspResult(grasped, target, budget + bench.overhead_s)


def feed_summary_row(scenario_name: str, log: FeedLog, target: int | None = None) -> dict[str, Any]:
    t = np.asarray(log.sheet_times)
    return {
        "scenario": scenario_name,
        "seed": log.seed,
        "policy": log.policy.value,
        "sheets_fed": log.sheets_fed,
        "outcome": str(log.outcome),
        "mean_feed_s": float(t.mean()) if len(t) else 0.0,
        "std_feed_s": float(t.std()) if len(t) else 0.0,
    }
