"""Scenario configuration files.

Configs are INI files (``key = value`` under ``[section]`` headers). A file
may pull in presets with ``include = a.ini, b.ini`` in a ``[meta]`` section;
included files are loaded first, in order, and the including file overrides
them. Paths are relative to the including file. Unknown sections or keys are
errors, so typos never pass silently.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .control import ControlGains
from .counting import TrackParams
from .errors import ConfigError
from .feed import BenchParams, FeedScenario, MATERIALS
from .oracle import DETECTOR_PRESETS, DEFAULT_MASK_NOISE, DetectorParams, MaskNoiseParams, NO_MASK_NOISE
from .planefit import FORCE_NOISE_DEG, VISION_NOISE_DEG
from .sensor import CameraIntrinsics, SensorGeometry


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    """``0, 1, 2`` or a range ``0..9`` (inclusive)."""
    s = s.strip()
    m = re.fullmatch(r"(-?\d+)\s*\.\.\s*(-?\d+)", s)
    if m:
        a, b = int(m.group(1)), int(m.group(2))
        if b < a:
            raise ValueError("empty range")
        return tuple(range(a, b + 1))
    return tuple(int(p) for p in s.split(",") if p.strip())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(p) for p in s.split(",") if p.strip())


def _optional_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "material") else float(s)


def _words(s: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in s.split(",") if p.strip())


Parser = Callable[[str], Any]

SCHEMA: dict[str, dict[str, tuple[Parser, Any]]] = {
    "meta": {"include": (_words, ()), "name": (str, "default")},
    "camera": {"fx": (float, 500.0), "fy": (float, 500.0), "cx": (float, 320.0), "cy": (float, 240.0),
               "width": (int, 640), "height": (int, 480)},
    "geometry": {"r": (float, 8.0), "o_x": (float, 0.0), "o_y": (float, 0.0), "o_z": (float, 10.0)},
    "control": {"kp": (float, 1.0), "kd": (float, 0.1), "epsilon": (float, 0.02), "v_ff": (float, 0.4),
                "max_step_mm": (float, 1.0), "contact_pixels": (int, 500), "max_adjust_rounds": (int, 5),
                "precontact_offset": (float, 20.0), "finger_spacing": (float, 20.0),
                "indentation": (float, 0.2), "max_press": (float, 3.0)},
    "noise": {"mask": (str, "default"), "vision_deg": (float, VISION_NOISE_DEG),
              "force_deg": (float, FORCE_NOISE_DEG), "detector": (str, "material"),
              "vision_z_mm": (float, 1.0), "slip_cv": (float, 0.10)},
    "scenario": {"material": (str, "PrintPaper"), "tilt_deg": (float, 0.0), "sheets": (int, 15),
                 "target": (int, 10), "seeds": (_ints, tuple(range(10))), "trials": (int, 100),
                 "methods": (_words, ("Vision", "VisionForceWA", "VisionForce", "VisionForceTactile")),
                 "max_tilt_deg": (float, 20.0), "tilt_model": (str, "vision"), "angles": (_floats, (0.0, 30.0, 60.0)),
                 "materials": (_words, tuple(MATERIALS))},
    "feed": {"omega_deg": (float, 90.0), "l_c": (float, 11.25), "f0": (float, 4.0), "decay": (float, 5.1),
             "f_contact_min": (float, 1.0), "traction_exp": (float, 1.0), "tilt_slip": (float, 0.1),
             "check_squeeze": (_bool, False)},
    "bench": {"counting_speed": (float, 0.6), "overhead_s": (float, 42.0), "extra_sheets": (int, 5)},
    "counting": {"gate_px": (float, 25.0), "ttl": (int, 5), "threshold_row": (float, 240.0),
                 "dedup_px": (float, 10.0)},
    "sweep": {"start_deg": (float, -45.0), "stop_deg": (float, 45.0), "step_deg": (float, 1.0),
              "press": (float, 0.6)},
    # friction overrides default to the material preset
    "beam": {"modulus": (float, 828.0), "mu_s1": (_optional_float, None), "mu_k2": (_optional_float, None)},
    "calibration": {"draws": (int, 20), "per_angle": (int, 1), "max_offset": (float, 2.0),
                    "noisy": (_bool, False)},
}

MASK_PRESETS = {"default": DEFAULT_MASK_NOISE, "none": NO_MASK_NOISE}


@dataclass(frozen=True)
class RawConfig:
    """Resolved key/value pairs plus where each came from."""

    values: dict[str, dict[str, str]]
    origin: dict[tuple[str, str], tuple[str, int | None]]
    path: str | None = None


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return i
    return None


def _read(path: Path, stack: tuple[Path, ...]) -> RawConfig:
    path = path.resolve()
    if path in stack:
        raise ConfigError("include cycle: " + " -> ".join(str(p) for p in stack + (path,)), path=str(path))
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", path=str(path)) from e
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as e:
        line = getattr(e, "lineno", None)
        raise ConfigError(str(e).splitlines()[0], path=str(path), line=line) from e

    values: dict[str, dict[str, str]] = {}
    origin: dict[tuple[str, str], tuple[str, int | None]] = {}
    includes: list[str] = []
    if cp.has_option("meta", "include"):
        includes = list(_words(cp.get("meta", "include")))
    for inc in includes:
        sub = _read(path.parent / inc, stack + (path,))
        for sec, kv in sub.values.items():
            values.setdefault(sec, {}).update(kv)
        origin.update(sub.origin)
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", path=str(path), section=sec,
                              line=_line_of(text, sec, "") or None)
        for key, val in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r}", path=str(path), section=sec, key=key,
                                  line=_line_of(text, sec, key))
            if sec == "meta" and key == "include":
                continue
            values.setdefault(sec, {})[key] = val
            origin[(sec, key)] = (str(path), _line_of(text, sec, key))
    return RawConfig(values, origin, str(path))


def read_raw(path: str | Path) -> RawConfig:
    return _read(Path(path), ())


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    name: str = "default"
    intrinsics: CameraIntrinsics = CameraIntrinsics()
    geometry: SensorGeometry = SensorGeometry()
    gains: ControlGains = field(default_factory=ControlGains)
    finger_spacing: float = 20.0
    indentation: float = 0.2
    max_press: float = 3.0
    mask_noise: MaskNoiseParams = DEFAULT_MASK_NOISE
    vision_deg: float = VISION_NOISE_DEG
    force_deg: float = FORCE_NOISE_DEG
    vision_z_mm: float = 1.0
    detector: str = "material"
    feed: FeedScenario = FeedScenario()
    bench: BenchParams = BenchParams()
    track: TrackParams = TrackParams()
    target: int = 10
    seeds: tuple[int, ...] = tuple(range(10))
    trials: int = 100
    methods: tuple[str, ...] = ("Vision", "VisionForceWA", "VisionForce", "VisionForceTactile")
    max_tilt_deg: float = 20.0
    tilt_model: str = "vision"  # initial orientation error: "vision" preset or "uniform" in +/-max_tilt_deg
    angles: tuple[float, ...] = (0.0, 30.0, 60.0)
    materials: tuple[str, ...] = tuple(MATERIALS)
    sweep: tuple[float, float, float, float] = (-45.0, 45.0, 1.0, 0.6)
    beam: dict[str, Any] = field(default_factory=lambda: {"modulus": 828.0, "mu_s1": None, "mu_k2": None})
    calibration: dict[str, Any] = field(default_factory=lambda: {"draws": 20, "per_angle": 1,
                                                                 "max_offset": 2.0, "noisy": False})
    canonical: str = ""

    def detector_for(self, material: str) -> DetectorParams:
        key = MATERIALS[material].detector if self.detector == "material" else self.detector
        return DETECTOR_PRESETS[key]

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical.encode("utf-8")).hexdigest()[:16]


def _typed(raw: RawConfig) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    for sec, keys in SCHEMA.items():
        out[sec] = {}
        for key, (parse, default) in keys.items():
            if key in raw.values.get(sec, {}):
                text = raw.values[sec][key]
                try:
                    out[sec][key] = parse(text)
                except ValueError as e:
                    path, line = raw.origin.get((sec, key), (raw.path, None))
                    raise ConfigError(f"bad value {text!r}: {e}", path=path, section=sec, key=key, line=line) from e
            else:
                out[sec][key] = default
    return out


def _canonical(t: dict[str, dict[str, Any]]) -> str:
    d = {s: {k: (list(v) if isinstance(v, tuple) else v) for k, v in kv.items() if not (s == "meta" and k == "include")}
         for s, kv in t.items()}
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def build_config(t: dict[str, dict[str, Any]], raw: RawConfig | None = None) -> ScenarioConfig:
    def fail(sec: str, key: str, msg: str) -> ConfigError:
        path, line = (raw.origin.get((sec, key), (raw.path, None)) if raw else (None, None))
        return ConfigError(msg, path=path, section=sec, key=key, line=line)

    def guard(sec: str, key: str, fn: Callable[[], Any]) -> Any:
        try:
            return fn()
        except ValueError as e:
            raise fail(sec, key, str(e)) from e

    c, g, ctl, nz, sc = t["camera"], t["geometry"], t["control"], t["noise"], t["scenario"]
    intr = guard("camera", "fx", lambda: CameraIntrinsics(**c))
    geom = guard("geometry", "r", lambda: SensorGeometry(**g))
    gains = guard("control", "kp", lambda: ControlGains(
        kp=ctl["kp"], kd=ctl["kd"], epsilon=ctl["epsilon"], v_ff=[0, 0, -ctl["v_ff"], 0, 0, 0],
        max_step_mm=ctl["max_step_mm"], contact_pixels=ctl["contact_pixels"],
        max_adjust_rounds=ctl["max_adjust_rounds"], precontact_offset=ctl["precontact_offset"]))
    if nz["mask"] not in MASK_PRESETS:
        raise fail("noise", "mask", f"unknown mask preset {nz['mask']!r} (have {sorted(MASK_PRESETS)})")
    if nz["detector"] != "material" and nz["detector"] not in DETECTOR_PRESETS:
        raise fail("noise", "detector", f"unknown detector preset {nz['detector']!r}")
    for m in (sc["material"],) + tuple(sc["materials"]):
        if m not in MATERIALS:
            raise fail("scenario", "material", f"unknown material {m!r} (have {sorted(MATERIALS)})")
    if not sc["seeds"]:
        raise fail("scenario", "seeds", "seed list must not be empty")
    if sc["target"] < 1:
        raise fail("scenario", "target", "target must be >= 1")
    if sc["tilt_model"] not in ("vision", "uniform"):
        raise fail("scenario", "tilt_model", "tilt_model must be 'vision' or 'uniform'")
    for name in sc["methods"]:
        if name.lower() not in ("vision", "visionforcewa", "visionforce", "visionforcetactile"):
            raise fail("scenario", "methods", f"unknown contact method {name!r}")
    if sc["trials"] < 1:
        raise fail("scenario", "trials", "trials must be >= 1")
    f = t["feed"]
    feed = guard("feed", "l_c", lambda: FeedScenario(
        total_sheets=sc["sheets"], material=sc["material"], omega_deg=f["omega_deg"],
        finger_radius=geom.r, l_c=f["l_c"], finger_spacing=ctl["finger_spacing"], f0=f["f0"], decay=f["decay"],
        f_contact_min=f["f_contact_min"], traction_exp=f["traction_exp"], slip_cv=nz["slip_cv"],
        tilt_deg=sc["tilt_deg"], tilt_slip=f["tilt_slip"], check_squeeze=f["check_squeeze"]))
    track = guard("counting", "gate_px", lambda: TrackParams(**t["counting"]))
    if not t["beam"]["modulus"] > 0:
        raise fail("beam", "modulus", "modulus must be positive")
    for key in ("mu_s1", "mu_k2"):
        if t["beam"][key] is not None and t["beam"][key] < 0:
            raise fail("beam", key, f"{key} must be non-negative")
    sw = t["sweep"]
    if not sw["step_deg"] > 0 or sw["stop_deg"] < sw["start_deg"]:
        raise fail("sweep", "step_deg", "sweep needs step > 0 and stop >= start")
    return ScenarioConfig(
        name=t["meta"]["name"], intrinsics=intr, geometry=geom, gains=gains,
        finger_spacing=ctl["finger_spacing"], indentation=ctl["indentation"], max_press=ctl["max_press"],
        mask_noise=MASK_PRESETS[nz["mask"]], vision_deg=nz["vision_deg"], force_deg=nz["force_deg"],
        vision_z_mm=nz["vision_z_mm"], detector=nz["detector"], feed=feed, bench=BenchParams(**t["bench"]),
        track=track, target=sc["target"], seeds=tuple(sc["seeds"]), trials=sc["trials"],
        methods=tuple(sc["methods"]), max_tilt_deg=sc["max_tilt_deg"], tilt_model=sc["tilt_model"], angles=tuple(sc["angles"]),
        materials=tuple(sc["materials"]), sweep=(sw["start_deg"], sw["stop_deg"], sw["step_deg"], sw["press"]),
        beam=dict(t["beam"]), calibration=dict(t["calibration"]), canonical=_canonical(t))


SCENARIO_DIR = Path(__file__).parent / "scenarios"


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.ini"))


def resolve_config_path(path: str | Path) -> Path:
    """A bare name such as ``noiseless`` refers to a bundled scenario."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and len(p.parts) == 1 and (SCENARIO_DIR / f"{p}.ini").exists():
        return SCENARIO_DIR / f"{p}.ini"
    return p


def load_config(path: str | Path | None = None) -> ScenarioConfig:
    """Load a scenario file, or the built-in defaults when ``path`` is None."""
    if path is None:
        raw = RawConfig({}, {}, None)
    else:
        raw = read_raw(resolve_config_path(path))
    return build_config(_typed(raw), raw)


def default_config() -> ScenarioConfig:
    return load_config(None)
