"""Experiment runners behind the CLI.

Each runner is a pure function of (config, seed) returning plain row dicts,
so runs can fan out to worker processes and still produce identical output.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Any

import numpy as np

from .beam import BeamSpec, LocationReport, default_location_specs, location_report
from .calibration import calibrate, make_calibration_set
from .config import ScenarioConfig
from .contact_sim import ContactWorld, GripperModel, Method, run_contact_trial, sample_trial
from .counting import run_counter
from .feed import (
    FeedScenario,
    GraspResult,
    Policy,
    grasp_fixed_time,
    grasp_with_counting,
    ppm_metric,
    simulate_feed,
    sr_metric,
)
from .geometry import angle_error
from .oracle import NO_MASK_NOISE, ContactMask, contact_edge, corrupt_mask, edge_event_stream, pressed_scene, render_contact_mask
from .planefit import force_plane_baseline, ransac_plane, vision_plane_baseline
from .sensor import backproject_contour

Row = dict[str, Any]


def _sub(*parts: int) -> int:
    return int(np.random.SeedSequence([abs(int(p)) for p in parts]).generate_state(1)[0])


def sweep_angles(cfg: ScenarioConfig) -> list[float]:
    start, stop, step, _ = cfg.sweep
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 9) for i in range(n)]


def tactile_plane_error(cfg: ScenarioConfig, angle_deg: float, seed: int) -> tuple[float, ContactMask]:
    g, k = cfg.geometry, cfg.intrinsics
    scene = pressed_scene(g, math.radians(angle_deg), cfg.sweep[3], indentation=cfg.indentation)
    mask = corrupt_mask(render_contact_mask(scene, k, g), cfg.mask_noise, _sub(seed, 1, int(angle_deg * 1000)))
    bp = backproject_contour(contact_edge(mask), k, g)
    est = ransac_plane(bp.points, seed=_sub(seed, 2, int(angle_deg * 1000)))
    return angle_error(est.normal, scene.normal_in_sensor()), mask


def estimate_plane_rows(cfg: ScenarioConfig, seed: int) -> list[Row]:
    rows = []
    for i, a in enumerate(sweep_angles(cfg)):
        scene = pressed_scene(cfg.geometry, math.radians(a), cfg.sweep[3], indentation=cfg.indentation)
        n_true = scene.normal_in_sensor()
        tac, _ = tactile_plane_error(cfg, a, seed)
        vis = vision_plane_baseline((n_true, 0.0), cfg.vision_deg, _sub(seed, 3, i)).normal
        frc = force_plane_baseline((n_true, 0.0), cfg.force_deg, _sub(seed, 4, i)).normal
        for method, err in (("tactile", tac), ("vision", angle_error(vis, n_true)),
                            ("force", angle_error(frc, n_true))):
            rows.append({"seed": seed, "index": i, "angle_deg": a, "method": method, "error_deg": err})
    return rows


def contact_trial_rows(cfg: ScenarioConfig, seed: int) -> list[Row]:
    """One trial per method, sharing the sampled vision estimate."""
    model = GripperModel(cfg.intrinsics, cfg.geometry, cfg.finger_spacing, cfg.indentation, cfg.max_press)
    world = ContactWorld()
    if cfg.tilt_model == "uniform":
        setup = sample_trial(seed, world, model, max_tilt_deg=cfg.max_tilt_deg, z_noise_mm=cfg.vision_z_mm)
    else:
        setup = sample_trial(seed, world, model, vision_noise_deg=cfg.vision_deg, z_noise_mm=cfg.vision_z_mm)
    rows = []
    for i, name in enumerate(cfg.methods):
        res = run_contact_trial(Method.parse(name), setup, model, cfg.gains, cfg.mask_noise)
        rows.append({"seed": seed, "index": i, "method": Method.parse(name).value,
                     "one_finger": int(res.one_finger), "two_finger": int(res.two_finger),
                     "adjust_rounds": res.adjust_rounds, "ticks": res.ticks, "failure": res.failure or ""})
    return rows


def feed_rows(cfg: ScenarioConfig, seed: int, with_logs: bool = False) -> list[Row]:
    rows = []
    for i, pol in enumerate(Policy):
        log = simulate_feed(cfg.feed, pol, seed)
        t = np.asarray(log.sheet_times)
        elapsed = float(t.sum()) if len(t) else cfg.feed.tick
        g = GraspResult(log.sheets_fed, cfg.feed.total_sheets, elapsed)
        row = {"scenario": cfg.name, "seed": seed, "index": i, "policy": pol.value, "sheets_fed": log.sheets_fed,
               "sr": sr_metric(g), "ppm": ppm_metric(g),
               "mean_feed_s": float(t.mean()) if len(t) else 0.0, "std_feed_s": float(t.std()) if len(t) else 0.0,
               "outcome": str(log.outcome)}
        if with_logs:
            row["_log"] = log.to_jsonl()
        rows.append(row)
    return rows


def grasp_rows(cfg: ScenarioConfig, seed: int) -> list[Row]:
    rows = []
    i = 0
    for angle in cfg.angles:
        for mat in cfg.materials:
            sc = replace(cfg.feed, material=mat, tilt_deg=angle)
            on = grasp_with_counting(sc, cfg.target, cfg.detector_for(mat), seed, cfg.track, cfg.bench)
            off = grasp_fixed_time(sc, cfg.target, seed, cfg.bench)
            for mode, g in (("counting_on", on), ("counting_off", off)):
                rows.append({"seed": seed, "index": i, "angle_deg": angle, "material": mat, "mode": mode,
                             "grasped": g.grasped, "target": g.target, "sr": sr_metric(g), "ppm": ppm_metric(g),
                             "elapsed_s": g.elapsed})
                i += 1
    return rows


def count_rows(cfg: ScenarioConfig, seed: int) -> list[Row]:
    rows = []
    for i, mat in enumerate(cfg.materials):
        sc = replace(cfg.feed, material=mat, total_sheets=cfg.target)
        log = simulate_feed(sc, Policy.WITH_CA, seed, cfg.bench.counting_speed)
        states = run_counter(edge_event_stream(log, cfg.detector_for(mat), seed), log.n_ticks, cfg.track)
        count = states[-1].count
        rows.append({"seed": seed, "index": i, "material": mat, "count": count, "true": log.sheets_fed,
                     "exact": int(count == log.sheets_fed)})
    return rows


def calibration_rows(cfg: ScenarioConfig, seed: int) -> list[Row]:
    c = cfg.calibration
    rng = np.random.default_rng(_sub(seed, 5))
    ox, oy, dz = rng.uniform(-c["max_offset"], c["max_offset"], 3)
    g0 = cfg.geometry
    truth = g0.with_offsets(g0.o_x + ox, g0.o_y + oy, g0.o_z + dz)
    noise = cfg.mask_noise if c["noisy"] else NO_MASK_NOISE
    cal = make_calibration_set(truth, cfg.intrinsics, noise=noise, seed=_sub(seed, 6), per_angle=c["per_angle"])
    rep = calibrate(cal, cfg.intrinsics, g0, seed=seed)
    ex, ey, ez = rep.errors
    return [{"seed": seed, "index": 0, "true_o_x": truth.o_x, "true_o_y": truth.o_y, "true_o_z": truth.o_z,
             "o_x": rep.o_x, "o_y": rep.o_y, "o_z": rep.o_z, "err_max_mm": max(ex, ey, ez),
             "plane_residual_deg": rep.plane_residual_deg, "evaluations": rep.evaluations, "rounds": rep.rounds,
             "_report": rep.to_json()}]


def force_report(cfg: ScenarioConfig) -> LocationReport:
    m = cfg.feed.mat
    b = cfg.beam
    mu_s1 = m.mu_s1 if b["mu_s1"] is None else b["mu_s1"]
    mu_k2 = m.mu_k2 if b["mu_k2"] is None else b["mu_k2"]
    base = BeamSpec(E=b["modulus"], h=m.h, l=cfg.finger_spacing, mu_s1=mu_s1, mu_k2=mu_k2, r=cfg.geometry.r)
    return location_report(default_location_specs(base))
