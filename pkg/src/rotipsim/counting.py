"""Sheet counting from tactile edge detections.

A new edge track increments the count when it first appears. A track is
marked held once its centre reaches the threshold row; the grasp decision
waits for the newest counted track to be held.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .oracle import EdgeDetection, group_by_frame


@dataclass(frozen=True)
class TrackParams:
    gate_px: float = 25.0
    ttl: int = 5
    threshold_row: float = 240.0
    dedup_px: float = 10.0
    velocity_gain: float = 0.3  # share of the prediction residual fed into the velocity

    def __post_init__(self) -> None:
        if not self.gate_px > 0 or self.ttl < 0 or not self.dedup_px >= 0:
            raise ValueError("gate_px must be positive, ttl and dedup_px non-negative")


@dataclass(frozen=True)
class Track:
    track_id: int
    center: tuple[float, float]
    last_frame: int
    held: bool = False
    velocity: tuple[float, float] = (0.0, 0.0)
    hits: int = 1

    def predict(self, frame: int) -> tuple[float, float]:
        gap = frame - self.last_frame
        return (self.center[0] + self.velocity[0] * gap, self.center[1] + self.velocity[1] * gap)


@dataclass(frozen=True)
class CounterState:
    count: int = 0
    tracks: tuple[Track, ...] = ()
    threshold_line: float = 240.0
    next_id: int = 0
    last_frame: int = -1
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if self.count < 0:
            raise ValueError("count must be non-negative")
        ids = [t.track_id for t in self.tracks]
        if len(ids) != len(set(ids)):
            raise ValueError("track ids must be unique")

    @property
    def newest(self) -> Track | None:
        return max(self.tracks, key=lambda t: t.track_id) if self.tracks else None

    def ready_to_grasp(self, target: int) -> bool:
        """Target reached and the most recently counted edge is held."""
        t = self.newest
        return self.count >= target and t is not None and t.track_id == self.next_id - 1 and t.held


def _valid(d: EdgeDetection) -> bool:
    return all(math.isfinite(c) for c in d.center) and math.isfinite(d.confidence)


def _dedup(dets: list[EdgeDetection], radius: float) -> list[EdgeDetection]:
    # highest confidence wins; the key is total so input order never matters
    ordered = sorted(dets, key=lambda d: (-d.confidence, d.center[0], d.center[1]))
    kept: list[EdgeDetection] = []
    for d in ordered:
        if all(math.dist(d.center, k.center) > radius for k in kept):
            kept.append(d)
    return sorted(kept, key=lambda d: (d.center[1], d.center[0], -d.confidence))


def count_step(state: CounterState, frame: Sequence[EdgeDetection], params: TrackParams = TrackParams(),
               frame_index: int | None = None) -> CounterState:
    """Advance the counter by one frame of detections."""
    diags: list[str] = []
    idx = frame_index if frame_index is not None else (frame[0].frame_index if frame else state.last_frame + 1)
    if idx <= state.last_frame:
        raise ValueError(f"frame index {idx} is not after {state.last_frame}")
    dets = []
    for d in frame:
        if d.frame_index != idx:
            diags.append(f"frame {idx}: dropped detection from frame {d.frame_index}")
        elif not _valid(d):
            diags.append(f"frame {idx}: dropped malformed detection")
        else:
            dets.append(d)
    dets = _dedup(dets, params.dedup_px)

    pairs = []
    for t in state.tracks:
        gap = idx - t.last_frame
        gate = params.gate_px * gap
        pred = t.predict(idx)
        for j, d in enumerate(dets):
            dist = math.dist(pred, d.center)
            if dist <= gate:
                pairs.append((dist, t.track_id, j))
    pairs.sort()
    used_t: set[int] = set()
    used_d: set[int] = set()
    by_id = {t.track_id: t for t in state.tracks}
    updated: dict[int, Track] = {}
    for _, tid, j in pairs:
        if tid in used_t or j in used_d:
            continue
        used_t.add(tid)
        used_d.add(j)
        t = by_id[tid]
        c = dets[j].center
        gap = idx - t.last_frame
        pred = t.predict(idx)
        k = params.velocity_gain / gap
        vel = (t.velocity[0] + k * (c[0] - pred[0]), t.velocity[1] + k * (c[1] - pred[1]))
        updated[tid] = Track(tid, c, idx, t.held or c[1] >= state.threshold_line, vel, t.hits + 1)

    count = state.count
    next_id = state.next_id
    tracks = []
    for t in state.tracks:
        t = updated.get(t.track_id, t)
        if idx - t.last_frame <= params.ttl:
            tracks.append(t)
    for j, d in enumerate(dets):
        if j in used_d:
            continue
        tracks.append(Track(next_id, d.center, idx, d.center[1] >= state.threshold_line))
        next_id += 1
        count += 1
    return replace(state, count=count, tracks=tuple(tracks), next_id=next_id,
                   last_frame=idx, diagnostics=state.diagnostics + tuple(diags))


def run_counter(detections: Iterable[EdgeDetection], n_frames: int,
                params: TrackParams = TrackParams()) -> list[CounterState]:
    """Counter state after every frame ``0 .. n_frames - 1``."""
    frames = dict(group_by_frame(detections))
    state = CounterState(threshold_line=params.threshold_row)
    out = []
    for f in range(n_frames):
        state = count_step(state, frames.get(f, []), params, frame_index=f)
        out.append(state)
    return out


def snapshot(state: CounterState) -> str:
    return json.dumps({
        "frame": state.last_frame,
        "count": state.count,
        "tracks": [[t.track_id, round(t.center[0], 3), round(t.center[1], 3), t.last_frame, t.held]
                   for t in sorted(state.tracks, key=lambda t: t.track_id)],
    }, sort_keys=True)


def write_snapshots_jsonl(states: Iterable[CounterState], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in states:
            fh.write(snapshot(s) + "\n")


def counting_accuracy(trials: Sequence[tuple[int, int]]) -> float:
    if not trials:
        raise ValueError("need at least one trial")
    return sum(1 for got, true in trials if got == true) / len(trials)
