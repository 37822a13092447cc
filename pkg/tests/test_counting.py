from __future__ import annotations

import json
import math
import random

import pytest
from hypothesis import given, strategies as st

from rotipsim.counting import (
    CounterState,
    TrackParams,
    count_step,
    counting_accuracy,
    run_counter,
    snapshot,
    write_snapshots_jsonl,
)
from rotipsim.feed import FeedScenario, Policy, simulate_feed
from rotipsim.oracle import DETECTOR_PRESETS, DetectorParams, EdgeDetection, edge_event_stream


def det(frame: int, u: float, v: float, conf: float = 0.9) -> EdgeDetection:
    return EdgeDetection(frame, (u, v), (u - 5, v - 5, u + 5, v + 5), conf)


def sweep(frames: range, start: float = 40.0, speed: float = 15.0, u: float = 320.0) -> list[EdgeDetection]:
    return [det(f, u, start + speed * (f - frames.start)) for f in frames]


def test_empty_stream():
    assert run_counter([], 20)[-1].count == 0
    assert run_counter([], 0) == []


def test_single_edge_crossing():
    states = run_counter(sweep(range(0, 20)), 20)
    final = states[-1]
    assert final.count == 1
    assert final.tracks[0].held
    # held flips exactly when the centre reaches row 240
    first_held = next(i for i, s in enumerate(states) if s.tracks and s.tracks[0].held)
    assert 40 + 15 * first_held >= 240 > 40 + 15 * (first_held - 1)


def test_noiseless_feed_counts_every_sheet():
    log = simulate_feed(FeedScenario(total_sheets=10), Policy.WITH_CA, 0)
    dets = edge_event_stream(log, DetectorParams(), 0)
    assert run_counter(dets, log.n_ticks)[-1].count == 10


def test_counting_accuracy():
    assert counting_accuracy([(10, 10), (3, 3)]) == 1.0
    assert counting_accuracy([(10, 10), (9, 10)]) == 0.5
    with pytest.raises(ValueError):
        counting_accuracy([])


@pytest.mark.parametrize("preset,floor", [("print_paper", 0.95), ("plastic_sheet", 0.96)])
def test_preset_accuracy(preset, floor):
    det_params = DETECTOR_PRESETS[preset]
    trials = []
    for s in range(100):
        log = simulate_feed(FeedScenario(total_sheets=10), Policy.WITH_CA, s, 0.6)
        final = run_counter(edge_event_stream(log, det_params, s), log.n_ticks)[-1]
        trials.append((final.count, log.sheets_fed))
    assert counting_accuracy(trials) >= floor


def test_single_miss_does_not_double_count():
    stream = [d for d in sweep(range(0, 20)) if d.frame_index != 7]
    assert run_counter(stream, 20)[-1].count == 1


def test_track_retired_after_ttl():
    stream = [det(0, 320, 100), det(1, 320, 100)] + [det(9, 320, 100)]
    final = run_counter(stream, 10)[-1]
    assert final.count == 2
    assert [t.track_id for t in final.tracks] == [1]


def test_duplicates_in_one_frame_are_suppressed():
    frame = [det(0, 320, 100, 0.7), det(0, 324, 102, 0.9)]
    state = count_step(CounterState(), frame, frame_index=0)
    assert state.count == 1
    assert state.tracks[0].center == (324, 102)


def test_malformed_detections_get_diagnostics():
    bad = EdgeDetection(0, (math.nan, 10.0), (0, 0, 1, 1), 0.5)
    wrong_frame = det(3, 100, 100)
    state = count_step(CounterState(), [bad, wrong_frame], frame_index=0)
    assert state.count == 0
    assert len(state.diagnostics) == 2


def test_frame_order_enforced():
    state = count_step(CounterState(), [], frame_index=4)
    with pytest.raises(ValueError):
        count_step(state, [], frame_index=4)


def test_ready_to_grasp_waits_for_held():
    state = CounterState()
    for f, d in enumerate(sweep(range(0, 20))):
        state = count_step(state, [d], frame_index=f)
        if state.ready_to_grasp(1):
            assert d.center[1] >= 240
            break
    else:
        pytest.fail("never ready")
    assert not CounterState().ready_to_grasp(0)


def test_state_invariants():
    with pytest.raises(ValueError):
        CounterState(count=-1)
    with pytest.raises(ValueError):
        TrackParams(gate_px=0)


def test_snapshots(tmp_path):
    states = run_counter(sweep(range(0, 5)), 5)
    path = tmp_path / "snap.jsonl"
    write_snapshots_jsonl(states, path)
    rows = [json.loads(l) for l in path.read_text().splitlines()]
    assert [r["frame"] for r in rows] == list(range(5))
    assert rows[-1]["count"] == 1
    assert snapshot(states[-1]) == path.read_text().splitlines()[-1]


def noisy_stream(seed: int) -> tuple[list[EdgeDetection], int]:
    log = simulate_feed(FeedScenario(total_sheets=6), Policy.WITH_CA, seed, 0.6)
    return edge_event_stream(log, DetectorParams(recall=0.85, fp_rate=0.02, jitter_px=3.0), seed), log.n_ticks


@given(st.integers(0, 10_000))
def test_count_never_decreases(seed):
    dets, n = noisy_stream(seed)
    counts = [s.count for s in run_counter(dets, n)]
    assert all(b >= a for a, b in zip(counts, counts[1:]))


@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_order_within_frame_is_irrelevant(seed, shuffle_seed):
    dets, n = noisy_stream(seed)
    # add close pairs so association actually has ties to resolve
    extra = [det(d.frame_index, d.center[0] + 6, d.center[1] + 1, 0.5) for d in dets[::7]]
    dets = dets + extra
    shuffled = list(dets)
    random.Random(shuffle_seed).shuffle(shuffled)
    a = [snapshot(s) for s in run_counter(dets, n)]
    b = [snapshot(s) for s in run_counter(shuffled, n)]
    assert a == b


@given(st.integers(1, 12), st.integers(0, 10_000))
def test_noiseless_completeness(sheets, seed):
    log = simulate_feed(FeedScenario(total_sheets=sheets), Policy.WITH_CA, seed, 0.6)
    dets = edge_event_stream(log, DetectorParams(), seed)
    assert run_counter(dets, log.n_ticks)[-1].count == log.sheets_fed


@given(st.integers(0, 19), st.integers(0, 10_000))
def test_debounce_single_miss(miss, seed):
    log = simulate_feed(FeedScenario(total_sheets=4), Policy.WITH_CA, seed, 0.6)
    dets = edge_event_stream(log, DetectorParams(), seed)
    frames = sorted({d.frame_index for d in dets})
    dropped = frames[miss % len(frames)]
    kept = [d for d in dets if d.frame_index != dropped]
    assert run_counter(kept, log.n_ticks)[-1].count == 4
