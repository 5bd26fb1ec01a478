import random

import numpy as np
import pytest

from cohrt.events import EventKind, MalformedLog, SessionEvent, SessionLog
from cohrt.metrics import (
    ActivityInterval,
    InsufficientData,
    UnknownAgent,
    concurrent_activity,
    extract_intervals,
    fluency_report,
    functional_delay,
    idle_time,
    rhythm,
    task_completion_time,
)

ROBOT = "robot"
H1 = "human:P1"
H2 = "human:P2"


def build_log(duration_ms, body_events, participants=("P1", "P2")):
    events = [SessionEvent(0, "server", EventKind.SESSION_START,
                           {"config": {"participants": list(participants)}})]
    events.extend(body_events)
    events.append(SessionEvent(duration_ms, "server", EventKind.SESSION_END,
                               {"reason": "completed"}))
    return SessionLog(events=sorted(events, key=lambda e: e.ts_ms))


def action(agent, start, end, block="B01"):
    return [
        SessionEvent(start, agent, EventKind.ACTION_START, {"action": "stack", "block_id": block}),
        SessionEvent(end, agent, EventKind.ACTION_END, {"action": "stack", "block_id": block}),
    ]


# --- 1 ms discretized sweep oracle ------------------------------------------------

def sweep_activity(intervals, duration_ms):
    """Boolean activity array per agent at 1 ms resolution (independent oracle)."""
    agents = sorted({iv.agent for iv in intervals})
    arrays = {a: np.zeros(duration_ms, dtype=bool) for a in agents}
    for iv in intervals:
        arrays[iv.agent][iv.start_ms:iv.end_ms] = True
    return arrays


def sweep_idle(intervals, duration_ms, agent):
    arrays = sweep_activity(intervals, duration_ms)
    if agent not in arrays:
        return duration_ms
    return int(duration_ms - arrays[agent].sum())


def sweep_concurrent(intervals, duration_ms, agents):
    arrays = sweep_activity(intervals, duration_ms)
    mask = np.ones(duration_ms, dtype=bool)
    for a in agents:
        if a not in arrays:
            return 0.0
        mask &= arrays[a]
    return float(mask.sum()) / duration_ms if duration_ms else 0.0


def quadratic_delay_scan(intervals):
    """Brute-force next-start scan over all interval pairs."""
    delays = []
    for iv in intervals:
        candidates = [
            other.start_ms for other in intervals
            if other.agent != iv.agent and other.start_ms >= iv.start_ms
        ]
        if candidates:
            delays.append(max(0, min(candidates) - iv.end_ms))
    return delays


# --- worked examples from known timelines ----------------------------------------

def test_task_completion_time():
    log = build_log(90_000, [])
    assert task_completion_time(log) == 90_000
    assert task_completion_time(build_log(0, [])) == 0


def test_idle_robot_active_ten_of_fifteen_seconds():
    log = build_log(15_000, action(ROBOT, 0, 10_000))
    assert idle_time(log, ROBOT) == 5000


def test_idle_overlapping_self_intervals():
    log = build_log(20_000, action(ROBOT, 0, 10_000) + action(ROBOT, 5000, 15_000))
    assert idle_time(log, ROBOT) == 5000  # union is [0,15s] -> 5s idle
    ivs = extract_intervals(log)
    assert sweep_idle(ivs, 20_000, ROBOT) == 5000


def test_idle_never_active_agent():
    log = build_log(12_345, action(ROBOT, 0, 1000))
    assert idle_time(log, H1) == 12_345
    with pytest.raises(UnknownAgent):
        idle_time(log, "human:P9")


def test_concurrent_activity_worked_example():
    # Robot [0,10s], H1 [5,20s], H2 [8,12s] over a 20s session: overlap [8,10s]
    body = action(ROBOT, 0, 10_000) + action(H1, 5000, 20_000) + action(H2, 8000, 12_000)
    log = build_log(20_000, body)
    assert concurrent_activity(log) == pytest.approx(0.10)


def test_concurrent_disjoint_and_full():
    disjoint = build_log(30_000, action(ROBOT, 0, 5000) + action(H1, 6000, 9000)
                         + action(H2, 10_000, 12_000))
    assert concurrent_activity(disjoint) == 0.0
    full = build_log(10_000, action(ROBOT, 0, 10_000) + action(H1, 0, 10_000)
                     + action(H2, 0, 10_000))
    assert concurrent_activity(full) == 1.0


def test_functional_delay_single_transition():
    log = build_log(20_000, action(ROBOT, 2000, 10_000) + action(H1, 12_000, 15_000))
    delays, summary = functional_delay(log)
    assert 2000 in delays
    assert summary is not None


def test_functional_delay_overlap_clips_to_zero():
    log = build_log(20_000, action(ROBOT, 0, 10_000) + action(H1, 8000, 15_000))
    delays, _ = functional_delay(log)
    assert delays[0] == 0


def test_functional_delay_single_agent():
    log = build_log(20_000, action(ROBOT, 0, 10_000))
    assert functional_delay(log) == ([], None)


def test_rhythm_periodic_is_zero():
    body = (action(ROBOT, 0, 1000) + action(H1, 5000, 6000)
            + action(ROBOT, 10_000, 11_000) + action(H1, 15_000, 16_000))
    log = build_log(20_000, body)
    assert rhythm(log) == 0.0


def test_rhythm_worked_example():
    # starts at 0, 5000, 15000 by alternating agents: gaps {5000, 10000}
    body = action(ROBOT, 0, 1000) + action(H1, 5000, 6000) + action(ROBOT, 15_000, 16_000)
    log = build_log(20_000, body)
    assert rhythm(log) == pytest.approx(2500 / 7500)


def test_rhythm_insufficient_transitions():
    body = action(ROBOT, 0, 1000) + action(H1, 5000, 6000)
    log = build_log(20_000, body)
    with pytest.raises(InsufficientData):
        rhythm(log)


def test_puzzle_moves_widened():
    move = SessionEvent(4000, H1, EventKind.PUZZLE_MOVE,
                        {"pid": "P1", "source": "tray:p0", "dest": "grid:0"})
    log = build_log(10_000, [move])
    ivs = extract_intervals(log, min_activity_ms=500)
    assert ActivityInterval(H1, 4000, 4500) in ivs
    assert idle_time(log, H1) == 9500


def test_end_without_start_is_malformed():
    bad = [SessionEvent(5000, ROBOT, EventKind.ACTION_END, {"action": "x", "block_id": None})]
    with pytest.raises(MalformedLog):
        extract_intervals(build_log(10_000, bad))


def test_unclosed_action_closes_at_session_end_with_warning():
    body = [SessionEvent(5000, ROBOT, EventKind.ACTION_START,
                         {"action": "x", "block_id": None})]
    warnings = []
    ivs = extract_intervals(build_log(10_000, body), warnings=warnings)
    assert ActivityInterval(ROBOT, 5000, 10_000) in ivs
    assert warnings


def test_interleaved_fifo_pairing_matches_brute_force():
    rng = random.Random(7)
    for _ in range(50):
        body = []
        expected = []
        for agent in (ROBOT, H1, H2):
            # FIFO within an agent: starts then ends in the same order
            k = rng.randrange(1, 4)
            starts = sorted(rng.randrange(0, 20_000) for _ in range(k))
            ends = sorted(rng.randrange(20_000, 40_000) for _ in range(k))
            for s, e in zip(starts, ends):
                body += action(agent, s, e)
                expected.append(ActivityInterval(agent, s, e))
        log = build_log(40_000, body)
        assert sorted(extract_intervals(log), key=lambda iv: (iv.agent, iv.start_ms)) == \
            sorted(expected, key=lambda iv: (iv.agent, iv.start_ms))


# --- random logs vs the sweep oracle ----------------------------------------------

def random_log(rng, duration_ms=30_000):
    body = []
    for agent in (ROBOT, H1, H2):
        for _ in range(rng.randrange(0, 6)):
            s = rng.randrange(0, duration_ms - 1)
            e = rng.randrange(s + 1, duration_ms + 1)
            body += action(agent, s, min(e, duration_ms))
    for _ in range(rng.randrange(0, 4)):
        body.append(SessionEvent(rng.randrange(0, duration_ms), rng.choice([H1, H2]),
                                 EventKind.PUZZLE_MOVE,
                                 {"pid": "P1", "source": "tray:p0", "dest": "grid:0"}))
    return build_log(duration_ms, body)


def test_random_logs_match_sweep_oracle():
    rng = random.Random(2024)
    for _ in range(60):
        log = random_log(rng)
        duration = task_completion_time(log)
        ivs = extract_intervals(log)
        for agent in (ROBOT, H1, H2):
            assert idle_time(log, agent, intervals=ivs) == sweep_idle(ivs, duration, agent)
        analytic = concurrent_activity(log, intervals=ivs)
        assert analytic == pytest.approx(
            sweep_concurrent(ivs, duration, [ROBOT, H1, H2]), abs=1e-12)
        delays, _ = functional_delay(log, intervals=ivs)
        assert sorted(delays) == sorted(quadratic_delay_scan(ivs))
        # idle + active = duration, exactly, for every agent
        report = fluency_report(log)
        for agent in report.agents:
            assert report.idle_ms[agent] + report.active_ms[agent] == duration
        assert report.concurrent_activity_fraction <= 1.0


def test_time_translation_invariance():
    rng = random.Random(5)
    log = random_log(rng)
    shifted_events = [
        SessionEvent(e.ts_ms + 7000, e.agent, e.kind, e.payload) for e in log.events
    ]
    shifted = SessionLog(events=shifted_events)
    assert task_completion_time(log) == task_completion_time(shifted)
    assert idle_time(log, ROBOT) == idle_time(shifted, ROBOT)
    assert concurrent_activity(log) == pytest.approx(concurrent_activity(shifted))
    d1, _ = functional_delay(log)
    d2, _ = functional_delay(shifted)
    assert d1 == d2
    try:
        assert rhythm(log) == pytest.approx(rhythm(shifted))
    except InsufficientData:
        pass


def test_rhythm_scale_invariance():
    body = action(ROBOT, 0, 1000) + action(H1, 3000, 4000) + action(ROBOT, 9000, 9500)
    log = build_log(10_000, body)
    scaled_body = action(ROBOT, 0, 3000) + action(H1, 9000, 12_000) + action(ROBOT, 27_000, 28_500)
    scaled = build_log(30_000, scaled_body)
    assert rhythm(log) == pytest.approx(rhythm(scaled))
