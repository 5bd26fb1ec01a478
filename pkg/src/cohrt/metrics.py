"""Team-fluency metrics over a session log.

All metrics derive from activity intervals: ActionStart/ActionEnd pairs
(FIFO per agent) plus puzzle moves widened to a minimum activity width.
Idle time is the session duration minus the union of an agent's intervals;
concurrent activity is the fraction of the session during which the robot
and every human are simultaneously active; functional delay is the lag from
one agent's action end to the next action start by a different agent; the
rhythm coefficient is stddev/mean of the gaps between consecutive
cross-agent action starts (consecutive starts by the same agent collapse
into the first of the run).
"""

from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field

from .events import EventKind, MalformedLog, SessionLog

logger = logging.getLogger(__name__)

DEFAULT_MIN_ACTIVITY_MS = 500


class UnknownAgent(ValueError):
    pass


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class ActivityInterval:
    agent: str
    start_ms: int
    end_ms: int


@dataclass
class FluencyReport:
    task_completion_ms: int
    agents: list[str]
    idle_ms: dict[str, int]
    idle_fraction: dict[str, float]
    active_ms: dict[str, int]
    concurrent_activity_fraction: float
    pairwise_overlap_fraction: dict[str, float]
    functional_delays_ms: list[int]
    functional_delay_mean_ms: float | None
    functional_delay_median_ms: float | None
    rhythm_cv: float | None
    robot_contributions: dict[str, int]
    warnings: list[str] = field(default_factory=list)


def _bounds(log: SessionLog) -> tuple[int, int]:
    log.validate()
    return log.events[0].ts_ms, log.events[-1].ts_ms


def team_agents(log: SessionLog) -> list[str]:
    """The metric roster: the robot plus every human participant."""
    start = log.events[0]
    participants = start.payload.get("config", {}).get("participants")
    if participants is None:
        raise MalformedLog("SessionStart carries no config")
    return ["robot"] + [f"human:{pid}" for pid in participants]


def extract_intervals(log: SessionLog,
                      min_activity_ms: int = DEFAULT_MIN_ACTIVITY_MS,
                      warnings: list[str] | None = None) -> list[ActivityInterval]:
    """Activity intervals: per-agent FIFO Start/End pairing plus widened moves.

    Unclosed actions are closed at SessionEnd with a warning; an end with no
    open start is malformed. Intervals are clipped to the session bounds.
    """
    start_ts, end_ts = _bounds(log)
    open_starts: dict[str, list[int]] = {}
    intervals: list[ActivityInterval] = []

    def clip(a: int, b: int) -> tuple[int, int]:
        return max(a, start_ts), min(b, end_ts)

    for e in log:
        if e.kind is EventKind.ACTION_START:
            open_starts.setdefault(e.agent, []).append(e.ts_ms)
        elif e.kind is EventKind.ACTION_END:
            queue = open_starts.get(e.agent) or []
            if not queue:
                raise MalformedLog(f"ActionEnd for {e.agent} at {e.ts_ms} without a start")
            s = queue.pop(0)
            a, b = clip(s, e.ts_ms)
            intervals.append(ActivityInterval(e.agent, a, b))
        elif e.kind is EventKind.PUZZLE_MOVE:
            a, b = clip(e.ts_ms, e.ts_ms + min_activity_ms)
            intervals.append(ActivityInterval(e.agent, a, b))
    for agent, queue in open_starts.items():
        for s in queue:
            msg = f"unclosed action for {agent} starting at {s}; closed at session end"
            logger.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            a, b = clip(s, end_ts)
            intervals.append(ActivityInterval(agent, a, b))
    intervals.sort(key=lambda iv: (iv.start_ms, iv.agent, iv.end_ms))
    return intervals


def _union_measure(spans: list[tuple[int, int]]) -> int:
    total = 0
    current_start: int | None = None
    current_end = 0
    for a, b in sorted(spans):
        if current_start is None or a > current_end:
            if current_start is not None:
                total += current_end - current_start
            current_start, current_end = a, b
        else:
            current_end = max(current_end, b)
    if current_start is not None:
        total += current_end - current_start
    return total


def task_completion_time(log: SessionLog) -> int:
    start_ts, end_ts = _bounds(log)
    return end_ts - start_ts


def idle_time(log: SessionLog, agent: str,
              min_activity_ms: int = DEFAULT_MIN_ACTIVITY_MS,
              intervals: list[ActivityInterval] | None = None) -> int:
    if agent not in team_agents(log):
        raise UnknownAgent(agent)
    if intervals is None:
        intervals = extract_intervals(log, min_activity_ms)
    duration = task_completion_time(log)
    spans = [(iv.start_ms, iv.end_ms) for iv in intervals if iv.agent == agent]
    return duration - _union_measure(spans)


def _overlap_measure(per_agent: dict[str, list[tuple[int, int]]],
                     agents: list[str]) -> int:
    """Length of time during which every listed agent is active."""
    if any(not per_agent.get(a) for a in agents):
        return 0
    boundaries = sorted({t for a in agents for span in per_agent[a] for t in span})
    total = 0
    for lo, hi in zip(boundaries, boundaries[1:]):
        mid_ok = all(
            any(s <= lo and hi <= e for s, e in per_agent[a]) for a in agents
        )
        if mid_ok:
            total += hi - lo
    return total


def _spans_by_agent(intervals: list[ActivityInterval]) -> dict[str, list[tuple[int, int]]]:
    spans: dict[str, list[tuple[int, int]]] = {}
    for iv in intervals:
        spans.setdefault(iv.agent, []).append((iv.start_ms, iv.end_ms))
    return spans


def concurrent_activity(log: SessionLog,
                        min_activity_ms: int = DEFAULT_MIN_ACTIVITY_MS,
                        intervals: list[ActivityInterval] | None = None) -> float:
    """Fraction of the session during which all team members are active."""
    agents = team_agents(log)
    if len(agents) < 2:
        raise MalformedLog("concurrent activity needs at least two agents")
    if intervals is None:
        intervals = extract_intervals(log, min_activity_ms)
    duration = task_completion_time(log)
    if duration == 0:
        return 0.0
    return _overlap_measure(_spans_by_agent(intervals), agents) / duration


def functional_delay(log: SessionLog,
                     min_activity_ms: int = DEFAULT_MIN_ACTIVITY_MS,
                     intervals: list[ActivityInterval] | None = None
                     ) -> tuple[list[int], dict[str, float] | None]:
    """Per-handoff delays plus a mean/median summary.

    For each interval, the delay from its end to the earliest start (at or
    after its own start) by a different agent; overlap clips to zero.
    Single-agent logs yield an empty list and no summary.
    """
    if intervals is None:
        intervals = extract_intervals(log, min_activity_ms)
    agents_seen = {iv.agent for iv in intervals}
    if len(agents_seen) < 2:
        return [], None
    starts = sorted((iv.start_ms, iv.agent) for iv in intervals)
    delays: list[int] = []
    for iv in intervals:
        nxt = None
        for s, agent in starts:
            if agent != iv.agent and s >= iv.start_ms:
                nxt = s
                break
        if nxt is None:
            continue
        delays.append(max(0, nxt - iv.end_ms))
    if not delays:
        return [], None
    summary = {
        "mean_ms": statistics.fmean(delays),
        "median_ms": float(statistics.median(delays)),
    }
    return delays, summary


def rhythm(log: SessionLog,
           min_activity_ms: int = DEFAULT_MIN_ACTIVITY_MS,
           intervals: list[ActivityInterval] | None = None) -> float:
    """Coefficient of variation of cross-agent inter-start gaps (lower = steadier)."""
    if intervals is None:
        intervals = extract_intervals(log, min_activity_ms)
    starts = sorted((iv.start_ms, iv.agent) for iv in intervals)
    transitions: list[int] = []
    prev_agent = None
    for ts, agent in starts:
        if agent != prev_agent:
            transitions.append(ts)
            prev_agent = agent
    if len(transitions) < 3:
        raise InsufficientData(
            f"need at least 3 cross-agent transitions, have {len(transitions)}")
    gaps = [b - a for a, b in zip(transitions, transitions[1:])]
    mean = statistics.fmean(gaps)
    if mean == 0:
        return 0.0
    return statistics.pstdev(gaps) / mean


def robot_contributions(log: SessionLog) -> dict[str, int]:
    """Blocks the robot stacked, counted per beneficiary participant."""
    counts: dict[str, int] = {}
    for e in log:
        if e.kind is EventKind.STACK_PLACED and e.agent == "robot":
            pid = e.payload.get("beneficiary", "?")
            counts[pid] = counts.get(pid, 0) + 1
    return counts


def fluency_report(log: SessionLog,
                   min_activity_ms: int = DEFAULT_MIN_ACTIVITY_MS) -> FluencyReport:
    warnings: list[str] = []
    intervals = extract_intervals(log, min_activity_ms, warnings=warnings)
    agents = team_agents(log)
    duration = task_completion_time(log)
    idle = {a: idle_time(log, a, intervals=intervals) for a in agents}
    active = {a: duration - idle[a] for a in agents}
    idle_frac = {a: (idle[a] / duration if duration else 0.0) for a in agents}
    spans = _spans_by_agent(intervals)
    pairwise = {}
    for i, a in enumerate(agents):
        for b in agents[i + 1:]:
            frac = (_overlap_measure(spans, [a, b]) / duration) if duration else 0.0
            pairwise[f"{a}|{b}"] = frac
    delays, summary = functional_delay(log, intervals=intervals)
    try:
        cv = rhythm(log, intervals=intervals)
    except InsufficientData:
        cv = None
    return FluencyReport(
        task_completion_ms=duration,
        agents=agents,
        idle_ms=idle,
        idle_fraction=idle_frac,
        active_ms=active,
        concurrent_activity_fraction=concurrent_activity(log, intervals=intervals),
        pairwise_overlap_fraction=pairwise,
        functional_delays_ms=delays,
        functional_delay_mean_ms=summary["mean_ms"] if summary else None,
        functional_delay_median_ms=summary["median_ms"] if summary else None,
        rhythm_cv=cv,
        robot_contributions=robot_contributions(log),
        warnings=warnings,
    )
