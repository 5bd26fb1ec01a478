"""Append-only session log.

Every state transition and agent action ends up here as a timestamped
:class:`SessionEvent`; the log file is the audit trail, the replay input,
and the sole input to the fluency metrics. On disk it is one frame per
line in the shared grammar, with the event's agent carried inside the
payload.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable

from .frames import FrameError, encode_frame, parse_frame


class EventKind(str, Enum):
    SESSION_START = "SessionStart"
    START_TASK = "StartTask"
    ALLOCATE = "Allocate"
    ALLOCATION_DENIED = "AllocationDenied"
    RELEASE = "Release"
    STACK_PLACED = "StackPlaced"
    MISMATCH = "Mismatch"
    PUZZLE_MOVE = "PuzzleMove"
    ACTION_START = "ActionStart"
    ACTION_END = "ActionEnd"
    CLIENT_LOST = "ClientLost"
    CLIENT_REJOINED = "ClientRejoined"
    NOTE = "Note"
    SESSION_END = "SessionEnd"


# The kinds that drive the world model's transition function; everything else
# is observational.
STATE_CHANGING = frozenset({
    EventKind.START_TASK,
    EventKind.ALLOCATE,
    EventKind.RELEASE,
    EventKind.STACK_PLACED,
    EventKind.PUZZLE_MOVE,
})

_KIND_BY_VALUE = {k.value: k for k in EventKind}


class MalformedLog(ValueError):
    pass


@dataclass(frozen=True)
class SessionEvent:
    ts_ms: int
    agent: str
    kind: EventKind
    payload: dict = field(default_factory=dict)

    def to_frame(self, seq: int) -> bytes:
        return encode_frame(self.kind.value, seq, self.ts_ms,
                            {"agent": self.agent, **self.payload})


def event_from_frame(line: bytes | str) -> SessionEvent:
    try:
        kind_name, _seq, ts, payload = parse_frame(line)
    except FrameError as exc:
        raise MalformedLog(str(exc)) from None
    kind = _KIND_BY_VALUE.get(kind_name)
    if kind is None:
        raise MalformedLog(f"unknown event kind {kind_name!r}")
    if "agent" not in payload or not isinstance(payload["agent"], str):
        raise MalformedLog(f"{kind_name} event lacks an agent")
    body = {k: v for k, v in payload.items() if k != "agent"}
    return SessionEvent(ts_ms=ts, agent=payload["agent"], kind=kind, payload=body)


@dataclass
class SessionLog:
    events: list[SessionEvent] = field(default_factory=list)

    def append(self, event: SessionEvent) -> None:
        self.events.append(event)

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def validate(self) -> None:
        """Raise :class:`MalformedLog` unless the log is well-formed."""
        if not self.events:
            raise MalformedLog("log is empty")
        if self.events[0].kind is not EventKind.SESSION_START:
            raise MalformedLog("first event must be SessionStart")
        if self.events[-1].kind is not EventKind.SESSION_END:
            raise MalformedLog("last event must be SessionEnd")
        for i, e in enumerate(self.events[1:-1], start=1):
            if e.kind in (EventKind.SESSION_START, EventKind.SESSION_END):
                raise MalformedLog(f"{e.kind.value} at interior position {i}")
        last = self.events[0].ts_ms
        for e in self.events:
            if e.ts_ms < last:
                raise MalformedLog("timestamps must be non-decreasing")
            last = e.ts_ms

    def to_bytes(self) -> bytes:
        return b"".join(e.to_frame(i) for i, e in enumerate(self.events))

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())


def read_log(path: str | Path) -> SessionLog:
    log = SessionLog()
    data = Path(path).read_bytes()
    for line in data.splitlines():
        if line.strip():
            log.append(event_from_frame(line))
    return log


class LogWriter:
    """Accumulates the in-memory log and mirrors each event to a file."""

    def __init__(self, path: str | Path | None = None):
        self.log = SessionLog()
        self._fh: IO[bytes] | None = None
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "wb")

    def append(self, event: SessionEvent) -> None:
        seq = len(self.log)
        self.log.append(event)
        if self._fh is not None:
            self._fh.write(event.to_frame(seq))
            self._fh.flush()

    def extend(self, events: Iterable[SessionEvent]) -> None:
        for e in events:
            self.append(e)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
