"""Wire protocol: every message exchanged between server, robot, humans,
and perception sources.

Messages ride the line-frame grammar from :mod:`cohrt.frames`. Encoding is
deterministic (equal messages produce identical bytes) and decoding is total:
any byte input yields either a valid :class:`Message` or a
:class:`DecodeError`, never an uncaught crash.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

from .frames import FrameError, encode_frame, iter_frames, parse_frame

PROTOCOL_VERSION = 1


class MessageKind(str, Enum):
    HELLO = "Hello"
    CONFIG_PUSH = "ConfigPush"
    START_TASK = "StartTask"
    ALLOCATION_REQUEST = "AllocationRequest"
    ALLOCATION_RESPONSE = "AllocationResponse"
    RELEASE_BLOCK = "ReleaseBlock"
    PUZZLE_MOVE = "PuzzleMove"
    STATE_UPDATE = "StateUpdate"
    DETECTION_FRAME = "DetectionFrame"
    ACTION_START = "ActionStart"
    ACTION_END = "ActionEnd"
    SESSION_END = "SessionEnd"
    ERROR = "Error"
    HEARTBEAT = "Heartbeat"


class SchemaViolation(ValueError):
    """Payload does not match the schema of its message kind."""


class DecodeReason(str, Enum):
    TRUNCATED = "truncated"
    UNKNOWN_KIND = "unknown_kind"
    BAD_FIELD = "bad_field"


class DecodeError(ValueError):
    """Structured decode failure; ``reason`` names the failure class."""

    def __init__(self, reason: DecodeReason, detail: str = ""):
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)
        self.reason = reason
        self.detail = detail


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    seq: int
    ts: int
    payload: dict = field(default_factory=dict)


# --- payload schemas ---------------------------------------------------------
#
# One schema per kind: an ordered list of (field, checker) pairs plus an
# optional whole-payload check. Unknown payload fields are rejected.

Checker = Callable[[Any], bool]


def _is_str(v: Any) -> bool:
    return isinstance(v, str) and len(v) > 0


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_nonneg_int(v: Any) -> bool:
    return _is_int(v) and v >= 0


def _is_bool(v: Any) -> bool:
    return isinstance(v, bool)


def _is_obj(v: Any) -> bool:
    return isinstance(v, dict)


def _is_opt_str(v: Any) -> bool:
    return v is None or _is_str(v)


def _is_number(v: Any) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)
            and v == v and abs(v) != float("inf"))


def _is_detections(v: Any) -> bool:
    if not isinstance(v, list):
        return False
    seen_tags = set()
    for d in v:
        if not isinstance(d, dict) or set(d) != {"tag_id", "position", "station_id"}:
            return False
        if not _is_nonneg_int(d["tag_id"]) or d["tag_id"] in seen_tags:
            return False
        seen_tags.add(d["tag_id"])
        pos = d["position"]
        if not (isinstance(pos, list) and len(pos) == 3 and all(_is_number(c) for c in pos)):
            return False
        if pos[2] < 0:  # z below the desk plane is physically impossible
            return False
        if not _is_str(d["station_id"]):
            return False
    return True


def _check_allocation_response(payload: dict) -> str | None:
    if payload["granted"] and payload.get("reason") is not None:
        return "granted response must carry no reason"
    if not payload["granted"] and payload.get("reason") is None:
        return "denied response must carry a reason"
    return None


_SCHEMAS: dict[MessageKind, tuple[list[tuple[str, Checker]], Callable[[dict], str | None] | None]] = {
    MessageKind.HELLO: ([("agent", _is_str), ("version", _is_nonneg_int)], None),
    MessageKind.CONFIG_PUSH: ([("config", _is_obj)], None),
    MessageKind.START_TASK: ([("pid", _is_str)], None),
    MessageKind.ALLOCATION_REQUEST: ([("requester", _is_str), ("block_id", _is_str)], None),
    MessageKind.ALLOCATION_RESPONSE: (
        [("granted", _is_bool), ("block_id", _is_str),
         ("receipt_order", _is_nonneg_int), ("reason", _is_opt_str)],
        _check_allocation_response,
    ),
    MessageKind.RELEASE_BLOCK: ([("agent", _is_str), ("block_id", _is_str)], None),
    MessageKind.PUZZLE_MOVE: ([("pid", _is_str), ("source", _is_str), ("dest", _is_str)], None),
    MessageKind.STATE_UPDATE: ([("state", _is_obj)], None),
    MessageKind.DETECTION_FRAME: ([("ts_ms", _is_nonneg_int), ("detections", _is_detections)], None),
    MessageKind.ACTION_START: ([("agent", _is_str), ("action", _is_str), ("block_id", _is_opt_str)], None),
    MessageKind.ACTION_END: ([("agent", _is_str), ("action", _is_str), ("block_id", _is_opt_str)], None),
    MessageKind.SESSION_END: ([("reason", _is_str)], None),
    MessageKind.ERROR: ([("code", _is_str), ("detail", _is_str)], None),
    MessageKind.HEARTBEAT: ([], None),
}

_KIND_BY_VALUE = {k.value: k for k in MessageKind}


def validate_payload(kind: MessageKind, payload: dict) -> str | None:
    """Return a violation description, or None if the payload fits ``kind``."""
    fields, extra_check = _SCHEMAS[kind]
    names = [n for n, _ in fields]
    unknown = set(payload) - set(names)
    if unknown:
        return f"unknown payload fields {sorted(unknown)}"
    for name, check in fields:
        if name not in payload:
            return f"missing payload field {name!r}"
        if not check(payload[name]):
            return f"payload field {name!r} has a bad value"
    if extra_check is not None:
        return extra_check(payload)
    return None


def ordered_payload(kind: MessageKind, payload: dict) -> dict:
    """Payload with its top-level fields in schema order."""
    fields, _ = _SCHEMAS[kind]
    return {name: payload[name] for name, _ in fields}


def encode_message(m: Message) -> bytes:
    """Encode one message as a single frame.

    Raises :class:`SchemaViolation` if the payload does not match the kind.
    """
    violation = validate_payload(m.kind, m.payload)
    if violation is not None:
        raise SchemaViolation(f"{m.kind.value}: {violation}")
    return encode_frame(m.kind.value, m.seq, m.ts, ordered_payload(m.kind, m.payload))


def _message_from_parts(kind_name: str, seq: int, ts: int, payload: dict) -> Message:
    kind = _KIND_BY_VALUE.get(kind_name)
    if kind is None:
        raise DecodeError(DecodeReason.UNKNOWN_KIND, f"kind {kind_name!r}")
    violation = validate_payload(kind, payload)
    if violation is not None:
        raise DecodeError(DecodeReason.BAD_FIELD, f"{kind_name}: {violation}")
    return Message(kind=kind, seq=seq, ts=ts, payload=payload)


def decode_message(data: bytes | str) -> Message:
    """Decode exactly one frame; raises :class:`DecodeError` on any bad input."""
    try:
        kind_name, seq, ts, payload = parse_frame(data)
    except FrameError as exc:
        raise DecodeError(DecodeReason(exc.reason), exc.detail) from None
    return _message_from_parts(kind_name, seq, ts, payload)


def decode_stream(data: bytes) -> list[Message]:
    """Decode a concatenation of frames to the same messages, in order."""
    try:
        return [_message_from_parts(*parts) for parts in iter_frames(data)]
    except FrameError as exc:
        raise DecodeError(DecodeReason(exc.reason), exc.detail) from None
