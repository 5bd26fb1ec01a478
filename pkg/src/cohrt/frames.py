"""Newline-delimited frame grammar shared by the wire protocol and session logs.

A frame is one UTF-8 line holding a JSON object with exactly the keys
``kind``, ``seq``, ``ts``, ``payload`` in that order, compact separators,
and no literal newline anywhere inside. ``kind`` is a string, ``seq`` and
``ts`` are non-negative integers, ``payload`` is an object. What kinds are
admissible (and what their payloads must look like) is decided by the layer
above: the wire protocol and the session-log reader share this grammar but
use different vocabularies.
"""

from __future__ import annotations

import json
from typing import Any, Iterator

FRAME_KEYS = ("kind", "seq", "ts", "payload")


class FrameError(ValueError):
    """A byte sequence that is not a well-formed frame.

    ``reason`` is one of ``"truncated"`` (empty, undecodable, or incomplete
    input) or ``"bad_field"`` (parsed, but the object shape or a field type
    is wrong).
    """

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


def _canonical(value: Any) -> Any:
    # Nested objects are emitted with sorted keys so equal payloads always
    # produce identical bytes; the four top-level keys keep their fixed order.
    if isinstance(value, dict):
        return {k: _canonical(value[k]) for k in sorted(value)}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


def encode_frame(kind: str, seq: int, ts: int, payload: dict) -> bytes:
    """Serialize one frame, trailing newline included."""
    obj = {"kind": kind, "seq": seq, "ts": ts, "payload": _canonical(payload)}
    text = json.dumps(obj, separators=(",", ":"), ensure_ascii=True)
    return text.encode("utf-8") + b"\n"


def _check_int(obj: dict, key: str) -> int:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise FrameError("bad_field", f"{key} must be an integer")
    if v < 0:
        raise FrameError("bad_field", f"{key} must be non-negative")
    return v


def parse_frame(data: bytes | str) -> tuple[str, int, int, dict]:
    """Parse exactly one frame into ``(kind, seq, ts, payload)``.

    Accepts the frame with or without its trailing newline. Never raises
    anything but :class:`FrameError` on bad input.
    """
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FrameError("truncated", f"not UTF-8: {exc}") from None
    else:
        text = data
    if text.endswith("\n"):
        text = text[:-1]
    if not text.strip():
        raise FrameError("truncated", "empty input")
    if "\n" in text:
        raise FrameError("bad_field", "more than one frame (embedded newline)")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FrameError("truncated", f"not a complete JSON object: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise FrameError("bad_field", "frame is not a JSON object")
    if set(obj) != set(FRAME_KEYS):
        missing = set(FRAME_KEYS) - set(obj)
        extra = set(obj) - set(FRAME_KEYS)
        raise FrameError(
            "bad_field",
            f"wrong key set (missing={sorted(missing)}, extra={sorted(extra)})",
        )
    if not isinstance(obj["kind"], str):
        raise FrameError("bad_field", "kind must be a string")
    seq = _check_int(obj, "seq")
    ts = _check_int(obj, "ts")
    if not isinstance(obj["payload"], dict):
        raise FrameError("bad_field", "payload must be an object")
    return obj["kind"], seq, ts, obj["payload"]


def iter_frames(data: bytes) -> Iterator[tuple[str, int, int, dict]]:
    """Parse a concatenation of frames, in order.

    Every frame must be newline-terminated; a non-empty remainder after the
    last newline is reported as truncated.
    """
    if not data:
        return
    body, sep, rest = data.rpartition(b"\n")
    if rest:
        raise FrameError("truncated", "final frame lacks its newline")
    if not sep:
        raise FrameError("truncated", "no complete frame")
    for line in body.split(b"\n"):
        yield parse_frame(line)
