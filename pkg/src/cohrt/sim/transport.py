"""In-memory message ports for simulated sessions.

A port pair behaves like the two ends of a stream connection: sends are
encoded to wire bytes, delivery is a scheduled event (so ordering is owned
by the scheduler, never by thread timing), and each direction keeps its own
sequence counter.
"""

from __future__ import annotations

from typing import Callable

from ..protocol import Message, MessageKind, decode_message, encode_message
from .clock import Scheduler


class PortClosed(RuntimeError):
    pass


class MessagePort:
    """One endpoint: ``send`` stamps seq/ts and hands bytes to the peer."""

    def __init__(self, scheduler: Scheduler, label: str):
        self.scheduler = scheduler
        self.label = label
        self.peer: "MessagePort | None" = None
        self.on_message: Callable[[Message], None] | None = None
        self.on_close: Callable[[], None] | None = None
        self.closed = False
        self._seq = 0

    def send(self, kind: MessageKind, payload: dict) -> Message:
        if self.closed:
            raise PortClosed(self.label)
        self._seq += 1
        msg = Message(kind=kind, seq=self._seq, ts=self.scheduler.now_ms(), payload=payload)
        data = encode_message(msg)
        peer = self.peer
        self.scheduler.call_after(0, lambda: peer._deliver(data))
        return msg

    def _deliver(self, data: bytes) -> None:
        if self.closed or self.on_message is None:
            return
        self.on_message(decode_message(data))

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        peer = self.peer
        if peer is not None and not peer.closed:
            self.scheduler.call_after(0, peer._peer_closed)

    def _peer_closed(self) -> None:
        if self.closed:
            return
        self.closed = True
        if self.on_close is not None:
            self.on_close()


def port_pair(scheduler: Scheduler, label: str) -> tuple[MessagePort, MessagePort]:
    """(client side, server side) of one connection."""
    a = MessagePort(scheduler, f"{label}:client")
    b = MessagePort(scheduler, f"{label}:server")
    a.peer, b.peer = b, a
    return a, b
