"""Central coordination: connection handling, allocation arbitration,
state broadcast, and the append-only session log.

Every mutation funnels through one lock, so allocation requests are decided
strictly in receipt order: for any burst of competing claims on a block,
exactly one is granted and the rest are denied with a reason. Timestamps on
logged events come from the server clock; client timestamps are advisory.
"""

from __future__ import annotations

import itertools
import logging
import threading
from dataclasses import dataclass
from typing import Callable

from .. import config as cfg
from ..events import EventKind, LogWriter, SessionEvent, SessionLog
from ..perception import (
    DetectionFrame,
    PerceptionError,
    StackHistory,
    infer_stacks,
    reconcile,
)
from ..protocol import PROTOCOL_VERSION, Message, MessageKind
from ..sim.clock import Scheduler
from ..world import (
    TransitionError,
    WorldState,
    apply_transition,
    check_allocation,
    is_session_done,
    new_session,
    state_to_dict,
)

logger = logging.getLogger(__name__)

PERCEPTION_AGENT = "perception"
SERVER_AGENT = "server"

_SWEEP_INTERVAL_MS = 1000


@dataclass(frozen=True)
class AllocationRequest:
    requester: str
    block_id: str
    request_receipt_order: int


@dataclass(frozen=True)
class AllocationResponse:
    granted: bool
    block_id: str
    receipt_order: int
    reason: str | None = None

    def to_payload(self) -> dict:
        return {"granted": self.granted, "block_id": self.block_id,
                "receipt_order": self.receipt_order, "reason": self.reason}


def handle_allocation(state: WorldState, req: AllocationRequest,
                      ts_ms: int = 0) -> tuple[WorldState, AllocationResponse]:
    """Decide one allocation request against a state (pure).

    A grant moves the block to Working under the requester; a denial leaves
    the state untouched and names the reason.
    """
    reason = check_allocation(state, req.requester, req.block_id)
    if reason is not None:
        return state, AllocationResponse(False, req.block_id,
                                         req.request_receipt_order, reason)
    event = SessionEvent(ts_ms=ts_ms, agent=req.requester, kind=EventKind.ALLOCATE,
                         payload={"block_id": req.block_id,
                                  "receipt_order": req.request_receipt_order})
    return apply_transition(state, event), AllocationResponse(
        True, req.block_id, req.request_receipt_order, None)


class _Connection:
    def __init__(self, port):
        self.port = port
        self.agent: str | None = None
        self.last_seq = 0


class CoordinationServer:
    def __init__(self, config: cfg.TaskConfig, scheduler: Scheduler,
                 log_path=None, abort_on_client_loss: bool = False,
                 on_end: Callable[[str], None] | None = None):
        self.config = config
        self.scheduler = scheduler
        self.state = new_session(config)
        self.writer = LogWriter(log_path)
        self.abort_on_client_loss = abort_on_client_loss
        self.on_end = on_end
        self.ended = False
        self.end_reason: str | None = None
        self._lock = threading.Lock()
        self._receipt = itertools.count()
        self._connections: list[_Connection] = []
        self._lost_agents: set[str] = set()
        self._claim_ts: dict[str, int] = {}
        self._history = StackHistory(depth=config.geometry.history_depth)
        self._tag_catalog = {spec.tag_id: bid for bid, spec in config.block_catalog.items()}
        self._last_frame_ts: int | None = None
        self._perception_seen = False
        self._sweep_handle = None
        self._begun = False

    # --- lifecycle -----------------------------------------------------------

    def begin(self) -> None:
        """Open the log with SessionStart and arm the watchdog."""
        with self._lock:
            if self._begun:
                return
            self._begun = True
            now = self.scheduler.now_ms()
            self._last_frame_ts = now
            self.writer.append(SessionEvent(
                ts_ms=now, agent=SERVER_AGENT, kind=EventKind.SESSION_START,
                payload={"config": cfg.to_dict(self.config), "seed": self.config.seed}))
            self._sweep_handle = self.scheduler.call_after(_SWEEP_INTERVAL_MS, self._sweep)

    @property
    def log(self) -> SessionLog:
        return self.writer.log

    def end_session(self, reason: str) -> None:
        with self._lock:
            self._end_session(reason)

    def _end_session(self, reason: str) -> None:
        if self.ended:
            return
        self.ended = True
        self.end_reason = reason
        if self._sweep_handle is not None:
            self._sweep_handle.cancel()
        self.writer.append(SessionEvent(
            ts_ms=self.scheduler.now_ms(), agent=SERVER_AGENT,
            kind=EventKind.SESSION_END, payload={"reason": reason}))
        self.writer.close()
        for conn in list(self._connections):
            if conn.agent is not None:
                self._send(conn, MessageKind.SESSION_END, {"reason": reason})
        if self.on_end is not None:
            self.on_end(reason)

    # --- connections ---------------------------------------------------------

    def attach(self, port) -> None:
        conn = _Connection(port)
        self._connections.append(conn)
        port.on_message = lambda msg: self.on_message(conn, msg)
        port.on_close = lambda: self._on_close(conn)

    def _send(self, conn: _Connection, kind: MessageKind, payload: dict) -> None:
        try:
            conn.port.send(kind, payload)
        except Exception as exc:
            self.writer.append(SessionEvent(
                ts_ms=self.scheduler.now_ms(), agent=SERVER_AGENT, kind=EventKind.NOTE,
                payload={"code": "send_failure",
                         "detail": f"{conn.agent or conn.port.label}: {exc}"}))

    def _on_close(self, conn: _Connection) -> None:
        with self._lock:
            if conn in self._connections:
                self._connections.remove(conn)
            if conn.agent is None or self.ended:
                return
            self._lost_agents.add(conn.agent)
            self.writer.append(SessionEvent(
                ts_ms=self.scheduler.now_ms(), agent=conn.agent,
                kind=EventKind.CLIENT_LOST, payload={}))
            # the agent's Working blocks stay claimed until the timeout sweep
            if self.abort_on_client_loss:
                self._end_session("client_lost")

    # --- inbound dispatch ------------------------------------------------------

    def on_message(self, conn: _Connection, msg: Message) -> None:
        with self._lock:
            if self.ended:
                return
            if msg.seq <= conn.last_seq:
                self._send(conn, MessageKind.ERROR,
                           {"code": "seq_regression",
                            "detail": f"seq {msg.seq} after {conn.last_seq}"})
                return
            conn.last_seq = msg.seq
            if conn.agent is None:
                if msg.kind is MessageKind.HELLO:
                    self._handle_hello(conn, msg)
                else:
                    self._send(conn, MessageKind.ERROR,
                               {"code": "hello_required", "detail": msg.kind.value})
                return
            handler = self._HANDLERS.get(msg.kind)
            if handler is None:
                self._send(conn, MessageKind.ERROR,
                           {"code": "unexpected_kind", "detail": msg.kind.value})
                return
            handler(self, conn, msg)

    def _handle_hello(self, conn: _Connection, msg: Message) -> None:
        if msg.payload["version"] != PROTOCOL_VERSION:
            self._send(conn, MessageKind.ERROR,
                       {"code": "version_mismatch",
                        "detail": f"server speaks {PROTOCOL_VERSION}"})
            conn.port.close()
            return
        agent = msg.payload["agent"]
        if any(c.agent == agent for c in self._connections if c is not conn):
            self._send(conn, MessageKind.ERROR,
                       {"code": "agent_taken", "detail": agent})
            return
        conn.agent = agent
        if agent == PERCEPTION_AGENT:
            self._perception_seen = True
        if agent in self._lost_agents:
            self._lost_agents.discard(agent)
            self.writer.append(SessionEvent(
                ts_ms=self.scheduler.now_ms(), agent=agent,
                kind=EventKind.CLIENT_REJOINED, payload={}))
        self._send(conn, MessageKind.CONFIG_PUSH, {"config": cfg.to_dict(self.config)})
        self._send(conn, MessageKind.STATE_UPDATE, {"state": state_to_dict(self.state)})

    def _apply_and_log(self, event: SessionEvent) -> None:
        self.state = apply_transition(self.state, event)
        self.writer.append(event)
        if event.kind is EventKind.ALLOCATE:
            self._claim_ts[event.payload["block_id"]] = event.ts_ms
        elif event.kind in (EventKind.RELEASE, EventKind.STACK_PLACED):
            self._claim_ts.pop(event.payload["block_id"], None)

    def _after_change(self) -> None:
        self.broadcast_state()
        if is_session_done(self.state):
            self._end_session("completed")

    def _reply_error(self, conn: _Connection, exc: TransitionError) -> None:
        self._send(conn, MessageKind.ERROR,
                   {"code": type(exc).__name__, "detail": str(exc)})

    def _handle_start_task(self, conn: _Connection, msg: Message) -> None:
        pid = msg.payload["pid"]
        if conn.agent != f"human:{pid}":
            self._send(conn, MessageKind.ERROR,
                       {"code": "not_your_task", "detail": pid})
            return
        event = SessionEvent(ts_ms=self.scheduler.now_ms(), agent=conn.agent,
                             kind=EventKind.START_TASK, payload={"pid": pid})
        try:
            self._apply_and_log(event)
        except TransitionError as exc:
            self._reply_error(conn, exc)
            return
        self._after_change()

    def _handle_allocation_request(self, conn: _Connection, msg: Message) -> None:
        if msg.payload["requester"] != conn.agent:
            self._send(conn, MessageKind.ERROR,
                       {"code": "requester_mismatch", "detail": conn.agent or "?"})
            return
        response = self._decide_allocation(conn.agent, msg.payload["block_id"])
        self._send(conn, MessageKind.ALLOCATION_RESPONSE, response.to_payload())
        if response.granted:
            self._after_change()

    def _decide_allocation(self, agent: str, block_id: str) -> AllocationResponse:
        now = self.scheduler.now_ms()
        req = AllocationRequest(requester=agent, block_id=block_id,
                                request_receipt_order=next(self._receipt))
        new_state, response = handle_allocation(self.state, req, ts_ms=now)
        if response.granted:
            self.state = new_state
            self._claim_ts[block_id] = now
            self.writer.append(SessionEvent(
                ts_ms=now, agent=agent, kind=EventKind.ALLOCATE,
                payload={"block_id": block_id,
                         "receipt_order": req.request_receipt_order}))
        else:
            self.writer.append(SessionEvent(
                ts_ms=now, agent=agent, kind=EventKind.ALLOCATION_DENIED,
                payload={"block_id": block_id, "reason": response.reason,
                         "receipt_order": req.request_receipt_order}))
        return response

    def request_allocation(self, agent: str, block_id: str) -> AllocationResponse:
        """Direct arbitration entry point (same lock, same receipt order)."""
        with self._lock:
            if self.ended:
                return AllocationResponse(False, block_id, -1, "WrongPhase")
            response = self._decide_allocation(agent, block_id)
            if response.granted:
                self._after_change()
            return response

    def _handle_release(self, conn: _Connection, msg: Message) -> None:
        if msg.payload["agent"] != conn.agent:
            self._send(conn, MessageKind.ERROR,
                       {"code": "requester_mismatch", "detail": conn.agent or "?"})
            return
        event = SessionEvent(ts_ms=self.scheduler.now_ms(), agent=conn.agent,
                             kind=EventKind.RELEASE,
                             payload={"block_id": msg.payload["block_id"],
                                      "reason": "explicit"})
        try:
            self._apply_and_log(event)
        except TransitionError as exc:
            self._reply_error(conn, exc)
            return
        self._after_change()

    def _handle_puzzle_move(self, conn: _Connection, msg: Message) -> None:
        pid = msg.payload["pid"]
        if conn.agent != f"human:{pid}":
            self._send(conn, MessageKind.ERROR,
                       {"code": "not_your_puzzle", "detail": pid})
            return
        event = SessionEvent(ts_ms=self.scheduler.now_ms(), agent=conn.agent,
                             kind=EventKind.PUZZLE_MOVE,
                             payload={"pid": pid, "source": msg.payload["source"],
                                      "dest": msg.payload["dest"]})
        try:
            self._apply_and_log(event)
        except TransitionError as exc:
            self._reply_error(conn, exc)
            return
        self._after_change()

    def _handle_detection_frame(self, conn: _Connection, msg: Message) -> None:
        if conn.agent != PERCEPTION_AGENT:
            self._send(conn, MessageKind.ERROR,
                       {"code": "not_perception", "detail": conn.agent or "?"})
            return
        now = self.scheduler.now_ms()
        self._last_frame_ts = now
        frame = DetectionFrame.from_payload(msg.payload)
        try:
            observations = infer_stacks(frame, self._tag_catalog, self.config.geometry)
            result = reconcile(self.state, observations, self._history)
        except PerceptionError as exc:
            self.writer.append(SessionEvent(
                ts_ms=now, agent=PERCEPTION_AGENT, kind=EventKind.NOTE,
                payload={"code": type(exc).__name__, "detail": str(exc)}))
            return
        changed = False
        for placement in result.placements:
            manipulator = self.state.blocks[placement.block_id].manipulator
            event = SessionEvent(
                ts_ms=now, agent=manipulator or PERCEPTION_AGENT,
                kind=EventKind.STACK_PLACED,
                payload={"block_id": placement.block_id,
                         "beneficiary": placement.station_id,
                         "slot": placement.slot})
            try:
                self._apply_and_log(event)
                changed = True
            except TransitionError as exc:  # perception raced a release
                self.writer.append(SessionEvent(
                    ts_ms=now, agent=PERCEPTION_AGENT, kind=EventKind.NOTE,
                    payload={"code": type(exc).__name__, "detail": str(exc)}))
        for mismatch in result.mismatches:
            holder = None
            if mismatch.block_id is not None and mismatch.block_id in self.state.blocks:
                holder = self.state.blocks[mismatch.block_id].manipulator
            self.writer.append(SessionEvent(
                ts_ms=now, agent=holder or PERCEPTION_AGENT, kind=EventKind.MISMATCH,
                payload={"station": mismatch.station_id, "slot": mismatch.slot,
                         "block_id": mismatch.block_id, "detail": mismatch.detail}))
        if changed:
            self._after_change()

    def _handle_action_mark(self, conn: _Connection, msg: Message) -> None:
        if msg.payload["agent"] != conn.agent:
            self._send(conn, MessageKind.ERROR,
                       {"code": "requester_mismatch", "detail": conn.agent or "?"})
            return
        kind = (EventKind.ACTION_START if msg.kind is MessageKind.ACTION_START
                else EventKind.ACTION_END)
        self.writer.append(SessionEvent(
            ts_ms=self.scheduler.now_ms(), agent=conn.agent, kind=kind,
            payload={"action": msg.payload["action"],
                     "block_id": msg.payload["block_id"]}))

    def _handle_client_error(self, conn: _Connection, msg: Message) -> None:
        self.writer.append(SessionEvent(
            ts_ms=self.scheduler.now_ms(), agent=conn.agent or "?",
            kind=EventKind.NOTE,
            payload={"code": msg.payload["code"], "detail": msg.payload["detail"]}))

    def _handle_heartbeat(self, conn: _Connection, msg: Message) -> None:
        pass  # liveness is carried by the transport; nothing to record

    _HANDLERS = {
        MessageKind.START_TASK: _handle_start_task,
        MessageKind.ALLOCATION_REQUEST: _handle_allocation_request,
        MessageKind.RELEASE_BLOCK: _handle_release,
        MessageKind.PUZZLE_MOVE: _handle_puzzle_move,
        MessageKind.DETECTION_FRAME: _handle_detection_frame,
        MessageKind.ACTION_START: _handle_action_mark,
        MessageKind.ACTION_END: _handle_action_mark,
        MessageKind.ERROR: _handle_client_error,
        MessageKind.HEARTBEAT: _handle_heartbeat,
    }

    # --- broadcast and watchdog ---------------------------------------------------

    def broadcast_state(self) -> None:
        payload = {"state": state_to_dict(self.state)}
        for conn in list(self._connections):
            if conn.agent is not None:
                self._send(conn, MessageKind.STATE_UPDATE, payload)

    def _sweep(self) -> None:
        with self._lock:
            if self.ended:
                return
            now = self.scheduler.now_ms()
            timeout = self.config.timing.working_timeout_ms
            for block_id, claimed in list(self._claim_ts.items()):
                if now - claimed < timeout:
                    continue
                holder = self.state.blocks[block_id].manipulator
                event = SessionEvent(ts_ms=now, agent=holder, kind=EventKind.RELEASE,
                                     payload={"block_id": block_id, "reason": "timeout"})
                try:
                    self._apply_and_log(event)
                except TransitionError:
                    self._claim_ts.pop(block_id, None)
                    continue
                self.broadcast_state()
            if (self._perception_seen and self._last_frame_ts is not None
                    and now - self._last_frame_ts > self.config.timing.perception_stall_ms):
                self._end_session("perception_stall")
                return
            self._sweep_handle = self.scheduler.call_after(_SWEEP_INTERVAL_MS, self._sweep)
