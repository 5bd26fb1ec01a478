"""Scripted human participants.

Each agent is a reactive state machine driven by state updates: start after
a short delay, solve the puzzle piece by piece with sampled think times,
then fetch-and-place blocks from its own station whenever the stack's next
needed color sits on top of its pile. Walking to the inventory station and
back is modeled by the fetch round-trip distribution. All samples come from
a per-agent seeded generator, so a scenario is reproducible bit for bit.
"""

from __future__ import annotations

import hashlib
import logging
import random
from dataclasses import dataclass

from .. import config as cfg
from ..protocol import PROTOCOL_VERSION, Message, MessageKind
from ..world import Phase, WorldState, state_from_dict, topmost_unstacked
from .clock import Scheduler
from .ground_truth import GroundTruthWorld

logger = logging.getLogger(__name__)


def derive_seed(base_seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class ScriptedAgentProfile:
    pid: str
    think_time_ms: tuple[int, int] = (800, 2500)
    fetch_round_trip_ms: tuple[int, int] = (6000, 12000)
    start_delay_ms: tuple[int, int] = (500, 1500)
    retry_ms: int = 1000


class ScriptedHuman:
    def __init__(self, profile: ScriptedAgentProfile, scheduler: Scheduler,
                 ground_truth: GroundTruthWorld, base_seed: int):
        self.profile = profile
        self.scheduler = scheduler
        self.ground_truth = ground_truth
        self.agent = f"human:{profile.pid}"
        self.rng = random.Random(derive_seed(base_seed, self.agent))
        self.port = None
        self.config: cfg.TaskConfig | None = None
        self.view: WorldState | None = None
        self.ended = False
        self.connected = False
        self._busy: str | None = None  # thinking | moving | requesting | fetching
        self._pending_block: str | None = None
        self._solve_order: list[str] | None = None
        self._timers: list = []
        self._started = False

    # --- connection management (supports disconnect/rejoin faults) -----------

    def connect(self, port) -> None:
        self.port = port
        self.connected = True
        port.on_message = self._on_message
        port.on_close = lambda: None
        port.send(MessageKind.HELLO, {"agent": self.agent, "version": PROTOCOL_VERSION})

    def disconnect(self) -> None:
        """Simulate the client program dying mid-session."""
        self.connected = False
        for t in self._timers:
            t.cancel()
        self._timers.clear()
        self._busy = None
        self._pending_block = None
        if self.port is not None:
            self.port.close()
            self.port = None

    def _after(self, delay_ms: int, fn) -> None:
        handle = self.scheduler.call_after(delay_ms, fn)
        self._timers.append(handle)

    def _sample(self, bounds: tuple[int, int]) -> int:
        lo, hi = bounds
        return self.rng.randint(lo, hi)

    # --- inbound ---------------------------------------------------------------

    def _on_message(self, msg: Message) -> None:
        if self.ended or not self.connected:
            return
        if msg.kind is MessageKind.CONFIG_PUSH:
            self.config = cfg.from_dict(msg.payload["config"])
            if self._solve_order is None:
                pieces = list(self.config.puzzle_specs[self.profile.pid].solution)
                self.rng.shuffle(pieces)
                self._solve_order = pieces
        elif msg.kind is MessageKind.STATE_UPDATE and self.config is not None:
            self.view = state_from_dict(self.config, msg.payload["state"])
            self._step()
        elif msg.kind is MessageKind.ALLOCATION_RESPONSE:
            self._on_allocation(msg.payload)
        elif msg.kind is MessageKind.SESSION_END:
            self.ended = True

    # --- behavior ----------------------------------------------------------------

    def _step(self) -> None:
        if self.ended or not self.connected or self.view is None or self._busy:
            return
        phase = self.view.phases[self.profile.pid]
        if phase is Phase.AWAITING_START:
            if not self._started:
                self._started = True
                self._after(self._sample(self.profile.start_delay_ms), self._send_start)
        elif phase is Phase.PUZZLING:
            self._busy = "thinking"
            self._after(self._sample(self.profile.think_time_ms), self._make_move)
        elif phase is Phase.STACKING:
            self._maybe_claim()

    def _send_start(self) -> None:
        if self.ended or not self.connected:
            return
        self.port.send(MessageKind.START_TASK, {"pid": self.profile.pid})

    def _make_move(self) -> None:
        if self.ended or not self.connected:
            return
        self._busy = None
        puzzle = self.view.puzzles[self.profile.pid]
        if puzzle.solved:
            return
        solution = self.config.puzzle_specs[self.profile.pid].solution
        for piece in self._solve_order:
            if piece in puzzle.tray:
                slot = solution.index(piece)
                self.port.send(MessageKind.PUZZLE_MOVE,
                               {"pid": self.profile.pid,
                                "source": f"tray:{piece}", "dest": f"grid:{slot}"})
                return
        # nothing left in the tray but unsolved: repair a misplaced piece
        for slot, piece in enumerate(puzzle.grid):
            if piece is not None and piece != solution[slot]:
                self.port.send(MessageKind.PUZZLE_MOVE,
                               {"pid": self.profile.pid,
                                "source": f"grid:{slot}",
                                "dest": f"grid:{solution.index(piece)}"})
                return

    def _next_needed_own_block(self) -> str | None:
        stack = self.view.stacks[self.profile.pid]
        if len(stack.placed) >= len(stack.pattern):
            return None
        color = stack.pattern[len(stack.placed)]
        owner = cfg.station_inventory(self.profile.pid)
        if owner not in self.config.inventories:
            return None  # robot-only stack: nothing for this participant to carry
        top = topmost_unstacked(self.view, owner)
        if top is not None and self.view.blocks[top].color == color:
            return top
        return None

    def _maybe_claim(self) -> None:
        block = self._next_needed_own_block()
        if block is None:
            return  # the next slot is the robot's turn, or the stack is done
        self._busy = "requesting"
        self._pending_block = block
        self.port.send(MessageKind.ALLOCATION_REQUEST,
                       {"requester": self.agent, "block_id": block})

    def _on_allocation(self, payload: dict) -> None:
        if payload["block_id"] != self._pending_block:
            return
        if not payload["granted"]:
            self._busy = None
            self._pending_block = None
            self._after(self.profile.retry_ms, self._step)
            return
        block = self._pending_block
        self._busy = "fetching"
        self.port.send(MessageKind.ACTION_START,
                       {"agent": self.agent, "action": "fetch_place", "block_id": block})
        self._after(self._sample(self.profile.fetch_round_trip_ms),
                    lambda: self._arrive(block))

    def _arrive(self, block: str) -> None:
        if self.ended or not self.connected:
            return
        self._busy = None
        self._pending_block = None
        stack = self.view.stacks[self.profile.pid]
        still_needed = (len(stack.placed) < len(stack.pattern)
                        and stack.pattern[len(stack.placed)]
                        == self.view.blocks[block].color)
        if still_needed:
            self.ground_truth.place_block(block, self.profile.pid)
        else:
            logger.info("%s aborts placement of %s", self.agent, block)
            self.port.send(MessageKind.RELEASE_BLOCK,
                           {"agent": self.agent, "block_id": block})
        self.port.send(MessageKind.ACTION_END,
                       {"agent": self.agent, "action": "fetch_place", "block_id": block})
