"""Physical actuation for agents that live outside the process.

A live browser participant (or an external robot process) can claim blocks
but cannot move anything in the simulated world. This observer watches
state updates and performs the physical placement on their behalf: a
granted block lands on its stack after the agent's characteristic delay
(the human's fetch walk, the robot's pick-and-place time), where perception
then confirms it.
"""

from __future__ import annotations

import logging

from .. import config as cfg
from ..protocol import PROTOCOL_VERSION, Message, MessageKind
from ..world import ManipulationState, WorldState, state_from_dict
from .clock import Scheduler
from .ground_truth import GroundTruthWorld

logger = logging.getLogger(__name__)


class ExternalActuator:
    def __init__(self, port, scheduler: Scheduler, ground_truth: GroundTruthWorld,
                 live_pids: tuple[str, ...] = (), external_robot: bool = False):
        self.port = port
        self.scheduler = scheduler
        self.ground_truth = ground_truth
        self.live_agents = {f"human:{pid}" for pid in live_pids}
        if external_robot:
            self.live_agents.add("robot")
        self.config: cfg.TaskConfig | None = None
        self.view: WorldState | None = None
        self._scheduled: set[str] = set()
        self._done: set[str] = set()
        port.on_message = self._on_message
        port.on_close = lambda: None
        port.send(MessageKind.HELLO, {"agent": "actuator", "version": PROTOCOL_VERSION})

    def _on_message(self, msg: Message) -> None:
        if msg.kind is MessageKind.CONFIG_PUSH:
            self.config = cfg.from_dict(msg.payload["config"])
        elif msg.kind is MessageKind.STATE_UPDATE and self.config is not None:
            self.view = state_from_dict(self.config, msg.payload["state"])
            self._scan()

    def _delay_for(self, agent: str) -> int:
        timing = self.config.timing
        if agent == "robot":
            return timing.robot_pick_ms + timing.robot_place_ms
        return timing.live_fetch_ms

    def _scan(self) -> None:
        for block in self.view.blocks.values():
            if (block.manipulation_state is ManipulationState.WORKING
                    and block.manipulator in self.live_agents
                    and block.block_id not in self._scheduled
                    and block.block_id not in self._done):
                self._scheduled.add(block.block_id)
                delay = self._delay_for(block.manipulator)
                self.scheduler.call_after(
                    delay, lambda b=block.block_id: self._place(b))

    def _place(self, block_id: str) -> None:
        self._scheduled.discard(block_id)
        if self.view is None:
            return
        block = self.view.blocks[block_id]
        if block.manipulation_state is not ManipulationState.WORKING:
            return  # released or already handled in the meantime
        pid = cfg.owner_beneficiary(block.inventory_owner)
        stack = self.view.stacks[pid]
        if (len(stack.placed) < len(stack.pattern)
                and stack.pattern[len(stack.placed)] == block.color):
            self.ground_truth.place_block(block_id, pid)
            self._done.add(block_id)
        # a wrong-color claim stays Working until the server's timeout sweep
