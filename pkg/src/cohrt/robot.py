"""Simulated robot teammate.

An independent protocol client: it watches state updates, picks targets
through its collaboration policy, claims them via allocation requests, and
executes timed pick-and-place actions against the physical world (the
ground-truth simulator here; a motion stack behind the same actuator
interface on real hardware). Placements are confirmed by perception, not by
the robot's own report.
"""

from __future__ import annotations

import logging
from typing import Callable, Protocol

from . import config as cfg
from .policy import (
    ActiveAction,
    Idle,
    StackFor,
    StaleState,
    Stop,
    get_policy,
    plan_waypoints,
)
from .protocol import PROTOCOL_VERSION, Message, MessageKind
from .sim.clock import Scheduler
from .world import ManipulationState, WorldState, state_from_dict

logger = logging.getLogger(__name__)

ROBOT_AGENT = "robot"


class Actuator(Protocol):
    def place_block(self, block_id: str, station_id: str) -> None: ...
    def return_block(self, block_id: str) -> None: ...


class ExecutionFault(Exception):
    """Injectable pick/place failure for fault testing."""


class RobotAgent:
    def __init__(self, port, scheduler: Scheduler, actuator: Actuator,
                 policy_name: str | None = None,
                 timing_override: dict | None = None,
                 fault_at_ms: int | None = None):
        self.port = port
        self.scheduler = scheduler
        self.actuator = actuator
        self._policy_name = policy_name
        self._timing_override = timing_override or {}
        self.policy = None
        self.policy_state = None
        self.config: cfg.TaskConfig | None = None
        self.view: WorldState | None = None
        self.stopped = False
        self.ended = False
        self.fault_at_ms = fault_at_ms
        self._fault_fired = False
        port.on_message = self._on_message
        port.on_close = lambda: None
        self.port.send(MessageKind.HELLO, {"agent": ROBOT_AGENT,
                                           "version": PROTOCOL_VERSION})

    # --- inbound --------------------------------------------------------------

    def _on_message(self, msg: Message) -> None:
        if self.ended:
            return
        if msg.kind is MessageKind.CONFIG_PUSH:
            document = msg.payload["config"]
            if self._timing_override:
                document = {**document,
                            "timing": {**document["timing"], **self._timing_override}}
            self.config = cfg.from_dict(document)
            self.policy = get_policy(self._policy_name or self.config.robot_policy)
        elif msg.kind is MessageKind.STATE_UPDATE and self.config is not None:
            self.view = state_from_dict(self.config, msg.payload["state"])
            self._step()
        elif msg.kind is MessageKind.ALLOCATION_RESPONSE:
            self._on_allocation(msg.payload)
        elif msg.kind is MessageKind.SESSION_END:
            self.ended = True

    # --- control loop -----------------------------------------------------------

    def _step(self) -> None:
        if self.ended or self.stopped or self.view is None or self.policy is None:
            return
        ps = self.policy_state
        if ps is None:
            ps = self.policy_state = self.policy.initial_state(self.view)
        if ps.active is not None:
            self._check_active()
            return
        action = self.policy.select_action(self.view, ps)
        if isinstance(action, StackFor):
            stack = self.view.stacks[action.pid]
            ps.active = ActiveAction(block_id=action.block_id, beneficiary=action.pid,
                                     phase="Requesting",
                                     height_at_grant=len(stack.placed))
            self.port.send(MessageKind.ALLOCATION_REQUEST,
                           {"requester": ROBOT_AGENT, "block_id": action.block_id})
        elif isinstance(action, Stop):
            self.stopped = True
            counts = ",".join(f"{p}={n}" for p, n in sorted(ps.contributed.items()))
            self.port.send(MessageKind.ERROR,
                           {"code": "collaboration_stop",
                            "detail": f"{action.reason} [{counts}]"})
        else:
            assert isinstance(action, Idle)

    def _check_active(self) -> None:
        ps = self.policy_state
        active = ps.active
        block = self.view.blocks[active.block_id]
        if block.manipulation_state is ManipulationState.STACKED:
            # perception confirmed the placement: account it and move on
            if active.phase == "Placing":
                self.policy.record_contribution(ps, active.beneficiary)
            ps.active = None
            self._step()
        elif (block.manipulation_state is ManipulationState.UNSTACKED
              and active.phase != "Requesting"):
            # lost the claim (timeout release); retry from scratch
            logger.warning("robot lost claim on %s", active.block_id)
            ps.active = None
            self._step()

    def _on_allocation(self, payload: dict) -> None:
        ps = self.policy_state
        if ps is None or ps.active is None or payload["block_id"] != ps.active.block_id:
            return
        if not payload["granted"]:
            ps.active = None
            # denied: somebody else holds it; wait for the next state update
            return
        self._plan_and_pick()

    def _plan_and_pick(self) -> None:
        ps = self.policy_state
        try:
            plan = plan_waypoints(self.view, ps.active)
        except StaleState:
            # stack height moved since the request; replan against the fresh view
            stack = self.view.stacks[ps.active.beneficiary]
            ps.active = ActiveAction(block_id=ps.active.block_id,
                                     beneficiary=ps.active.beneficiary,
                                     phase=ps.active.phase,
                                     height_at_grant=len(stack.placed))
            plan = plan_waypoints(self.view, ps.active)
        ps.active = ActiveAction(block_id=ps.active.block_id,
                                 beneficiary=ps.active.beneficiary,
                                 phase="Picking",
                                 height_at_grant=ps.active.height_at_grant)
        self.plan = plan
        self.port.send(MessageKind.ACTION_START,
                       {"agent": ROBOT_AGENT, "action": "stack",
                        "block_id": ps.active.block_id})
        self.scheduler.call_after(self.config.timing.robot_pick_ms, self._pick_done)

    def _pick_done(self) -> None:
        ps = self.policy_state
        if self.ended or ps is None or ps.active is None:
            return
        if (self.fault_at_ms is not None and not self._fault_fired
                and self.scheduler.now_ms() >= self.fault_at_ms):
            self._fault_fired = True
            self._abort_action("execution_fault")
            return
        ps.active = ActiveAction(block_id=ps.active.block_id,
                                 beneficiary=ps.active.beneficiary,
                                 phase="Placing",
                                 height_at_grant=ps.active.height_at_grant)
        self.scheduler.call_after(self.config.timing.robot_place_ms, self._place_done)

    def _place_done(self) -> None:
        ps = self.policy_state
        if self.ended or ps is None or ps.active is None:
            return
        active = ps.active
        stack = self.view.stacks[active.beneficiary]
        needed = (len(stack.placed) < len(stack.pattern)
                  and stack.pattern[len(stack.placed)]
                  == self.view.blocks[active.block_id].color)
        if not needed:
            # the slot was filled while we carried the block: put it back
            self._abort_action("slot_taken")
            return
        self.actuator.place_block(active.block_id, active.beneficiary)
        self.port.send(MessageKind.ACTION_END,
                       {"agent": ROBOT_AGENT, "action": "stack",
                        "block_id": active.block_id})
        # completion is confirmed by perception via the next state update

    def _abort_action(self, why: str) -> None:
        ps = self.policy_state
        active = ps.active
        logger.info("robot aborts %s: %s", active.block_id, why)
        self.actuator.return_block(active.block_id)
        self.port.send(MessageKind.ACTION_END,
                       {"agent": ROBOT_AGENT, "action": "stack",
                        "block_id": active.block_id})
        self.port.send(MessageKind.RELEASE_BLOCK,
                       {"agent": ROBOT_AGENT, "block_id": active.block_id})
        ps.active = None
