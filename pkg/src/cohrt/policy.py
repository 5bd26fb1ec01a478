"""Robot collaboration policies and abstract waypoint planning.

The reference policy stacks blocks for the participants alternately and
keeps its per-participant contribution counts within one of each other at
all times. It stops as soon as equal effort can no longer be preserved:
when the participants it still owes a contribution can never receive one
(their stacks need nothing further from the robot-side piles).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .config import owner_beneficiary, owner_side
from .world import ManipulationState, WorldState, next_needed_color, topmost_unstacked


@dataclass(frozen=True)
class ActiveAction:
    block_id: str
    beneficiary: str
    phase: str  # "Requesting" | "Picking" | "Placing"
    height_at_grant: int


@dataclass
class RobotPolicyState:
    contributed: dict[str, int]
    next_beneficiary: str
    active: ActiveAction | None = None


@dataclass(frozen=True)
class StackFor:
    pid: str
    block_id: str


@dataclass(frozen=True)
class Idle:
    reason: str


@dataclass(frozen=True)
class Stop:
    reason: str


Action = StackFor | Idle | Stop


def robot_inventory_owners(state: WorldState) -> list[str]:
    return [o for o in state.config.inventories if owner_side(o) == "robot"]


def remaining_contribution(state: WorldState, pid: str) -> int:
    """Robot-side blocks still usable for this participant's stack."""
    stack = state.stacks[pid]
    needed = set(stack.pattern[len(stack.placed):])
    if not needed:
        return 0
    count = 0
    for owner in robot_inventory_owners(state):
        if owner_beneficiary(owner) != pid:
            continue
        for bid in state.config.inventories[owner]:
            b = state.blocks[bid]
            if b.manipulation_state is ManipulationState.UNSTACKED and b.color in needed:
                count += 1
    return count


class CollaborationPolicy:
    """Strategy seam keyed by ``TaskConfig.robot_policy``."""

    name = "base"

    def initial_state(self, world: WorldState) -> RobotPolicyState:
        participants = list(world.config.participants)
        return RobotPolicyState(contributed={p: 0 for p in participants},
                                next_beneficiary=participants[0])

    def select_action(self, world: WorldState, ps: RobotPolicyState) -> Action:
        raise NotImplementedError

    def record_contribution(self, ps: RobotPolicyState, pid: str) -> None:
        raise NotImplementedError


class AlternatingEqualPolicy(CollaborationPolicy):
    name = "alternating_equal"

    def _stackable_now(self, world: WorldState, pid: str) -> str | None:
        """Robot-side topmost block matching the next needed color, if any."""
        from .world import Phase
        if world.phases[pid] is not Phase.STACKING:
            return None
        color = next_needed_color(world, pid)
        if color is None:
            return None
        for owner in robot_inventory_owners(world):
            if owner_beneficiary(owner) != pid:
                continue
            top = topmost_unstacked(world, owner)
            if top is not None and world.blocks[top].color == color:
                return top
        return None

    def select_action(self, world: WorldState, ps: RobotPolicyState) -> Action:
        assert ps.active is None, "a previous action is still in flight"
        participants = list(world.config.participants)
        need = {p: remaining_contribution(world, p) for p in participants}
        counts = ps.contributed
        low = min(counts.values())
        laggards = [p for p in participants if counts[p] == low]
        if len(laggards) == len(participants):
            # balanced: continuing requires that every participant can still
            # receive a share, otherwise equality would be broken for good
            if not all(need[p] > 0 for p in participants):
                return Stop(f"equal effort reached, contributions {dict(counts)}")
            order = [ps.next_beneficiary] + [p for p in participants
                                             if p != ps.next_beneficiary]
        else:
            # someone is owed a contribution; only they may receive the next one
            if not any(need[p] > 0 for p in laggards):
                return Stop(
                    f"lagging stack needs no further help, contributions {dict(counts)}")
            order = [p for p in laggards if need[p] > 0]
        for pid in order:
            block = self._stackable_now(world, pid)
            if block is not None:
                return StackFor(pid, block)
        return Idle("no beneficiary is ready for a robot-side block")

    def record_contribution(self, ps: RobotPolicyState, pid: str) -> None:
        ps.contributed[pid] = ps.contributed.get(pid, 0) + 1
        if pid == ps.next_beneficiary:
            participants = list(ps.contributed)
            i = participants.index(pid)
            ps.next_beneficiary = participants[(i + 1) % len(participants)]
        # a swapped turn leaves next_beneficiary owed, restoring alternation


POLICIES: dict[str, type[CollaborationPolicy]] = {
    AlternatingEqualPolicy.name: AlternatingEqualPolicy,
}


def get_policy(name: str) -> CollaborationPolicy:
    if name not in POLICIES:
        raise KeyError(f"unknown robot policy {name!r}")
    return POLICIES[name]()


# --- waypoints -----------------------------------------------------------------

class StaleState(Exception):
    """The stack grew between allocation and planning; replan."""


LIFT_M = 0.15


@dataclass(frozen=True)
class WaypointPlan:
    fetch_position: tuple[float, float, float]
    lift: tuple[float, float, float]
    transfer: tuple[float, float, float]
    place_position: tuple[float, float, float]


def plan_waypoints(world: WorldState, active: ActiveAction) -> WaypointPlan:
    """Four-waypoint plan; place height follows the stack height at plan time."""
    geometry = world.config.geometry
    h = geometry.block_height_m
    block = world.blocks[active.block_id]
    stack = world.stacks[active.beneficiary]
    if len(stack.placed) != active.height_at_grant:
        raise StaleState(
            f"stack {active.beneficiary} is {len(stack.placed)} high, "
            f"planned for {active.height_at_grant}")
    base = geometry.stack_bases[active.beneficiary]
    # robot-side piles sit behind the stack base, one pile per beneficiary
    fetch = (base[0] - 0.2, base[1] - 0.2, block.inventory_depth * h)
    place = (base[0], base[1], base[2] + len(stack.placed) * h)
    return WaypointPlan(
        fetch_position=fetch,
        lift=(fetch[0], fetch[1], fetch[2] + LIFT_M),
        transfer=(place[0], place[1], place[2] + LIFT_M),
        place_position=place,
    )
