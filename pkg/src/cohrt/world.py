"""Authoritative task state and its legal transitions.

Blocks move along Unstacked -> Working -> Stacked, with a release edge
Working -> Unstacked for abandonment. Stacks accept exactly the prefix of
their color pattern; puzzles gate a participant's stacking phase. All
operations are pure: they take a state and return a new one, never mutating
the input.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from .config import TaskConfig, owner_beneficiary, validate
from .events import EventKind, SessionEvent

AGENT_ROBOT = "robot"


def human_agent(pid: str) -> str:
    return f"human:{pid}"


def agent_pid(agent: str) -> str | None:
    """Participant id for ``human:<pid>`` agents, else None."""
    if agent.startswith("human:"):
        return agent.split(":", 1)[1]
    return None


class ManipulationState(str, Enum):
    UNSTACKED = "Unstacked"
    WORKING = "Working"
    STACKED = "Stacked"


class StackState(str, Enum):
    INCOMPLETE = "Incomplete"
    COMPLETE = "Complete"


class Phase(str, Enum):
    AWAITING_START = "AwaitingStart"
    PUZZLING = "Puzzling"
    STACKING = "Stacking"
    DONE = "Done"


@dataclass(frozen=True)
class BlockRecord:
    block_id: str
    tag_id: int
    color: str
    manipulation_state: ManipulationState
    manipulator: str | None
    inventory_owner: str
    inventory_depth: int
    stack_slot: int | None


@dataclass(frozen=True)
class StackRecord:
    owner: str
    pattern: tuple[str, ...]
    placed: tuple[str, ...]
    state: StackState


@dataclass(frozen=True)
class PuzzleRecord:
    rows: int
    cols: int
    grid: tuple[str | None, ...]
    tray: tuple[str, ...]
    solution: tuple[str, ...]
    solved: bool


@dataclass(frozen=True)
class WorldState:
    config: TaskConfig
    blocks: dict[str, BlockRecord]
    stacks: dict[str, StackRecord]
    puzzles: dict[str, PuzzleRecord]
    phases: dict[str, Phase]
    session_clock_ms: int


# --- errors -------------------------------------------------------------------

class TransitionError(Exception):
    pass


class IllegalTransition(TransitionError):
    pass


class NotTopmost(TransitionError):
    pass


class WrongPhase(TransitionError):
    pass


class PatternMismatch(TransitionError):
    pass


class NotHolder(TransitionError):
    pass


class UnknownBlock(TransitionError):
    pass


class MoveError(TransitionError):
    pass


class EmptySource(MoveError):
    pass


class InvalidSlot(MoveError):
    pass


class UnknownInventory(KeyError):
    pass


# --- construction -------------------------------------------------------------

def new_session(config: TaskConfig) -> WorldState:
    """Fresh state: everything unstacked, unsolved, awaiting start."""
    validate(config)
    blocks: dict[str, BlockRecord] = {}
    for owner, block_ids in config.inventories.items():
        for depth, bid in enumerate(block_ids):
            spec = config.block_catalog[bid]
            blocks[bid] = BlockRecord(
                block_id=bid, tag_id=spec.tag_id, color=spec.color,
                manipulation_state=ManipulationState.UNSTACKED, manipulator=None,
                inventory_owner=owner, inventory_depth=depth, stack_slot=None,
            )
    stacks = {
        pid: StackRecord(owner=pid, pattern=pattern, placed=(), state=StackState.INCOMPLETE)
        for pid, pattern in config.stack_specs.items()
    }
    puzzles = {
        pid: PuzzleRecord(rows=s.rows, cols=s.cols,
                          grid=(None,) * (s.rows * s.cols),
                          tray=tuple(sorted(s.solution)),
                          solution=s.solution, solved=False)
        for pid, s in config.puzzle_specs.items()
    }
    phases = {pid: Phase.AWAITING_START for pid in config.participants}
    return WorldState(config=config, blocks=blocks, stacks=stacks,
                      puzzles=puzzles, phases=phases, session_clock_ms=0)


# --- queries ------------------------------------------------------------------

def topmost_unstacked(state: WorldState, inventory_owner: str) -> str | None:
    """The claimable block of a pile: least depth among its Unstacked blocks."""
    if inventory_owner not in state.config.inventories:
        raise UnknownInventory(inventory_owner)
    best: BlockRecord | None = None
    for bid in state.config.inventories[inventory_owner]:
        b = state.blocks[bid]
        if b.manipulation_state is ManipulationState.UNSTACKED:
            if best is None or b.inventory_depth < best.inventory_depth:
                best = b
    return best.block_id if best else None


def block_beneficiary(state: WorldState, block_id: str) -> str:
    return owner_beneficiary(state.blocks[block_id].inventory_owner)


def next_needed_color(state: WorldState, pid: str) -> str | None:
    stack = state.stacks[pid]
    if len(stack.placed) >= len(stack.pattern):
        return None
    return stack.pattern[len(stack.placed)]


def check_allocation(state: WorldState, agent: str, block_id: str) -> str | None:
    """Denial reason for an allocation request, or None if grantable.

    Grant requires: known block, beneficiary participant in Stacking phase
    (and the requester too, when human), block Unstacked, and block topmost
    in its inventory.
    """
    block = state.blocks.get(block_id)
    if block is None:
        return "UnknownBlock"
    pid = agent_pid(agent)
    if pid is not None:
        if pid not in state.phases or state.phases[pid] is not Phase.STACKING:
            return "WrongPhase"
    beneficiary = owner_beneficiary(block.inventory_owner)
    if state.phases.get(beneficiary) is not Phase.STACKING:
        return "WrongPhase"
    if block.manipulation_state is not ManipulationState.UNSTACKED:
        return "AlreadyClaimed"
    if topmost_unstacked(state, block.inventory_owner) != block_id:
        return "NotTopmost"
    return None


def is_session_done(state: WorldState) -> bool:
    """True iff every puzzle is solved and every stack is complete."""
    return (all(p.solved for p in state.puzzles.values())
            and all(s.state is StackState.COMPLETE for s in state.stacks.values()))


# --- transitions --------------------------------------------------------------

_DENIAL_ERRORS = {
    "UnknownBlock": UnknownBlock,
    "WrongPhase": WrongPhase,
    "AlreadyClaimed": IllegalTransition,
    "NotTopmost": NotTopmost,
}


def _with_block(state: WorldState, block: BlockRecord) -> dict[str, BlockRecord]:
    blocks = dict(state.blocks)
    blocks[block.block_id] = block
    return blocks


def _apply_start_task(state: WorldState, event: SessionEvent) -> WorldState:
    pid = event.payload.get("pid") or agent_pid(event.agent)
    if pid not in state.phases:
        raise WrongPhase(f"unknown participant {pid!r}")
    if state.phases[pid] is not Phase.AWAITING_START:
        raise WrongPhase(f"{pid} already started")
    phases = dict(state.phases)
    phases[pid] = Phase.PUZZLING
    return replace(state, phases=phases)


def _apply_allocate(state: WorldState, event: SessionEvent) -> WorldState:
    block_id = event.payload["block_id"]
    reason = check_allocation(state, event.agent, block_id)
    if reason is not None:
        raise _DENIAL_ERRORS[reason](f"{block_id}: {reason}")
    block = replace(state.blocks[block_id],
                    manipulation_state=ManipulationState.WORKING,
                    manipulator=event.agent)
    return replace(state, blocks=_with_block(state, block))


def _apply_release(state: WorldState, event: SessionEvent) -> WorldState:
    block_id = event.payload["block_id"]
    block = state.blocks.get(block_id)
    if block is None:
        raise UnknownBlock(block_id)
    if block.manipulation_state is not ManipulationState.WORKING:
        raise IllegalTransition(f"{block_id} is not Working")
    if block.manipulator != event.agent:
        raise NotHolder(f"{event.agent} does not hold {block_id}")
    block = replace(block, manipulation_state=ManipulationState.UNSTACKED, manipulator=None)
    return replace(state, blocks=_with_block(state, block))


def _apply_stack_placed(state: WorldState, event: SessionEvent) -> WorldState:
    block_id = event.payload["block_id"]
    block = state.blocks.get(block_id)
    if block is None:
        raise UnknownBlock(block_id)
    if block.manipulation_state is not ManipulationState.WORKING:
        raise IllegalTransition(f"{block_id} is {block.manipulation_state.value}, not Working")
    pid = owner_beneficiary(block.inventory_owner)
    if state.phases[pid] is not Phase.STACKING:
        raise WrongPhase(f"{pid} is not stacking")
    stack = state.stacks[pid]
    if len(stack.placed) >= len(stack.pattern):
        raise IllegalTransition(f"stack {pid} already complete")
    if block.color != stack.pattern[len(stack.placed)]:
        raise PatternMismatch(
            f"{block_id} is {block.color}, slot {len(stack.placed)} needs "
            f"{stack.pattern[len(stack.placed)]}")
    slot = len(stack.placed)
    block = replace(block, manipulation_state=ManipulationState.STACKED,
                    manipulator=None, stack_slot=slot)
    placed = stack.placed + (block_id,)
    complete = len(placed) == len(stack.pattern)
    stacks = dict(state.stacks)
    stacks[pid] = replace(stack, placed=placed,
                          state=StackState.COMPLETE if complete else StackState.INCOMPLETE)
    phases = state.phases
    if complete:
        phases = dict(phases)
        phases[pid] = Phase.DONE
    return replace(state, blocks=_with_block(state, block), stacks=stacks, phases=phases)


def _parse_slot(puzzle: PuzzleRecord, address: str) -> tuple[str, str | int]:
    kind, _, rest = address.partition(":")
    if kind == "tray":
        if not rest:
            raise InvalidSlot(f"bad address {address!r}")
        return "tray", rest
    if kind == "grid":
        try:
            slot = int(rest)
        except ValueError:
            raise InvalidSlot(f"bad address {address!r}") from None
        if not (0 <= slot < len(puzzle.grid)):
            raise InvalidSlot(f"slot {slot} out of range")
        return "grid", slot
    raise InvalidSlot(f"bad address {address!r}")


def move_piece(state: WorldState, pid: str, source: str, dest: str) -> WorldState:
    """Move a puzzle piece; an occupied destination swaps the two pieces."""
    if pid not in state.puzzles:
        raise InvalidSlot(f"unknown participant {pid!r}")
    if state.phases[pid] is not Phase.PUZZLING:
        raise WrongPhase(f"{pid} is not puzzling")
    puzzle = state.puzzles[pid]
    src_kind, src = _parse_slot(puzzle, source)
    dst_kind, dst = _parse_slot(puzzle, dest)
    if dst_kind != "grid":
        raise InvalidSlot("destination must be a grid slot")
    grid = list(puzzle.grid)
    tray = list(puzzle.tray)
    if src_kind == "tray":
        if src not in tray:
            raise EmptySource(f"piece {src!r} is not in the tray")
        piece = src
        tray.remove(piece)
        displaced = grid[dst]
        grid[dst] = piece
        if displaced is not None:
            tray.append(displaced)
    else:
        if grid[src] is None:
            raise EmptySource(f"grid slot {src} is empty")
        if src == dst:
            raise InvalidSlot("source and destination are the same slot")
        piece = grid[src]
        grid[src], grid[dst] = grid[dst], piece
    solved = tuple(grid) == tuple(puzzle.solution)
    puzzles = dict(state.puzzles)
    puzzles[pid] = replace(puzzle, grid=tuple(grid), tray=tuple(tray), solved=solved)
    phases = state.phases
    if solved:
        phases = dict(phases)
        phases[pid] = Phase.STACKING
    return replace(state, puzzles=puzzles, phases=phases)


_HANDLERS = {
    EventKind.START_TASK: _apply_start_task,
    EventKind.ALLOCATE: _apply_allocate,
    EventKind.RELEASE: _apply_release,
    EventKind.STACK_PLACED: _apply_stack_placed,
}


def apply_transition(state: WorldState, event: SessionEvent) -> WorldState:
    """Successor state for one state-changing event; raises on illegal ones."""
    if event.kind is EventKind.PUZZLE_MOVE:
        pid = event.payload.get("pid") or agent_pid(event.agent)
        next_state = move_piece(state, pid, event.payload["source"], event.payload["dest"])
    else:
        handler = _HANDLERS.get(event.kind)
        if handler is None:
            raise IllegalTransition(f"{event.kind.value} is not a state-changing event")
        next_state = handler(state, event)
    return replace(next_state, session_clock_ms=event.ts_ms)


# --- snapshots ----------------------------------------------------------------

def state_to_dict(state: WorldState) -> dict:
    """Full snapshot; enough to render every client view."""
    return {
        "blocks": {
            bid: {
                "color": b.color,
                "state": b.manipulation_state.value,
                "manipulator": b.manipulator,
                "inventory_owner": b.inventory_owner,
                "inventory_depth": b.inventory_depth,
                "stack_slot": b.stack_slot,
            }
            for bid, b in state.blocks.items()
        },
        "stacks": {
            pid: {"pattern": list(s.pattern), "placed": list(s.placed), "state": s.state.value}
            for pid, s in state.stacks.items()
        },
        "puzzles": {
            pid: {"rows": p.rows, "cols": p.cols, "grid": list(p.grid),
                  "tray": list(p.tray), "solved": p.solved}
            for pid, p in state.puzzles.items()
        },
        "phases": {pid: ph.value for pid, ph in state.phases.items()},
        "session_clock_ms": state.session_clock_ms,
    }


def state_from_dict(config: TaskConfig, d: dict) -> WorldState:
    """Rebuild a state value from a snapshot (client-side view)."""
    blocks = {}
    for bid, bd in d["blocks"].items():
        spec = config.block_catalog[bid]
        blocks[bid] = BlockRecord(
            block_id=bid, tag_id=spec.tag_id, color=bd["color"],
            manipulation_state=ManipulationState(bd["state"]),
            manipulator=bd["manipulator"],
            inventory_owner=bd["inventory_owner"],
            inventory_depth=bd["inventory_depth"],
            stack_slot=bd["stack_slot"],
        )
    stacks = {
        pid: StackRecord(owner=pid, pattern=tuple(sd["pattern"]),
                         placed=tuple(sd["placed"]), state=StackState(sd["state"]))
        for pid, sd in d["stacks"].items()
    }
    puzzles = {
        pid: PuzzleRecord(rows=pd["rows"], cols=pd["cols"],
                          grid=tuple(pd["grid"]), tray=tuple(pd["tray"]),
                          solution=config.puzzle_specs[pid].solution,
                          solved=pd["solved"])
        for pid, pd in d["puzzles"].items()
    }
    phases = {pid: Phase(v) for pid, v in d["phases"].items()}
    return WorldState(config=config, blocks=blocks, stacks=stacks, puzzles=puzzles,
                      phases=phases, session_clock_ms=d["session_clock_ms"])
