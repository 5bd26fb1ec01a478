import random
from dataclasses import replace

import pytest

from cohrt import config as cfg
from cohrt import world
from cohrt.events import EventKind, SessionEvent
from cohrt.world import (
    EmptySource,
    IllegalTransition,
    InvalidSlot,
    ManipulationState,
    NotHolder,
    NotTopmost,
    PatternMismatch,
    Phase,
    StackState,
    UnknownInventory,
    WrongPhase,
    apply_transition,
    check_allocation,
    is_session_done,
    move_piece,
    new_session,
    topmost_unstacked,
)


def ev(kind, agent, ts=0, **payload):
    return SessionEvent(ts_ms=ts, agent=agent, kind=kind, payload=payload)


def start_all(state):
    for pid in state.config.participants:
        state = apply_transition(state, ev(EventKind.START_TASK, f"human:{pid}", pid=pid))
    return state


def solve_puzzle(state, pid):
    puzzle = state.puzzles[pid]
    for slot, piece in enumerate(puzzle.solution):
        state = apply_transition(
            state, ev(EventKind.PUZZLE_MOVE, f"human:{pid}", pid=pid,
                      source=f"tray:{piece}", dest=f"grid:{slot}"))
    assert state.puzzles[pid].solved
    return state


def to_stacking(state):
    state = start_all(state)
    for pid in state.config.participants:
        state = solve_puzzle(state, pid)
    return state


# --- new_session ----------------------------------------------------------------

def test_new_session_reference_scenario():
    state = new_session(cfg.reference_config())
    assert len(state.blocks) == 14
    assert all(b.manipulation_state is ManipulationState.UNSTACKED
               for b in state.blocks.values())
    assert all(b.manipulator is None for b in state.blocks.values())
    assert [s.state for s in state.stacks.values()] == [StackState.INCOMPLETE] * 2
    assert all(len(s.placed) == 0 for s in state.stacks.values())
    assert all(not p.solved for p in state.puzzles.values())
    assert all(ph is Phase.AWAITING_START for ph in state.phases.values())


def test_new_session_minimal():
    state = new_session(cfg.minimal_config())
    assert len(state.blocks) == 1
    assert state.puzzles["P1"].rows == state.puzzles["P1"].cols == 1


def test_duplicate_pattern_color_rejected():
    base = cfg.minimal_config()
    bad = replace(
        base,
        stack_specs={"P1": ("red", "red")},
        inventories={"station:P1": ("B01", "B02")},
        block_catalog={"B01": cfg.BlockSpec(1, "red"), "B02": cfg.BlockSpec(2, "red")},
    )
    with pytest.raises(cfg.ConfigInvalid, match="repeats a color"):
        new_session(bad)


def test_zero_participants_rejected():
    base = cfg.minimal_config()
    with pytest.raises(cfg.ConfigInvalid):
        new_session(replace(base, participants=()))


# --- topmost rule ----------------------------------------------------------------

def topmost_oracle(state, owner):
    """Linear scan over every block record, without the op under test."""
    candidates = [
        b for b in state.blocks.values()
        if b.inventory_owner == owner and b.manipulation_state is ManipulationState.UNSTACKED
    ]
    if not candidates:
        return None
    return min(candidates, key=lambda b: b.inventory_depth).block_id


def test_topmost_fresh_inventory():
    state = new_session(cfg.reference_config())
    owner = "station:P1"
    first = state.config.inventories[owner][0]
    assert topmost_unstacked(state, owner) == first == topmost_oracle(state, owner)


def test_topmost_skips_working_and_stacked():
    state = to_stacking(new_session(cfg.reference_config()))
    owner = "station:P1"
    ids = state.config.inventories[owner]
    # depth 0 block working, depth 1 block (hypothetically) stacked
    blocks = dict(state.blocks)
    blocks[ids[0]] = replace(blocks[ids[0]],
                             manipulation_state=ManipulationState.WORKING,
                             manipulator="human:P1")
    blocks[ids[1]] = replace(blocks[ids[1]],
                             manipulation_state=ManipulationState.STACKED, stack_slot=0)
    state = replace(state, blocks=blocks)
    assert topmost_unstacked(state, owner) == ids[2] == topmost_oracle(state, owner)


def test_topmost_exhausted_and_unknown():
    state = new_session(cfg.reference_config())
    blocks = {
        bid: replace(b, manipulation_state=ManipulationState.STACKED, stack_slot=0)
        for bid, b in state.blocks.items()
    }
    state = replace(state, blocks=blocks)
    assert topmost_unstacked(state, "station:P1") is None
    with pytest.raises(UnknownInventory):
        topmost_unstacked(state, "station:P9")


# --- allocation and stacking -------------------------------------------------------

def test_allocate_topmost_in_stacking_phase():
    state = to_stacking(new_session(cfg.reference_config()))
    block = topmost_unstacked(state, "station:P1")
    state2 = apply_transition(state, ev(EventKind.ALLOCATE, "human:P1", block_id=block))
    b = state2.blocks[block]
    assert b.manipulation_state is ManipulationState.WORKING
    assert b.manipulator == "human:P1"
    # original state untouched (pure function)
    assert state.blocks[block].manipulation_state is ManipulationState.UNSTACKED


def test_double_claim_is_illegal():
    state = to_stacking(new_session(cfg.reference_config()))
    block = topmost_unstacked(state, "station:P1")
    state = apply_transition(state, ev(EventKind.ALLOCATE, "human:P1", block_id=block))
    with pytest.raises(IllegalTransition):
        apply_transition(state, ev(EventKind.ALLOCATE, "robot", block_id=block))
    assert check_allocation(state, "robot", block) == "AlreadyClaimed"


def test_allocate_checks():
    state = to_stacking(new_session(cfg.reference_config()))
    deep = state.config.inventories["station:P1"][1]
    assert check_allocation(state, "human:P1", deep) == "NotTopmost"
    assert check_allocation(state, "human:P1", "nope") == "UnknownBlock"
    fresh = start_all(new_session(cfg.reference_config()))
    top = fresh.config.inventories["station:P1"][0]
    assert check_allocation(fresh, "human:P1", top) == "WrongPhase"


def test_stack_placed_appends_in_pattern_order():
    state = to_stacking(new_session(cfg.reference_config()))
    block = topmost_unstacked(state, "station:P1")
    state = apply_transition(state, ev(EventKind.ALLOCATE, "human:P1", block_id=block))
    state = apply_transition(state, ev(EventKind.STACK_PLACED, "human:P1", block_id=block))
    stack = state.stacks["P1"]
    assert stack.placed == (block,)
    assert state.blocks[block].manipulation_state is ManipulationState.STACKED
    assert state.blocks[block].stack_slot == 0


def test_wrong_color_is_mismatch_and_no_state_change():
    state = to_stacking(new_session(cfg.reference_config()))
    pattern = state.stacks["P1"].pattern
    # enumerate every color of the palette against the empty-prefix slot
    for bid, b in state.blocks.items():
        if world.block_beneficiary(state, bid) != "P1":
            continue
        claimable = replace(state, blocks={
            **state.blocks,
            bid: replace(b, manipulation_state=ManipulationState.WORKING,
                         manipulator="human:P1"),
        })
        event = ev(EventKind.STACK_PLACED, "human:P1", block_id=bid)
        if b.color == pattern[0]:
            nxt = apply_transition(claimable, event)
            assert nxt.stacks["P1"].placed == (bid,)
        else:
            with pytest.raises(PatternMismatch):
                apply_transition(claimable, event)


def test_release_edges():
    state = to_stacking(new_session(cfg.reference_config()))
    block = topmost_unstacked(state, "station:P1")
    state = apply_transition(state, ev(EventKind.ALLOCATE, "human:P1", block_id=block))
    with pytest.raises(NotHolder):
        apply_transition(state, ev(EventKind.RELEASE, "robot", block_id=block))
    state2 = apply_transition(state, ev(EventKind.RELEASE, "human:P1", block_id=block))
    assert state2.blocks[block].manipulation_state is ManipulationState.UNSTACKED
    assert topmost_unstacked(state2, "station:P1") == block
    with pytest.raises(IllegalTransition):
        apply_transition(state2, ev(EventKind.RELEASE, "human:P1", block_id=block))


def test_stacking_before_puzzle_solved_is_wrong_phase():
    state = start_all(new_session(cfg.reference_config()))
    block = state.config.inventories["station:P1"][0]
    with pytest.raises(WrongPhase):
        apply_transition(state, ev(EventKind.ALLOCATE, "human:P1", block_id=block))


# --- puzzle moves ---------------------------------------------------------------

def test_move_piece_solves_3x2_and_advances_phase():
    state = start_all(new_session(cfg.reference_config()))
    state = solve_puzzle(state, "P2")
    assert state.phases["P2"] is Phase.STACKING
    assert state.phases["P1"] is Phase.PUZZLING


def test_move_from_empty_tray_slot():
    state = start_all(new_session(cfg.reference_config()))
    with pytest.raises(EmptySource):
        move_piece(state, "P1", "tray:p99", "grid:0")
    with pytest.raises(EmptySource):
        move_piece(state, "P1", "grid:0", "grid:1")
    with pytest.raises(InvalidSlot):
        move_piece(state, "P1", "tray:p0", "grid:99")
    with pytest.raises(WrongPhase):
        move_piece(new_session(cfg.reference_config()), "P1", "tray:p0", "grid:0")


def test_move_swap_occupied_slot():
    state = start_all(new_session(cfg.reference_config()))
    state = move_piece(state, "P1", "tray:p0", "grid:0")
    state = move_piece(state, "P1", "tray:p1", "grid:1")
    state = move_piece(state, "P1", "grid:0", "grid:1")  # swap
    p = state.puzzles["P1"]
    assert p.grid[0] == "p1" and p.grid[1] == "p0"
    state = move_piece(state, "P1", "tray:p2", "grid:1")  # tray move onto occupied
    p = state.puzzles["P1"]
    assert p.grid[1] == "p2" and "p0" in p.tray


def test_random_moves_conserve_piece_multiset():
    rng = random.Random(99)
    state = start_all(new_session(cfg.reference_config()))
    full = sorted(state.puzzles["P1"].solution)
    for _ in range(300):
        p = state.puzzles["P1"]
        if p.solved:
            break
        choices = []
        for piece in p.tray:
            choices.append((f"tray:{piece}", f"grid:{rng.randrange(len(p.grid))}"))
        for slot, piece in enumerate(p.grid):
            if piece is not None:
                dst = rng.randrange(len(p.grid))
                if dst != slot:
                    choices.append((f"grid:{slot}", f"grid:{dst}"))
        src, dst = rng.choice(choices)
        state = move_piece(state, "P1", src, dst)
        p = state.puzzles["P1"]
        held = sorted(list(p.tray) + [x for x in p.grid if x is not None])
        assert held == full  # multiset conserved after every move


# --- completion -----------------------------------------------------------------

def complete_stack(state, pid):
    for _ in range(len(state.stacks[pid].pattern)):
        color = world.next_needed_color(state, pid)
        block = next(
            b.block_id for b in state.blocks.values()
            if b.color == color and world.block_beneficiary(state, b.block_id) == pid
            and b.manipulation_state is ManipulationState.UNSTACKED)
        agent = "human:" + pid
        state = apply_transition(state, ev(EventKind.ALLOCATE, agent, block_id=block))
        state = apply_transition(state, ev(EventKind.STACK_PLACED, agent, block_id=block))
    return state


def test_is_session_done_conjunction():
    state = new_session(cfg.reference_config())
    assert not is_session_done(state)
    state = start_all(state)
    state = solve_puzzle(state, "P1")
    state = complete_stack(state, "P1")
    assert state.phases["P1"] is Phase.DONE
    assert not is_session_done(state)  # P2 puzzle unsolved, stack incomplete
    state = solve_puzzle(state, "P2")
    state = complete_stack(state, "P2")
    assert is_session_done(state)


# --- state-machine property: random event sequences ------------------------------

LEGAL_EDGES = {
    (ManipulationState.UNSTACKED, ManipulationState.WORKING),
    (ManipulationState.WORKING, ManipulationState.STACKED),
    (ManipulationState.WORKING, ManipulationState.UNSTACKED),
}


def random_event(rng, state):
    agents = ["robot"] + [f"human:{p}" for p in state.config.participants]
    kind = rng.choice(list(EventKind.__members__.values()))
    agent = rng.choice(agents)
    block = rng.choice(list(state.blocks))
    pid = rng.choice(state.config.participants)
    if kind is EventKind.PUZZLE_MOVE:
        n = state.puzzles[pid].rows * state.puzzles[pid].cols
        source = rng.choice([f"tray:p{rng.randrange(n)}", f"grid:{rng.randrange(n)}"])
        return ev(kind, f"human:{pid}", pid=pid, source=source,
                  dest=f"grid:{rng.randrange(n)}")
    if kind is EventKind.START_TASK:
        return ev(kind, f"human:{pid}", pid=pid)
    return ev(kind, agent, block_id=block)


def check_state_invariants(state):
    catalog = set(state.config.block_catalog)
    assert {b.block_id for b in state.blocks.values()} == catalog  # conservation
    for pid, stack in state.stacks.items():
        placed_colors = [state.blocks[b].color for b in stack.placed]
        assert tuple(placed_colors) == stack.pattern[: len(stack.placed)]  # prefix
        assert (stack.state is StackState.COMPLETE) == (len(stack.placed) == len(stack.pattern))
    for b in state.blocks.values():
        if b.manipulation_state is ManipulationState.WORKING:
            assert b.manipulator is not None
        if b.manipulation_state is ManipulationState.UNSTACKED:
            assert b.manipulator is None


PHASE_ORDER = [Phase.AWAITING_START, Phase.PUZZLING, Phase.STACKING, Phase.DONE]


def run_random_sequence(seed, events=40):
    rng = random.Random(seed)
    state = new_session(cfg.reference_config(seed=seed % 2**32))
    check_state_invariants(state)
    for _ in range(events):
        event = random_event(rng, state)
        before = state
        try:
            state = apply_transition(state, event)
        except world.TransitionError:
            state = before  # rejected: caller keeps the old state
            continue
        # every accepted block transition is a legal edge
        for bid in before.blocks:
            old = before.blocks[bid].manipulation_state
            new = state.blocks[bid].manipulation_state
            if old is not new:
                assert (old, new) in LEGAL_EDGES
        for pid in before.phases:
            assert PHASE_ORDER.index(state.phases[pid]) >= PHASE_ORDER.index(before.phases[pid])
        check_state_invariants(state)
    return state


def test_random_event_sequences_respect_state_machine():
    for seed in range(300):
        run_random_sequence(seed)


def test_apply_transition_is_pure():
    state = to_stacking(new_session(cfg.reference_config()))
    block = topmost_unstacked(state, "station:P1")
    event = ev(EventKind.ALLOCATE, "human:P1", ts=123, block_id=block)
    once = apply_transition(state, event)
    twice = apply_transition(state, event)
    assert once == twice
    assert once.session_clock_ms == 123
