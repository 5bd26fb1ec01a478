"""Session configuration: participants, puzzles, stack patterns, inventories,
robot policy, timing, and geometry.

Inventory owners follow the ``<side>:<pid>`` convention, where side is
``station`` (the participant fetches from their own station) or ``robot``
(a pile within the robot's reach). The participant after the colon is the
beneficiary: blocks in that inventory are destined for that participant's
stack.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable


class ConfigInvalid(ValueError):
    """Configuration violates an invariant; the message names which one."""


@dataclass(frozen=True)
class PuzzleSpec:
    rows: int
    cols: int
    image_id: str
    solution: tuple[str, ...]  # slot index -> piece id


@dataclass(frozen=True)
class BlockSpec:
    tag_id: int
    color: str


@dataclass(frozen=True)
class TimingSpec:
    robot_pick_ms: int = 2000
    robot_place_ms: int = 3000
    working_timeout_ms: int = 60_000
    perception_interval_ms: int = 100
    perception_stall_ms: int = 5000
    live_fetch_ms: int = 4000


@dataclass(frozen=True)
class GeometrySpec:
    block_height_m: float = 0.040
    base_radius_m: float = 0.080
    history_depth: int = 30
    position_noise_m: float = 0.002
    # station id -> stack base position; station ids equal participant ids
    stack_bases: dict[str, tuple[float, float, float]] = field(default_factory=dict)


@dataclass(frozen=True)
class TaskConfig:
    participants: tuple[str, ...]
    puzzle_specs: dict[str, PuzzleSpec]
    stack_specs: dict[str, tuple[str, ...]]
    inventories: dict[str, tuple[str, ...]]
    block_catalog: dict[str, BlockSpec]
    robot_policy: str = "alternating_equal"
    timing: TimingSpec = field(default_factory=TimingSpec)
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    seed: int = 0


def owner_side(owner: str) -> str:
    return owner.split(":", 1)[0]


def owner_beneficiary(owner: str) -> str:
    return owner.split(":", 1)[1]


def station_inventory(pid: str) -> str:
    return f"station:{pid}"


def robot_inventory(pid: str) -> str:
    return f"robot:{pid}"


def default_stack_bases(participants: Iterable[str]) -> dict[str, tuple[float, float, float]]:
    # Stations spaced half a metre apart along x on the desk plane.
    return {pid: (0.5 * i, 0.0, 0.0) for i, pid in enumerate(participants)}


def validate(config: TaskConfig) -> None:
    """Raise :class:`ConfigInvalid` naming the first violated invariant."""
    if not config.participants:
        raise ConfigInvalid("participants must be non-empty")
    if len(set(config.participants)) != len(config.participants):
        raise ConfigInvalid("participant ids must be distinct")
    for pid in config.participants:
        if pid not in config.puzzle_specs:
            raise ConfigInvalid(f"participant {pid} has no puzzle spec")
        if pid not in config.stack_specs:
            raise ConfigInvalid(f"participant {pid} has no stack pattern")
    for pid, spec in config.puzzle_specs.items():
        if spec.rows <= 0 or spec.cols <= 0:
            raise ConfigInvalid(f"puzzle dims for {pid} must be positive")
        n = spec.rows * spec.cols
        if len(spec.solution) != n:
            raise ConfigInvalid(f"puzzle solution for {pid} must cover {n} slots")
        if len(set(spec.solution)) != n:
            raise ConfigInvalid(f"puzzle solution for {pid} repeats a piece")
    for pid, pattern in config.stack_specs.items():
        if not pattern:
            raise ConfigInvalid(f"stack pattern for {pid} is empty")
        if len(set(pattern)) != len(pattern):
            raise ConfigInvalid(f"stack pattern for {pid} repeats a color")
    seen_blocks: set[str] = set()
    for owner, blocks in config.inventories.items():
        parts = owner.split(":", 1)
        if len(parts) != 2 or parts[0] not in ("station", "robot"):
            raise ConfigInvalid(f"inventory owner {owner!r} is not side:pid")
        if parts[1] not in config.participants:
            raise ConfigInvalid(f"inventory owner {owner!r} names an unknown participant")
        for b in blocks:
            if b not in config.block_catalog:
                raise ConfigInvalid(f"inventory block {b} missing from catalog")
            if b in seen_blocks:
                raise ConfigInvalid(f"block {b} appears in two inventories")
            seen_blocks.add(b)
    uninventoried = set(config.block_catalog) - seen_blocks
    if uninventoried:
        raise ConfigInvalid(f"catalog blocks {sorted(uninventoried)} not in any inventory")
    tags = [spec.tag_id for spec in config.block_catalog.values()]
    if len(set(tags)) != len(tags):
        raise ConfigInvalid("fiducial tag ids must be unique across the catalog")
    # every pattern color must be coverable from the inventories feeding that stack
    for pid, pattern in config.stack_specs.items():
        available = {
            config.block_catalog[b].color
            for owner, blocks in config.inventories.items()
            if owner_beneficiary(owner) == pid
            for b in blocks
        }
        missing = [c for c in pattern if c not in available]
        if missing:
            raise ConfigInvalid(f"stack colors {missing} for {pid} missing from its inventories")
    if not (0 <= config.seed < 2**64):
        raise ConfigInvalid("seed must fit in 64 unsigned bits")
    for pid in config.participants:
        if pid not in config.geometry.stack_bases:
            raise ConfigInvalid(f"geometry lacks a stack base for {pid}")


# --- serialization -----------------------------------------------------------

def to_dict(config: TaskConfig) -> dict:
    return {
        "participants": list(config.participants),
        "puzzle_specs": {
            pid: {"rows": s.rows, "cols": s.cols, "image_id": s.image_id,
                  "solution": list(s.solution)}
            for pid, s in config.puzzle_specs.items()
        },
        "stack_specs": {pid: list(p) for pid, p in config.stack_specs.items()},
        "inventories": {owner: list(b) for owner, b in config.inventories.items()},
        "block_catalog": {
            bid: {"tag_id": s.tag_id, "color": s.color}
            for bid, s in config.block_catalog.items()
        },
        "robot_policy": config.robot_policy,
        "timing": {
            "robot_pick_ms": config.timing.robot_pick_ms,
            "robot_place_ms": config.timing.robot_place_ms,
            "working_timeout_ms": config.timing.working_timeout_ms,
            "perception_interval_ms": config.timing.perception_interval_ms,
            "perception_stall_ms": config.timing.perception_stall_ms,
            "live_fetch_ms": config.timing.live_fetch_ms,
        },
        "geometry": {
            "block_height_m": config.geometry.block_height_m,
            "base_radius_m": config.geometry.base_radius_m,
            "history_depth": config.geometry.history_depth,
            "position_noise_m": config.geometry.position_noise_m,
            "stack_bases": {pid: list(xyz) for pid, xyz in config.geometry.stack_bases.items()},
        },
        "seed": config.seed,
    }


def from_dict(d: dict) -> TaskConfig:
    try:
        participants = tuple(d["participants"])
        timing_d = d.get("timing", {})
        geometry_d = d.get("geometry", {})
        bases = {
            pid: tuple(xyz) for pid, xyz in geometry_d.get("stack_bases", {}).items()
        } or default_stack_bases(participants)
        config = TaskConfig(
            participants=participants,
            puzzle_specs={
                pid: PuzzleSpec(rows=s["rows"], cols=s["cols"], image_id=s["image_id"],
                                solution=tuple(s["solution"]))
                for pid, s in d["puzzle_specs"].items()
            },
            stack_specs={pid: tuple(p) for pid, p in d["stack_specs"].items()},
            inventories={owner: tuple(b) for owner, b in d["inventories"].items()},
            block_catalog={
                bid: BlockSpec(tag_id=s["tag_id"], color=s["color"])
                for bid, s in d["block_catalog"].items()
            },
            robot_policy=d.get("robot_policy", "alternating_equal"),
            timing=TimingSpec(**{k: timing_d[k] for k in timing_d}),
            geometry=GeometrySpec(
                block_height_m=geometry_d.get("block_height_m", 0.040),
                base_radius_m=geometry_d.get("base_radius_m", 0.080),
                history_depth=geometry_d.get("history_depth", 30),
                position_noise_m=geometry_d.get("position_noise_m", 0.002),
                stack_bases=bases,
            ),
            seed=d.get("seed", 0),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigInvalid(f"malformed config document: {exc}") from None
    validate(config)
    return config


def load_config(path: str | Path) -> TaskConfig:
    """Load a config document; a bare path is retried with ``.json`` appended."""
    p = Path(path)
    if not p.exists() and p.suffix != ".json":
        candidate = p.with_name(p.name + ".json")
        if candidate.exists():
            p = candidate
    if not p.exists():
        raise ConfigInvalid(f"config file not found: {path}")
    return from_dict(json.loads(p.read_text()))


def save_config(config: TaskConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(config), indent=2) + "\n")


# --- reference scenario -------------------------------------------------------

_PALETTE = ("red", "orange", "yellow", "green", "blue", "purple", "white")


def reference_config(seed: int = 42) -> TaskConfig:
    """Two participants, seven-block unique-color stacks, 3x3 and 3x2 puzzles.

    Each stack's blocks are split between the participant's own station
    (pattern slots 0, 2, 4, 6) and the robot-side pile (slots 1, 3, 5), so
    the robot holds exactly three contributions per participant and the
    alternating policy ends with equal effort.
    """
    participants = ("P1", "P2")
    stack_specs = {"P1": _PALETTE, "P2": tuple(reversed(_PALETTE))}
    catalog: dict[str, BlockSpec] = {}
    inventories: dict[str, tuple[str, ...]] = {}
    tag = 1
    for i, pid in enumerate(participants):
        station: list[str] = []
        robot_side: list[str] = []
        for slot, color in enumerate(stack_specs[pid]):
            bid = f"B{7 * i + slot + 1:02d}"
            catalog[bid] = BlockSpec(tag_id=tag, color=color)
            (station if slot % 2 == 0 else robot_side).append(bid)
            tag += 1
        inventories[station_inventory(pid)] = tuple(station)
        inventories[robot_inventory(pid)] = tuple(robot_side)
    puzzle_specs = {
        "P1": PuzzleSpec(rows=3, cols=3, image_id="mosaic-a",
                         solution=("p4", "p0", "p7", "p2", "p8", "p1", "p5", "p3", "p6")),
        "P2": PuzzleSpec(rows=3, cols=2, image_id="mosaic-b",
                         solution=("p3", "p1", "p5", "p0", "p2", "p4")),
    }
    config = TaskConfig(
        participants=participants,
        puzzle_specs=puzzle_specs,
        stack_specs=stack_specs,
        inventories=inventories,
        block_catalog=catalog,
        geometry=GeometrySpec(stack_bases=default_stack_bases(participants)),
        seed=seed,
    )
    validate(config)
    return config


def demo_config(seed: int = 3) -> TaskConfig:
    """Single participant, 1x1 puzzle, two-block stack (one human-side, one
    robot-side). Small and fast: the default for live browser sessions."""
    participants = ("P1",)
    config = TaskConfig(
        participants=participants,
        puzzle_specs={"P1": PuzzleSpec(rows=1, cols=1, image_id="dot", solution=("p0",))},
        stack_specs={"P1": ("red", "blue")},
        inventories={station_inventory("P1"): ("B01",),
                     robot_inventory("P1"): ("B02",)},
        block_catalog={"B01": BlockSpec(tag_id=1, color="red"),
                       "B02": BlockSpec(tag_id=2, color="blue")},
        timing=TimingSpec(robot_pick_ms=800, robot_place_ms=800, live_fetch_ms=400),
        geometry=GeometrySpec(stack_bases=default_stack_bases(participants)),
        seed=seed,
    )
    validate(config)
    return config


def minimal_config(seed: int = 7) -> TaskConfig:
    """One participant, one block, 1x1 puzzle: the smallest legal session."""
    participants = ("P1",)
    config = TaskConfig(
        participants=participants,
        puzzle_specs={"P1": PuzzleSpec(rows=1, cols=1, image_id="dot", solution=("p0",))},
        stack_specs={"P1": ("red",)},
        inventories={station_inventory("P1"): ("B01",)},
        block_catalog={"B01": BlockSpec(tag_id=1, color="red")},
        geometry=GeometrySpec(stack_bases=default_stack_bases(participants)),
        seed=seed,
    )
    validate(config)
    return config
