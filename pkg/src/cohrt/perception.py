"""State observation from fiducial detections.

Detections (tag id + 3D position) are grouped by nearest stack base, ordered
by height into slot-indexed stack observations, and reconciled against the
authoritative world state. Slots hidden in the current frame are filled from
a bounded history of recent observations, so a stack reads correctly even
when blocks are partially occluded. Detections near no base (blocks in
transit or in inventory piles) are ignored.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .config import GeometrySpec
from .world import ManipulationState, WorldState, owner_beneficiary


class PerceptionError(Exception):
    pass


class UnknownTag(PerceptionError):
    pass


class AmbiguousAssignment(PerceptionError):
    pass


class InconsistentHistory(PerceptionError):
    pass


@dataclass(frozen=True)
class Detection:
    tag_id: int
    position: tuple[float, float, float]
    station_id: str


@dataclass(frozen=True)
class DetectionFrame:
    ts_ms: int
    detections: tuple[Detection, ...]

    @classmethod
    def from_payload(cls, payload: dict) -> "DetectionFrame":
        return cls(
            ts_ms=payload["ts_ms"],
            detections=tuple(
                Detection(tag_id=d["tag_id"], position=tuple(d["position"]),
                          station_id=d["station_id"])
                for d in payload["detections"]
            ),
        )

    def to_payload(self) -> dict:
        return {
            "ts_ms": self.ts_ms,
            "detections": [
                {"tag_id": d.tag_id, "position": list(d.position),
                 "station_id": d.station_id}
                for d in self.detections
            ],
        }


@dataclass(frozen=True)
class StackObservation:
    """Slot-indexed view of one stack; None marks an occluded slot."""
    station_id: str
    slots: tuple[str | None, ...]
    confidence: str  # "Full" | "HistoryAssisted"


@dataclass(frozen=True)
class MismatchReport:
    station_id: str
    slot: int
    block_id: str | None
    detail: str


@dataclass(frozen=True)
class PlacementEvidence:
    station_id: str
    slot: int
    block_id: str


@dataclass
class ReconcileResult:
    placements: list[PlacementEvidence] = field(default_factory=list)
    mismatches: list[MismatchReport] = field(default_factory=list)


def infer_stacks(frame: DetectionFrame, catalog: dict[int, str],
                 geometry: GeometrySpec) -> list[StackObservation]:
    """Group detections by nearest stack base and order them into slots.

    ``catalog`` maps tag id to block id. A detection within the assignment
    radius of two bases is ambiguous; one within none is ignored. Slot index
    is the height quantized by the block height, so a gap between detected
    blocks shows up as None slots flagged for history fill.
    """
    h = geometry.block_height_m
    r = geometry.base_radius_m
    per_station: dict[str, list[tuple[int, str]]] = {s: [] for s in geometry.stack_bases}
    for d in frame.detections:
        near = []
        for station, base in geometry.stack_bases.items():
            dist = math.hypot(d.position[0] - base[0], d.position[1] - base[1])
            if dist <= r:
                near.append(station)
        if not near:
            continue  # in transit or in an inventory pile
        if len(near) > 1:
            raise AmbiguousAssignment(
                f"tag {d.tag_id} within radius of bases {sorted(near)}")
        if d.tag_id not in catalog:
            raise UnknownTag(f"tag {d.tag_id}")
        station = near[0]
        base_z = geometry.stack_bases[station][2]
        # half-block margin: round to the nearest slot
        slot = round((d.position[2] - base_z) / h)
        per_station[station].append((max(slot, 0), catalog[d.tag_id]))
    observations = []
    for station, entries in per_station.items():
        if not entries:
            observations.append(StackObservation(station, (), "Full"))
            continue
        slots: dict[int, str] = {}
        for slot, block_id in entries:
            if slot in slots:
                raise AmbiguousAssignment(
                    f"station {station}: blocks {slots[slot]} and {block_id} "
                    f"both resolve to slot {slot}")
            slots[slot] = block_id
        top = max(slots)
        layered = tuple(slots.get(i) for i in range(top + 1))
        confidence = "Full" if all(s is not None for s in layered) else "HistoryAssisted"
        observations.append(StackObservation(station, layered, confidence))
    return observations


class StackHistory:
    """The last H observations per station, newest first on lookup."""

    def __init__(self, depth: int = 30):
        self.depth = depth
        self._frames: dict[str, deque[StackObservation]] = {}

    def record(self, obs: StackObservation) -> None:
        self._frames.setdefault(obs.station_id, deque(maxlen=self.depth)).append(obs)

    def fill(self, obs: StackObservation) -> StackObservation:
        """Fill occluded slots from the most recent observation that saw them."""
        if all(s is not None for s in obs.slots):
            return obs
        past = self._frames.get(obs.station_id, ())
        slots = list(obs.slots)
        filled_any = False
        for i, blk in enumerate(slots):
            if blk is not None:
                continue
            for old in reversed(past):
                if i < len(old.slots) and old.slots[i] is not None:
                    slots[i] = old.slots[i]
                    filled_any = True
                    break
        seen: set[str] = set()
        for blk in slots:
            if blk is not None:
                if blk in seen:
                    raise InconsistentHistory(
                        f"station {obs.station_id}: block {blk} appears twice after fill")
                seen.add(blk)
        confidence = "HistoryAssisted" if filled_any else obs.confidence
        return StackObservation(obs.station_id, tuple(slots), confidence)


def reconcile(prev_state: WorldState, observations: list[StackObservation],
              history: StackHistory) -> ReconcileResult:
    """Compare filled observations against the world state.

    Emits a placement for each newly observed block sitting at the correct
    next slot of its owner's stack while in Working state; anything
    contradicting the pattern or the already-placed prefix becomes a
    mismatch report, never a state change. Slots that stay unknown after the
    history fill suspend confirmation of everything above them.
    """
    result = ReconcileResult()
    for raw in observations:
        obs = history.fill(raw)
        history.record(raw)
        pid = obs.station_id
        stack = prev_state.stacks.get(pid)
        if stack is None:
            result.mismatches.append(MismatchReport(
                obs.station_id, -1, None, f"no stack at station {obs.station_id}"))
            continue
        placed = list(stack.placed)
        # the already-confirmed prefix must agree with what is visible
        contradiction = False
        for i, blk in enumerate(obs.slots[: len(placed)]):
            if blk is not None and blk != placed[i]:
                result.mismatches.append(MismatchReport(
                    pid, i, blk, f"slot {i} holds {placed[i]}, observed {blk}"))
                contradiction = True
        if contradiction:
            continue
        for i in range(len(placed), len(obs.slots)):
            blk = obs.slots[i]
            if blk is None:
                break  # unknown slot: cannot confirm anything above it
            record = prev_state.blocks.get(blk)
            if record is None:
                result.mismatches.append(MismatchReport(pid, i, blk, "unknown block"))
                break
            if record.manipulation_state is ManipulationState.STACKED:
                if record.stack_slot == i and owner_beneficiary(record.inventory_owner) == pid:
                    continue  # already accounted for
                result.mismatches.append(MismatchReport(
                    pid, i, blk, "block already stacked elsewhere"))
                break
            if record.manipulation_state is not ManipulationState.WORKING:
                result.mismatches.append(MismatchReport(
                    pid, i, blk, f"block is {record.manipulation_state.value}, not Working"))
                break
            if i >= len(stack.pattern) or record.color != stack.pattern[i]:
                needed = stack.pattern[i] if i < len(stack.pattern) else "nothing"
                result.mismatches.append(MismatchReport(
                    pid, i, blk, f"color {record.color} where pattern needs {needed}"))
                break
            result.placements.append(PlacementEvidence(pid, i, blk))
    return result
