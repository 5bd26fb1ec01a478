"""Physical world stand-in: where blocks actually are, and the synthetic
perception source that observes it.

Agents act on the ground truth (placing a block onto a physical stack);
the emitter samples it at a fixed cadence, adds seeded Gaussian position
noise, optionally hides non-top blocks, and streams detection frames over
the protocol exactly like a camera adapter would.
"""

from __future__ import annotations

import random

from .. import config as cfg
from ..protocol import PROTOCOL_VERSION, MessageKind
from .clock import Scheduler


class GroundTruthWorld:
    """Physical stack contents per station."""

    def __init__(self, config: cfg.TaskConfig):
        self.config = config
        self.stacks: dict[str, list[str]] = {pid: [] for pid in config.participants}

    def place_block(self, block_id: str, station_id: str) -> None:
        for contents in self.stacks.values():
            if block_id in contents:
                raise ValueError(f"{block_id} is already on a stack")
        self.stacks[station_id].append(block_id)

    def return_block(self, block_id: str) -> None:
        pass  # back to its inventory pile; piles are not observed


class PerceptionEmitter:
    """Streams DetectionFrame messages sampled from the ground truth."""

    def __init__(self, port, scheduler: Scheduler, ground_truth: GroundTruthWorld,
                 config: cfg.TaskConfig, seed: int, occlusion_rate: float = 0.0):
        self.port = port
        self.scheduler = scheduler
        self.ground_truth = ground_truth
        self.config = config
        self.rng = random.Random(seed)
        self.occlusion_rate = occlusion_rate
        self.running = False
        self._ended = False
        port.on_message = self._on_message
        port.on_close = lambda: self.stop()
        port.send(MessageKind.HELLO, {"agent": "perception",
                                      "version": PROTOCOL_VERSION})

    def _on_message(self, msg) -> None:
        if msg.kind is MessageKind.SESSION_END:
            self._ended = True
            self.running = False

    def start(self) -> None:
        if self.running or self._ended:
            return
        self.running = True
        self._tick()

    def stop(self) -> None:
        self.running = False

    def _tick(self) -> None:
        if not self.running:
            return
        now = self.scheduler.now_ms()
        geometry = self.config.geometry
        sigma = geometry.position_noise_m
        detections = []
        for station, contents in self.ground_truth.stacks.items():
            base = geometry.stack_bases[station]
            for level, block_id in enumerate(contents):
                if (self.occlusion_rate > 0.0 and level < len(contents) - 1
                        and self.rng.random() < self.occlusion_rate):
                    continue
                spec = self.config.block_catalog[block_id]
                detections.append({
                    "tag_id": spec.tag_id,
                    "position": [base[0] + self.rng.gauss(0.0, sigma),
                                 base[1] + self.rng.gauss(0.0, sigma),
                                 max(0.0, base[2] + level * geometry.block_height_m
                                     + self.rng.gauss(0.0, sigma))],
                    "station_id": station,
                })
        try:
            self.port.send(MessageKind.DETECTION_FRAME,
                           {"ts_ms": now, "detections": detections})
        except Exception:
            self.running = False
            return
        self.scheduler.call_after(self.config.timing.perception_interval_ms, self._tick)
