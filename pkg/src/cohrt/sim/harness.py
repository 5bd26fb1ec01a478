"""Deterministic end-to-end scenario runner and log replay.

A scenario wires the coordination server, robot agent, scripted humans, and
the ground-truth perception feed over in-memory ports, all driven by one
scheduler. Under the virtual clock a multi-minute session finishes in
milliseconds of wall time, and (config, seed, fault schedule) fully
determine the resulting log. Replaying a log folds its state-changing
events through the world model and must land on the server's final state
exactly; any divergence means a server bug or a tampered log.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .. import config as cfg
from ..events import EventKind, SessionLog, read_log
from ..metrics import FluencyReport, fluency_report, robot_contributions
from ..robot import RobotAgent
from ..server.core import CoordinationServer
from ..world import TransitionError, WorldState, apply_transition, is_session_done, new_session
from ..events import STATE_CHANGING
from .clock import Scheduler
from .ground_truth import GroundTruthWorld, PerceptionEmitter
from .humans import ScriptedAgentProfile, ScriptedHuman, derive_seed
from .transport import port_pair

logger = logging.getLogger(__name__)

DEFAULT_DEADLINE_MS = 60 * 60 * 1000  # one simulated hour


class ReplayDivergence(Exception):
    """A logged event is illegal against the replayed state."""


class FaultUnrecoverable(Exception):
    pass


@dataclass(frozen=True)
class Fault:
    """``disconnect:<pid>@<ms>[:rejoin@<ms>]``, ``exec-fault@<ms>``,
    or ``perception-stall@<ms>``."""
    kind: str
    agent: str | None
    at_ms: int
    rejoin_at_ms: int | None = None


def parse_fault(spec: str) -> Fault:
    m = re.fullmatch(r"disconnect:([^@]+)@(\d+)(?::rejoin@(\d+))?", spec)
    if m:
        return Fault("disconnect", m.group(1), int(m.group(2)),
                     int(m.group(3)) if m.group(3) else None)
    m = re.fullmatch(r"exec-fault@(\d+)", spec)
    if m:
        return Fault("exec-fault", None, int(m.group(1)))
    m = re.fullmatch(r"perception-stall@(\d+)", spec)
    if m:
        return Fault("perception-stall", None, int(m.group(1)))
    raise ValueError(f"unrecognized fault spec {spec!r}")


@dataclass
class ScenarioResult:
    log_path: Path
    status: str  # Success | Timeout | Aborted | FaultUnrecoverable
    end_reason: str | None
    report: FluencyReport | None
    robot_contributions: dict[str, int]
    final_state: WorldState
    log: SessionLog
    notes: list[str] = field(default_factory=list)


def run_session(config: cfg.TaskConfig, clients: list[ScriptedHuman],
                robot: RobotAgent | None, perception_source: PerceptionEmitter,
                server: CoordinationServer, scheduler: Scheduler,
                deadline_ms: int = DEFAULT_DEADLINE_MS) -> SessionLog:
    """Drive an assembled session to completion (or the deadline) and return
    the full log."""
    server.begin()
    perception_source.start()
    scheduler.run(until=lambda: server.ended, deadline_ms=deadline_ms)
    if not server.ended:
        server.end_session("timeout")
    return server.log


def run_scenario(config_path_or_config, seed: int | None = None,
                 faults: tuple[str, ...] = (), out_dir: str | Path | None = None,
                 real_time: bool = False, live_pids: tuple[str, ...] = (),
                 external_robot: bool = False, net=None,
                 abort_on_client_loss: bool = False, on_ready=None,
                 deadline_ms: int = DEFAULT_DEADLINE_MS) -> ScenarioResult:
    """Assemble and run one scenario.

    ``live_pids`` suppresses the scripted agent for those participants (a
    browser client takes their place); ``external_robot`` does the same for
    the robot. ``net`` is an optional (host, tcp_port, ws_port) triple that
    exposes the server on real sockets, required whenever live or external
    agents participate. ``on_ready(frontend)`` fires once sockets listen.
    """
    if isinstance(config_path_or_config, cfg.TaskConfig):
        config = config_path_or_config
    else:
        config = cfg.load_config(config_path_or_config)
    if seed is not None:
        config = cfg.from_dict({**cfg.to_dict(config), "seed": seed})
    fault_plan = [parse_fault(f) if isinstance(f, str) else f for f in faults]

    out = Path(out_dir) if out_dir is not None else Path("runs") / f"seed-{config.seed}"
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "session.log"

    scheduler = Scheduler(real_time=real_time)
    server = CoordinationServer(config, scheduler, log_path=log_path,
                                abort_on_client_loss=abort_on_client_loss)
    ground_truth = GroundTruthWorld(config)

    frontend = None
    if net is not None:
        from ..server.net import NetworkFrontend
        host, tcp_port, ws_port = net
        frontend = NetworkFrontend(server, host=host, tcp_port=tcp_port,
                                   ws_port=ws_port)
        frontend.start()

    exec_faults = [f for f in fault_plan if f.kind == "exec-fault"]
    robot = None
    if not external_robot:
        robot_port, robot_server_port = port_pair(scheduler, "robot")
        server.attach(robot_server_port)
        robot = RobotAgent(robot_port, scheduler, ground_truth,
                           fault_at_ms=exec_faults[0].at_ms if exec_faults else None)

    humans: dict[str, ScriptedHuman] = {}
    for pid in config.participants:
        if pid in live_pids:
            continue
        profile = ScriptedAgentProfile(pid=pid)
        human = ScriptedHuman(profile, scheduler, ground_truth, config.seed)
        client_port, server_port = port_pair(scheduler, f"human-{pid}")
        server.attach(server_port)
        human.connect(client_port)
        humans[pid] = human

    if live_pids or external_robot:
        from .actuation import ExternalActuator
        actuator_port, actuator_server_port = port_pair(scheduler, "actuator")
        server.attach(actuator_server_port)
        ExternalActuator(actuator_port, scheduler, ground_truth,
                         live_pids=tuple(live_pids), external_robot=external_robot)

    perception_port, perception_server_port = port_pair(scheduler, "perception")
    server.attach(perception_server_port)
    emitter = PerceptionEmitter(perception_port, scheduler, ground_truth, config,
                                seed=derive_seed(config.seed, "perception"))

    for fault in fault_plan:
        if fault.kind == "disconnect":
            agent = humans.get(fault.agent)
            if agent is None:
                raise ValueError(f"fault names unknown scripted agent {fault.agent!r}")
            scheduler.call_at(fault.at_ms, agent.disconnect)
            if fault.rejoin_at_ms is not None:
                def rejoin(a=agent, pid=fault.agent):
                    client_port, server_port = port_pair(scheduler, f"human-{pid}-rejoin")
                    server.attach(server_port)
                    a.connect(client_port)
                scheduler.call_at(fault.rejoin_at_ms, rejoin)
        elif fault.kind == "perception-stall":
            scheduler.call_at(fault.at_ms, emitter.stop)

    if on_ready is not None:
        on_ready(frontend)
    run_session(config, list(humans.values()), robot, emitter, server, scheduler,
                deadline_ms=deadline_ms)
    if frontend is not None:
        frontend.stop()

    log = server.log
    final_state = server.state
    if server.end_reason == "completed" and is_session_done(final_state):
        status = "Success"
    elif server.end_reason == "timeout":
        status = "Timeout"
    elif server.end_reason == "perception_stall":
        status = "FaultUnrecoverable"
    else:
        status = "Aborted"

    notes: list[str] = []
    report: FluencyReport | None = None
    try:
        report = fluency_report(log)
    except Exception as exc:
        notes.append(f"no fluency report: {exc}")
    return ScenarioResult(
        log_path=log_path, status=status, end_reason=server.end_reason,
        report=report, robot_contributions=robot_contributions(log),
        final_state=final_state, log=log, notes=notes,
    )


def replay(log_path: str | Path) -> WorldState:
    """Fold the log's state-changing events from a fresh session.

    The configuration is taken from the SessionStart payload, so a log file
    is self-contained. Raises :class:`ReplayDivergence` if any event is
    illegal against the replayed state.
    """
    log = read_log(log_path)
    log.validate()
    start = log.events[0]
    config = cfg.from_dict(start.payload["config"])
    state = new_session(config)
    for event in log:
        if event.kind not in STATE_CHANGING:
            continue
        try:
            state = apply_transition(state, event)
        except TransitionError as exc:
            raise ReplayDivergence(
                f"{event.kind.value} at ts {event.ts_ms} is illegal: {exc}") from exc
    return state
