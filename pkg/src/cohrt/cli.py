"""Command-line entry points.

``cohrt-sim`` runs scenarios (virtual clock by default, real time for live
web participants) and replays logs; ``cohrt-metrics`` turns a session log
into a fluency report with optional figures; ``cohrt-server`` exposes a bare
coordination server on real sockets; ``cohrt-robot`` connects a robot
teammate to a running server over TCP.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as cfg
from .events import read_log
from .metrics import DEFAULT_MIN_ACTIVITY_MS, fluency_report
from .report import RENDERERS, save_figures
from .server.core import CoordinationServer
from .server.net import DEFAULT_TCP_PORT, DEFAULT_WS_PORT, NetworkFrontend, TcpClientPort
from .sim.clock import Scheduler
from .sim.harness import replay, run_scenario
from .world import state_to_dict

logger = logging.getLogger(__name__)


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _load_config(path: str | None, builtin: str | None):
    if builtin:
        return {"reference": cfg.reference_config, "demo": cfg.demo_config,
                "minimal": cfg.minimal_config}[builtin]()
    if path is None:
        raise SystemExit("either --config or --builtin is required")
    return cfg.load_config(path)


# --- cohrt-sim ---------------------------------------------------------------

def sim_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cohrt-sim",
                                     description="scenario runner and log replay")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario to completion")
    run.add_argument("--config", help="task configuration file")
    run.add_argument("--builtin", choices=["reference", "demo", "minimal"],
                     help="use a built-in scenario instead of a file")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--real-time", action="store_true",
                     help="wall-clock pacing (required for live participants)")
    run.add_argument("--fault", action="append", default=[],
                     help="disconnect:<pid>@<ms>[:rejoin@<ms>] | exec-fault@<ms> "
                          "| perception-stall@<ms>")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--live", action="append", default=[], metavar="PID",
                     help="participant joins via the web client instead of a script")
    run.add_argument("--external-robot", action="store_true",
                     help="expect a cohrt-robot client instead of the in-process robot")
    run.add_argument("--port", type=int, default=DEFAULT_TCP_PORT)
    run.add_argument("--ws-port", type=int, default=DEFAULT_WS_PORT)
    run.add_argument("--abort-on-client-loss", action="store_true")
    run.add_argument("--deadline-ms", type=int, default=60 * 60 * 1000)
    run.add_argument("--figures", action="store_true",
                     help="render report figures next to the log")

    rep = sub.add_parser("replay", help="fold a log through the world model")
    rep.add_argument("log", help="session log file")

    args = parser.parse_args(argv)
    _setup_logging(args.verbose)

    if args.command == "replay":
        state = replay(args.log)
        json.dump(state_to_dict(state), sys.stdout, indent=2)
        print()
        return 0

    config = _load_config(args.config, args.builtin)
    needs_net = bool(args.live) or args.external_robot
    net = ("127.0.0.1", args.port, args.ws_port) if needs_net else None
    real_time = args.real_time or needs_net

    def on_ready(frontend):
        if frontend is not None:
            print(f"tcp_port={frontend.tcp_port}", flush=True)
            print(f"ws_port={frontend.ws_port}", flush=True)
            print("ready", flush=True)

    result = run_scenario(
        config, seed=args.seed, faults=tuple(args.fault), out_dir=args.out,
        real_time=real_time, live_pids=tuple(args.live),
        external_robot=args.external_robot, net=net,
        abort_on_client_loss=args.abort_on_client_loss, on_ready=on_ready,
        deadline_ms=args.deadline_ms)

    print(f"status={result.status}")
    print(f"log={result.log_path}")
    print(f"robot_contributions={json.dumps(result.robot_contributions, sort_keys=True)}")
    for note in result.notes:
        print(f"note: {note}")
    if result.report is not None:
        out_dir = result.log_path.parent
        (out_dir / "report.csv").write_text(RENDERERS["csv"](result.report))
        print(RENDERERS["table"](result.report))
        if args.figures:
            for path in save_figures(result.log, result.report, out_dir):
                print(f"figure={path}")
    return 0 if result.status == "Success" else 1


# --- cohrt-metrics -------------------------------------------------------------

def metrics_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cohrt-metrics",
                                     description="fluency metrics over a session log")
    parser.add_argument("log", help="session log file")
    parser.add_argument("--format", choices=sorted(RENDERERS), default="table")
    parser.add_argument("--min-activity-ms", type=int, default=DEFAULT_MIN_ACTIVITY_MS,
                        help="width given to instantaneous puzzle moves")
    parser.add_argument("--out", default=None, help="write the report here instead of stdout")
    parser.add_argument("--figures", default=None, metavar="DIR",
                        help="also render figures into DIR")
    args = parser.parse_args(argv)

    log = read_log(args.log)
    report = fluency_report(log, min_activity_ms=args.min_activity_ms)
    rendered = RENDERERS[args.format](report)
    if args.out:
        Path(args.out).write_text(rendered)
    else:
        sys.stdout.write(rendered)
    if args.figures:
        for path in save_figures(log, report, args.figures,
                                 min_activity_ms=args.min_activity_ms):
            print(f"figure={path}", file=sys.stderr)
    return 0


# --- cohrt-server ----------------------------------------------------------------

def server_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cohrt-server",
        description="bare coordination server on real sockets (bring your own "
                    "robot, perception source, and clients)")
    parser.add_argument("--config", help="task configuration file")
    parser.add_argument("--builtin", choices=["reference", "demo", "minimal"])
    parser.add_argument("--port", type=int, default=DEFAULT_TCP_PORT)
    parser.add_argument("--ws-port", type=int, default=DEFAULT_WS_PORT)
    parser.add_argument("--log-out", default="session.log")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--abort-on-client-loss", action="store_true")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)

    config = _load_config(args.config, args.builtin)
    if args.seed is not None:
        config = cfg.from_dict({**cfg.to_dict(config), "seed": args.seed})
    scheduler = Scheduler(real_time=True)
    server = CoordinationServer(config, scheduler, log_path=args.log_out,
                                abort_on_client_loss=args.abort_on_client_loss)
    frontend = NetworkFrontend(server, tcp_port=args.port, ws_port=args.ws_port)
    frontend.start()
    print(f"tcp_port={frontend.tcp_port}", flush=True)
    print(f"ws_port={frontend.ws_port}", flush=True)
    server.begin()
    try:
        scheduler.run(until=lambda: server.ended)
    except KeyboardInterrupt:
        server.end_session("operator_interrupt")
    finally:
        frontend.stop()
    print(f"session ended: {server.end_reason}; log at {args.log_out}")
    return 0


# --- cohrt-robot -----------------------------------------------------------------

class _NullActuator:
    """Motion is actuated on the hosting side; see the sim's external mode."""

    def place_block(self, block_id: str, station_id: str) -> None:
        logger.info("place %s at %s (actuated host-side)", block_id, station_id)

    def return_block(self, block_id: str) -> None:
        logger.info("return %s (actuated host-side)", block_id)


def robot_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cohrt-robot",
                                     description="robot teammate over TCP")
    parser.add_argument("--server", default=f"127.0.0.1:{DEFAULT_TCP_PORT}",
                        metavar="HOST:PORT")
    parser.add_argument("--policy", default=None,
                        help="override the policy named in the task config")
    parser.add_argument("--timing", default=None, metavar="pick=MS,place=MS",
                        help="report different action durations to the log")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)

    host, _, port_text = args.server.partition(":")
    scheduler = Scheduler(real_time=True)
    port = TcpClientPort(host, int(port_text or DEFAULT_TCP_PORT),
                         clock=scheduler.now_ms)

    timing_override = {}
    if args.timing:
        parsed = dict(kv.split("=", 1) for kv in args.timing.split(","))
        if "pick" in parsed:
            timing_override["robot_pick_ms"] = int(parsed["pick"])
        if "place" in parsed:
            timing_override["robot_place_ms"] = int(parsed["place"])

    from .robot import RobotAgent
    agent = RobotAgent(port, scheduler, _NullActuator(), policy_name=args.policy,
                       timing_override=timing_override)
    # socket reads land on the reader thread; marshal them onto the scheduler
    inner = port.on_message
    port.on_message = lambda m: scheduler.inject(lambda: inner(m))
    port.start()
    try:
        scheduler.run(until=lambda: agent.ended)
    except KeyboardInterrupt:
        pass
    finally:
        port.close()
    print(f"robot done; contributed {getattr(agent.policy_state, 'contributed', {})}")
    return 0
