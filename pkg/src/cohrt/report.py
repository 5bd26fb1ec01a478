"""Fluency report rendering: delimited text plus matplotlib figures.

The figures accompany the delimited output on disk: an activity timeline
(one lane per agent, placement ticks overlaid), a functional-delay
histogram, and the robot's contribution balance.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .events import EventKind, SessionLog
from .metrics import FluencyReport, extract_intervals


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _rows(report: FluencyReport) -> list[tuple[str, str, str]]:
    rows = [("task_completion_ms", "", _fmt(report.task_completion_ms))]
    for agent in report.agents:
        rows.append(("idle_ms", agent, _fmt(report.idle_ms[agent])))
        rows.append(("idle_fraction", agent, _fmt(report.idle_fraction[agent])))
        rows.append(("active_ms", agent, _fmt(report.active_ms[agent])))
    rows.append(("concurrent_activity_fraction", "",
                 _fmt(report.concurrent_activity_fraction)))
    for pair, frac in report.pairwise_overlap_fraction.items():
        rows.append(("pairwise_overlap_fraction", pair, _fmt(frac)))
    rows.append(("functional_delay_count", "", _fmt(len(report.functional_delays_ms))))
    rows.append(("functional_delay_mean_ms", "", _fmt(report.functional_delay_mean_ms)))
    rows.append(("functional_delay_median_ms", "",
                 _fmt(report.functional_delay_median_ms)))
    rows.append(("rhythm_cv", "", _fmt(report.rhythm_cv)))
    for pid, n in sorted(report.robot_contributions.items()):
        rows.append(("robot_contribution", pid, _fmt(n)))
    return rows


def render_csv(report: FluencyReport) -> str:
    lines = ["metric,agent,value"]
    lines += [f"{m},{a},{v}" for m, a, v in _rows(report)]
    return "\n".join(lines) + "\n"


def render_lines(report: FluencyReport) -> str:
    out = []
    for metric, agent, value in _rows(report):
        key = f"{metric}[{agent}]" if agent else metric
        out.append(f"{key}={value}")
    return "\n".join(out) + "\n"


def render_table(report: FluencyReport) -> str:
    rows = _rows(report)
    w_metric = max(len(r[0]) for r in rows)
    w_agent = max(len(r[1]) for r in rows) or 1
    lines = [f"{'metric':<{w_metric}}  {'agent':<{w_agent}}  value",
             "-" * (w_metric + w_agent + 9)]
    for metric, agent, value in rows:
        lines.append(f"{metric:<{w_metric}}  {agent:<{w_agent}}  {value}")
    if report.warnings:
        lines.append("")
        lines += [f"warning: {w}" for w in report.warnings]
    return "\n".join(lines) + "\n"


RENDERERS = {"table": render_table, "csv": render_csv, "lines": render_lines}


def save_figures(log: SessionLog, report: FluencyReport, out_dir: str | Path,
                 min_activity_ms: int = 500) -> list[Path]:
    """Write the report figures next to the delimited output; returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    intervals = extract_intervals(log, min_activity_ms)
    agents = report.agents
    lanes = {agent: i for i, agent in enumerate(agents)}

    fig, ax = plt.subplots(figsize=(9, 2 + 0.6 * len(agents)))
    colors = plt.cm.tab10.colors
    for agent, lane in lanes.items():
        spans = [(iv.start_ms / 1000, (iv.end_ms - iv.start_ms) / 1000)
                 for iv in intervals if iv.agent == agent]
        ax.broken_barh(spans, (lane - 0.3, 0.6), color=colors[lane % 10])
    placements = [(e.ts_ms / 1000, lanes.get(e.agent)) for e in log
                  if e.kind is EventKind.STACK_PLACED and e.agent in lanes]
    if placements:
        xs, ys = zip(*placements)
        ax.plot(xs, ys, "kv", markersize=6, label="block placed")
        ax.legend(loc="upper left")
    ax.set_yticks(range(len(agents)), agents)
    ax.set_xlabel("session time (s)")
    ax.set_title("activity timeline")
    ax.set_ylim(-0.6, len(agents) - 0.4)
    fig.tight_layout()
    path = out / "timeline.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    if report.functional_delays_ms:
        ax.hist([d / 1000 for d in report.functional_delays_ms],
                bins=20, color="#4878a8", edgecolor="white")
    ax.set_xlabel("functional delay (s)")
    ax.set_ylabel("handoffs")
    ax.set_title("functional delays between agents")
    fig.tight_layout()
    path = out / "functional_delay.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(5, 4))
    pids = sorted(report.robot_contributions) or ["-"]
    counts = [report.robot_contributions.get(p, 0) for p in pids]
    ax.bar(pids, counts, color="#6aa84f")
    ax.set_ylabel("blocks stacked by the robot")
    ax.set_title("robot contribution balance")
    ax.set_ylim(0, max(counts + [1]) + 1)
    fig.tight_layout()
    path = out / "contributions.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written
