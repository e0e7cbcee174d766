"""Report rendering: figures plus delimited exports for a closed model.

Writes into an output directory:
  bus_volume.png       in/out bus volume curves
  command_latency.png  per-command mean execution time bars
  series_out.csv       (ts,value) rows for the outbound bus series
  series_in.csv        same for ingress
  latency.csv          per-command stats
  findings.json        detector output
  summary.txt          one-paragraph run overview
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .metrics import Finding, Series, latency_report
from .sht import HistoryReader


def _write_series_csv(series: Series, path: Path) -> None:
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp)
        w.writerow(["ts", "value"])
        for ts, value in series.csv_rows():
            w.writerow([ts, value])


def _plot_bus(series_in: Series, series_out: Series, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(10, 4))
    xs_in = [t / 1e6 for t, _ in series_in.csv_rows()]
    xs_out = [t / 1e6 for t, _ in series_out.csv_rows()]
    ax.plot(xs_in, series_in.values, label="entering (client ingress)", color="tab:blue")
    ax.plot(xs_out, series_out.values, label="bus outbound", color="tab:red")
    ax.set_xlabel("time (ms)")
    ax.set_ylabel(f"bytes per {series_out.bucket_ns / 1e6:g} ms")
    ax.set_title("Cluster bus data volume")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _plot_latency(latency: dict[str, dict], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    commands = list(latency)
    means = [latency[c]["mean_ns"] / 1000.0 for c in commands]
    p99s = [latency[c]["p99_ns"] / 1000.0 for c in commands]
    fig, ax = plt.subplots(figsize=(8, 4))
    xs = range(len(commands))
    ax.bar([x - 0.2 for x in xs], means, width=0.4, label="mean", color="tab:blue")
    ax.bar([x + 0.2 for x in xs], p99s, width=0.4, label="p99", color="tab:orange")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(commands)
    ax.set_ylabel("execution time (us)")
    ax.set_title("Command execution time")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_report(
    reader: HistoryReader,
    series_in: Series,
    series_out: Series,
    findings: list[Finding],
    out_dir,
    report_counts: dict | None = None,
) -> list[str]:
    """Render everything; returns the list of files written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    latency = latency_report(reader)

    _write_series_csv(series_out, out / "series_out.csv")
    _write_series_csv(series_in, out / "series_in.csv")
    written += ["series_out.csv", "series_in.csv"]

    with open(out / "latency.csv", "w", newline="") as fp:
        w = csv.writer(fp)
        w.writerow(["command", "count", "mean_ns", "p50_ns", "p95_ns", "p99_ns"])
        for cmd, stats in latency.items():
            w.writerow([cmd, stats["count"], stats["mean_ns"], stats["p50_ns"],
                        stats["p95_ns"], stats["p99_ns"]])
    written.append("latency.csv")

    (out / "findings.json").write_text(
        json.dumps([f.to_json() for f in findings], indent=2) + "\n"
    )
    written.append("findings.json")

    _plot_bus(series_in, series_out, out / "bus_volume.png")
    written.append("bus_volume.png")
    if latency:
        _plot_latency(latency, out / "command_latency.png")
        written.append("command_latency.png")

    span_ms = (reader.tree_end - reader.tree_start) / 1e6
    lines = [
        f"time span: {span_ms:.3f} ms ({reader.tree_start}..{reader.tree_end} ns)",
        f"attributes: {reader.quark_count}",
        f"bus bytes out: {series_out.total():.0f}, in: {series_in.total():.0f}",
        f"findings: {len(findings)}"
        + (
            " (" + ", ".join(
                f"{f.kind}:{f.severity}" for f in findings[:8]
            ) + (", ..." if len(findings) > 8 else "") + ")"
            if findings
            else ""
        ),
    ]
    if report_counts:
        lines.insert(0, f"events: {report_counts.get('events')}, "
                        f"requests: {report_counts.get('requests')}, "
                        f"unmatched: {report_counts.get('unmatched')}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    written.append("summary.txt")
    return written
