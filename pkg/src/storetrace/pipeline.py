"""Composition helpers wiring trace files through the analysis stages.

The pipeline is file-based: gen -> merge -> analyze -> {flows, spans,
detect, report, query, serve}. Stages re-derive what they need from the
merged trace and the closed model, so each command is independently
re-runnable and deterministic.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterator

from . import aggregate, flows as flows_mod, metrics, spans as spans_mod
from .analysis import AnalysisResult, RedisAnalyzer
from .events import TraceEvent, parse_stream
from .sht import HistoryReader, HistoryWriter
from .statesys import StateSystem

log = logging.getLogger(__name__)


def stream_paths(trace_dir) -> list[Path]:
    """Per-host stream files in a directory (ground truth sidecars skipped)."""
    trace_dir = Path(trace_dir)
    paths = sorted(p for p in trace_dir.glob("*.jsonl"))
    if not paths:
        raise FileNotFoundError(f"no *.jsonl streams in {trace_dir}")
    return paths


def load_streams(trace_dir) -> list:
    return [parse_stream(p) for p in stream_paths(trace_dir)]


def merge_streams(
    trace_dir, out_path, sync: bool = True, reference: str | None = None
) -> aggregate.ClockOffsets:
    """Two streaming passes: pair collection for offsets, then a k-way merge.

    Memory stays bounded by matched-pair bookkeeping, not trace size.
    """
    from .events import event_to_line, iter_stream_events

    paths = stream_paths(trace_dir)
    collector = aggregate.PairCollector()
    total = 0
    hosts: set[str] = set()
    for p in paths:
        for ev in iter_stream_events(p):
            hosts.add(ev.host)
            total += 1
            if sync:
                collector.feed(ev)
    if sync:
        offsets = aggregate.offsets_from_pairs(
            collector.pairs(), sorted(hosts), reference
        )
    else:
        ref = reference or (sorted(hosts)[0] if hosts else "")
        offsets = aggregate.ClockOffsets(
            offsets={h: 0 for h in hosts}, reference_host=ref
        )
    del collector

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(out_path, "w", encoding="utf-8") as fp:
        merged = aggregate.merge_iterators(
            [iter_stream_events(p) for p in paths], offsets
        )
        for ev in merged:
            fp.write(event_to_line(ev))
            fp.write("\n")
            count += 1
    if count != total:
        raise RuntimeError(f"merge lost events: {count} != {total}")
    aggregate.write_offsets_sidecar(offsets, out_path.parent / "offsets.json")
    return offsets


def load_events(trace_path) -> Iterator[TraceEvent]:
    return aggregate.read_experiment(trace_path)


def analyze_file(trace_path, model_path, fanout: int = 50, block_size: int = 65536) -> dict:
    """Stream a merged trace into a model file; returns the report dict."""
    events = load_events(trace_path)
    first = next(events, None)
    tree_start = first.ts if first is not None else 0
    writer = HistoryWriter(model_path, tree_start=tree_start,
                           fanout=fanout, block_size=block_size)
    model = StateSystem(writer)
    analyzer = RedisAnalyzer(model, collect=False)
    if first is not None:
        analyzer.handle(first)
        for ev in events:
            analyzer.handle(ev)
    result = analyzer.finalize()
    report = result.report.to_json()
    report_path = Path(model_path).with_suffix(".report.json")
    report_path.write_text(json.dumps(report, indent=2) + "\n")
    return report


def collect(trace_path) -> AnalysisResult:
    """Run the automaton without persisting states, keeping the records
    flows/spans/detectors consume."""
    analyzer = RedisAnalyzer(StateSystem(None), collect=True)
    return analyzer.run(load_events(trace_path))


def build_flows_file(trace_path) -> flows_mod.FlowsResult:
    return flows_mod.build_flows(None, analysis=collect(trace_path))


def build_spans_file(trace_path) -> tuple[spans_mod.SpanForest, flows_mod.FlowsResult]:
    analysis = collect(trace_path)
    forest = spans_mod.reconstruct_spans(load_events(trace_path))
    flows_result = flows_mod.build_flows(None, analysis=analysis)
    spans_mod.attach_redis_spans(forest, flows_result, analysis.conn_tuples)
    return forest, flows_result


def detect_all(
    reader: HistoryReader,
    trace_path,
    bucket_ns: int = 1_000_000,
    threshold_ratio: float = 2.0,
    stall_threshold_ns: int | None = None,
    corr_window_ns: int = 10_000_000,
) -> list[metrics.Finding]:
    findings: list[metrics.Finding] = []
    try:
        series_in = metrics.bus_volume_series(reader, bucket_ns, "in")
        series_out = metrics.bus_volume_series(reader, bucket_ns, "out")
    except metrics.EmptyModel:
        return findings
    analysis = collect(trace_path)
    fanout = metrics.fanout_stats(analysis.sends)
    findings += metrics.detect_bus_amplification(
        series_in, series_out, threshold_ratio=threshold_ratio, fanout=fanout
    )
    findings += metrics.detect_double_free(load_events(trace_path))
    findings += metrics.detect_read_stall(
        reader, series_out,
        stall_threshold_ns=stall_threshold_ns, corr_window_ns=corr_window_ns,
    )
    findings.sort(key=lambda f: (f.t0, f.kind, f.severity))
    return findings
