"""Time-series metrics and diagnostic detectors over the closed model.

All detectors are pure read-only consumers: identical inputs produce an
identical findings list, ordered by time. Severities: info (observation),
warn (suspicious pattern), critical (reproduced failure mode).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

from .events import TraceEvent
from .sht import HistoryReader

log = logging.getLogger(__name__)

KIND_BUS_AMPLIFICATION = "BusAmplification"
KIND_DOUBLE_FREE = "DoubleFree"
KIND_READ_STALL = "ReadStall"

OP_LABELS = {"Read", "Write to client", "Cluster read", "FREEING CLIENT", "command"}


class EmptyModel(ValueError):
    """Metric requested over a model with no time span."""


@dataclass
class Series:
    name: str
    bucket_ns: int
    origin: int
    values: list[float]

    def total(self) -> float:
        return sum(self.values)

    def bucket_time(self, index: int) -> int:
        return self.origin + index * self.bucket_ns

    def mean(self) -> float:
        return sum(self.values) / len(self.values) if self.values else 0.0

    def csv_rows(self) -> Iterable[tuple[int, float]]:
        for i, v in enumerate(self.values):
            yield (self.bucket_time(i), v)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "bucket_ns": self.bucket_ns,
            "origin": self.origin,
            "values": self.values,
        }


@dataclass
class Finding:
    kind: str
    severity: str  # info | warn | critical
    t0: int
    t1: int
    paths: list[str]
    evidence: dict
    narrative: str

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "severity": self.severity,
            "t0": self.t0,
            "t1": self.t1,
            "paths": self.paths,
            "evidence": self.evidence,
            "narrative": self.narrative,
        }


def _counter_deltas(reader: HistoryReader, quark: int) -> list[tuple[int, int]]:
    """(ts, bytes) increments recovered from a cumulative counter attribute."""
    intervals = reader.query_range(quark, reader.tree_start, reader.tree_end)
    deltas = []
    prev = 0
    for iv in intervals:
        if iv.value is None:
            continue
        step = iv.value - prev
        if step:
            deltas.append((iv.start, step))
        prev = iv.value
    return deltas


def bus_volume_series(reader: HistoryReader, bucket_ns: int, direction: str) -> Series:
    """Bus byte volume per bucket; "out" sums cluster sends, "in" sums
    client-connection ingress."""
    if direction not in ("in", "out"):
        raise ValueError("direction must be 'in' or 'out'")
    if bucket_ns <= 0:
        raise ValueError("bucket_ns must be positive")
    span = reader.tree_end - reader.tree_start
    if span <= 0:
        raise EmptyModel("model has no time span")
    quark = reader.quark("Bus/Volume" if direction == "out" else "Bus/VolumeIn")
    n = (span + bucket_ns - 1) // bucket_ns
    values = [0.0] * n
    for ts, step in _counter_deltas(reader, quark):
        values[(ts - reader.tree_start) // bucket_ns] += step
    return Series(
        name=f"bus_volume_{direction}",
        bucket_ns=bucket_ns,
        origin=reader.tree_start,
        values=values,
    )


def fanout_stats(sends: Iterable) -> dict:
    """Distinct destinations per message id, over collected send records."""
    by_msg: dict[int, set] = {}
    for send in sends:
        if send.kind != "broadcast":
            continue
        by_msg.setdefault(send.msg_id, set()).add(send.dst)
    if not by_msg:
        return {"broadcast_msgs": 0, "max_fanout": 0}
    return {
        "broadcast_msgs": len(by_msg),
        "max_fanout": max(len(d) for d in by_msg.values()),
    }


def detect_bus_amplification(
    in_series: Series,
    out_series: Series,
    threshold_ratio: float = 2.0,
    fanout: dict | None = None,
) -> list[Finding]:
    """Findings for maximal windows where out/in volume meets the threshold."""
    if (
        in_series.bucket_ns != out_series.bucket_ns
        or in_series.origin != out_series.origin
    ):
        raise ValueError("series are not aligned")
    n = min(len(in_series.values), len(out_series.values))
    findings: list[Finding] = []
    i = 0
    while i < n:
        vin, vout = in_series.values[i], out_series.values[i]
        if vin > 0 and vout / vin >= threshold_ratio:
            j = i
            while j + 1 < n:
                nin, nout = in_series.values[j + 1], out_series.values[j + 1]
                if nin > 0 and nout / nin >= threshold_ratio:
                    j += 1
                else:
                    break
            win_in = sum(in_series.values[i : j + 1])
            win_out = sum(out_series.values[i : j + 1])
            ratio = win_out / win_in
            severity = "critical" if ratio >= 2 * threshold_ratio else "warn"
            evidence = {
                "ratio": ratio,
                "in_bytes": win_in,
                "out_bytes": win_out,
                "buckets": j - i + 1,
            }
            if fanout:
                evidence.update(fanout)
            findings.append(
                Finding(
                    kind=KIND_BUS_AMPLIFICATION,
                    severity=severity,
                    t0=in_series.bucket_time(i),
                    t1=in_series.bucket_time(j + 1),
                    paths=["Bus/Volume", "Bus/VolumeIn"],
                    evidence=evidence,
                    narrative=(
                        f"bus volume leaving the node is {ratio:.1f}x the volume "
                        f"entering it over {j - i + 1} buckets; every message is "
                        "re-sent to each peer with its encapsulation overhead"
                    ),
                )
            )
            i = j + 1
        else:
            i += 1
    return findings


def detect_double_free(events: Iterable[TraceEvent]) -> list[Finding]:
    """Connection lifecycle faults: a second free of the same fd#gen without
    a re-open in between, and duplicate pending-read list adds without an
    intervening drain."""
    next_gen: dict[tuple, int] = {}
    live: dict[tuple, int | None] = {}
    membership: dict[tuple, int] = {}
    adds: dict[tuple, list[tuple[int, int]]] = {}
    frees: dict[tuple, list[tuple[int, int]]] = {}
    findings: list[Finding] = []

    def gen_of(key: tuple) -> int:
        cur = live.get(key)
        if cur is not None:
            return cur
        return max(next_gen.get(key, 1) - 1, 0)

    for ev in events:
        name = ev.name
        if name == "start_read_client_query":
            key = (ev.host, ev.attrs["fd"])
            if live.get(key) is None:
                live[key] = next_gen.get(key, 0)
        elif name == "ssl_read":
            key = (ev.host, ev.attrs["fd"])
            if live.get(key) is None and key not in next_gen:
                live[key] = 0
            if ev.attrs.get("pending", 0):
                gkey = key + (gen_of(key),)
                count = membership.get(gkey, 0) + 1
                membership[gkey] = count
                adds.setdefault(gkey, []).append((ev.ts, ev.tid))
                if count == 2:
                    first, second = adds[gkey][-2], adds[gkey][-1]
                    findings.append(
                        Finding(
                            kind=KIND_DOUBLE_FREE,
                            severity="warn",
                            t0=first[0],
                            t1=second[0],
                            paths=[
                                f"Connections/{key[0]}:{key[1]}#{gkey[2]}",
                                f"Threads/{key[0]}:{first[1]}/Operation",
                                f"Threads/{key[0]}:{second[1]}/Operation",
                            ],
                            evidence={
                                "fd": key[1],
                                "gen": gkey[2],
                                "first_add_tid": first[1],
                                "second_add_tid": second[1],
                            },
                            narrative=(
                                f"connection fd={key[1]} was added to the pending-read "
                                "list twice without being drained in between"
                            ),
                        )
                    )
        elif name == "run_pending_reads":
            for gkey in list(membership):
                if gkey[0] == ev.host:
                    membership[gkey] = 0
        elif name == "free_client":
            key = (ev.host, ev.attrs["fd"])
            gen = gen_of(key)
            gkey = key + (gen,)
            frees.setdefault(gkey, []).append((ev.ts, ev.tid))
            if live.get(key) is not None:
                live[key] = None
                next_gen[key] = gen + 1
            if len(frees[gkey]) == 2:
                (t_first, tid_first), (t_second, tid_second) = frees[gkey]
                findings.append(
                    Finding(
                        kind=KIND_DOUBLE_FREE,
                        severity="critical",
                        t0=t_first,
                        t1=t_second,
                        paths=[
                            f"Connections/{key[0]}:{key[1]}#{gen}",
                            f"Threads/{key[0]}:{tid_first}/Operation",
                            f"Threads/{key[0]}:{tid_second}/Operation",
                        ],
                        evidence={
                            "fd": key[1],
                            "gen": gen,
                            "first_free_ts": t_first,
                            "first_free_tid": tid_first,
                            "second_free_ts": t_second,
                            "second_free_tid": tid_second,
                            "tids": sorted({tid_first, tid_second}),
                        },
                        narrative=(
                            f"connection fd={key[1]} freed twice: by thread "
                            f"{tid_first} and again by thread {tid_second} with no "
                            "re-open in between"
                        ),
                    )
                )
    findings.sort(key=lambda f: (f.t0, f.kind, f.severity))
    return findings


def _percentile(sorted_vals: list, q: float):
    if not sorted_vals:
        return 0
    rank = max(int(-(-q / 100.0 * len(sorted_vals) // 1)), 1)  # ceil, >= 1
    return sorted_vals[min(rank - 1, len(sorted_vals) - 1)]


def _thread_operation_quarks(reader: HistoryReader) -> list[int]:
    return [
        q
        for q, path in enumerate(reader.paths)
        if path.startswith("Threads/") and path.endswith("/Operation")
    ]


def detect_read_stall(
    reader: HistoryReader,
    out_series: Series,
    stall_threshold_ns: int | None = None,
    corr_window_ns: int = 10_000_000,
    mean_factor: float = 2.0,
) -> list[Finding]:
    """Cluster reads far beyond the typical duration; a candidate escalates
    from info to warn when outbound bus volume around it is elevated."""
    reads: list[tuple[int, int, int]] = []  # (start, end, quark)
    quarks = _thread_operation_quarks(reader)
    if reader.tree_end <= reader.tree_start:
        return []
    by_quark = reader.query_many(quarks, reader.tree_start, reader.tree_end)
    for quark in quarks:
        for iv in by_quark[quark]:
            if iv.value == "Cluster read" and iv.end > iv.start:
                reads.append((iv.start, iv.end, quark))
    if not reads:
        return []
    durations = sorted(end - start for start, end, _ in reads)
    threshold = stall_threshold_ns
    if threshold is None:
        threshold = 3 * _percentile(durations, 99)
    global_mean = out_series.mean()
    findings = []
    for start, end, quark in sorted(reads):
        duration = end - start
        if duration < threshold:
            continue
        mid = (start + end) // 2
        lo = max(0, (mid - corr_window_ns - out_series.origin) // out_series.bucket_ns)
        hi = min(
            len(out_series.values) - 1,
            (mid + corr_window_ns - out_series.origin) // out_series.bucket_ns,
        )
        window = out_series.values[lo : hi + 1]
        local_mean = sum(window) / len(window) if window else 0.0
        correlated = global_mean > 0 and local_mean >= mean_factor * global_mean
        findings.append(
            Finding(
                kind=KIND_READ_STALL,
                severity="warn" if correlated else "info",
                t0=start,
                t1=end,
                paths=[reader.path_of(quark)],
                evidence={
                    "duration_ns": duration,
                    "threshold_ns": threshold,
                    "local_out_mean": local_mean,
                    "global_out_mean": global_mean,
                },
                narrative=(
                    f"cluster read took {duration / 1e6:.2f} ms"
                    + (
                        "; outbound bus volume around it is "
                        f"{local_mean / global_mean:.1f}x the trace average"
                        if correlated
                        else " with no matching bus volume increase"
                    )
                ),
            )
        )
    return findings


def latency_report(reader: HistoryReader) -> dict[str, dict]:
    """Per-command execution time statistics from the thread timelines."""
    samples: dict[str, list[int]] = {}
    quarks = _thread_operation_quarks(reader)
    if reader.tree_end <= reader.tree_start:
        return {}
    by_quark = reader.query_many(quarks, reader.tree_start, reader.tree_end)
    for quark in quarks:
        for iv in by_quark[quark]:
            value = iv.value
            if (
                not isinstance(value, str)
                or value in OP_LABELS
                or value.startswith("Reading SSL")
                or value == "FREEING CLIENT"
                or not value.islower()
            ):
                continue
            samples.setdefault(value, []).append(iv.end - iv.start)
    report = {}
    for command in sorted(samples):
        vals = sorted(samples[command])
        report[command] = {
            "count": len(vals),
            "mean_ns": sum(vals) / len(vals),
            "p50_ns": _percentile(vals, 50),
            "p95_ns": _percentile(vals, 95),
            "p99_ns": _percentile(vals, 99),
        }
    return report
