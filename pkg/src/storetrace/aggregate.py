"""Merging per-host streams into one clock-corrected experiment.

Offsets are estimated from matched send/receive pairs: cluster messages
matched by msg_id, and HTTP request/response halves matched per connection
4-tuple in FIFO order. For each host pair the feasible offset interval is
derived from the minimum one-way delta in each direction and the midpoint
is taken; hosts unreachable from the reference host keep offset 0 with a
warning. No drift term is modelled: these are desk-scale traces spanning
seconds.

Both passes stream: pair collection keeps per-connection FIFO queues and
per-message send points, and the merge itself is a heap over per-file
iterators, so memory stays bounded by matched-pair bookkeeping rather than
trace size.
"""

from __future__ import annotations

import heapq
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .events import TraceEvent, TraceStream, read_events

log = logging.getLogger(__name__)


@dataclass
class ClockOffsets:
    offsets: dict[str, int]
    reference_host: str
    #: upper bound on |assigned - true| per host, from feasible-interval widths
    residual_bound_ns: int = 0
    warnings: list[str] = field(default_factory=list)
    #: matched pairs that still violate causality after the midpoint fit
    infeasible_pairs: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "reference_host": self.reference_host,
            "offsets": dict(self.offsets),
            "residual_bound_ns": self.residual_bound_ns,
            "warnings": list(self.warnings),
            "infeasible_pairs": list(self.infeasible_pairs),
        }


class PairCollector:
    """Incrementally matches cross-host send/receive pairs.

    Pairs are (kind, src_host, dst_host, send_ts, recv_ts) tuples in raw
    per-host clocks. Events may arrive in any stream order; each side of an
    HTTP connection 4-tuple lives on one host, so per-stream order is FIFO
    order for that side.
    """

    def __init__(self):
        self.hosts: set[str] = set()
        self._sends: dict[int, tuple[str, int]] = {}
        self._reads: list[tuple[int, str, int]] = []
        self._http_out: dict[tuple, list] = defaultdict(list)
        self._http_in: dict[tuple, list] = defaultdict(list)

    @staticmethod
    def _key(ev: TraceEvent, side: str) -> tuple:
        a = ev.attrs
        return (side, a["src_addr"], a["src_port"], a["dst_addr"], a["dst_port"])

    def feed(self, ev: TraceEvent) -> None:
        name = ev.name
        self.hosts.add(ev.host)
        if name == "cluster_send":
            self._sends.setdefault(ev.attrs["msg_id"], (ev.host, ev.ts))
        elif name == "cluster_read":
            self._reads.append((ev.attrs["msg_id"], ev.host, ev.ts))
        elif name == "http_client_request":
            self._http_out[self._key(ev, "req")].append((ev.host, ev.ts))
        elif name == "http_server_response":
            self._http_out[self._key(ev, "resp")].append((ev.host, ev.ts))
        elif name == "http_server_receive":
            self._http_in[self._key(ev, "req")].append((ev.host, ev.ts))
        elif name == "http_client_response":
            self._http_in[self._key(ev, "resp")].append((ev.host, ev.ts))

    def pairs(self) -> list[tuple[str, str, str, int, int]]:
        out = []
        for key, sends in self._http_out.items():
            for (src, send_ts), (dst, recv_ts) in zip(sends, self._http_in.get(key, [])):
                if src != dst:
                    out.append(("http", src, dst, send_ts, recv_ts))
        for msg_id, host, ts in self._reads:
            send = self._sends.get(msg_id)
            if send is not None and send[0] != host:
                out.append(("cluster", send[0], host, send[1], ts))
        return out


def estimate_offsets(
    streams: Iterable[TraceStream], reference_host: str | None = None
) -> ClockOffsets:
    """Per-host constant offsets such that matched receives follow their sends."""
    streams = list(streams)
    if not streams:
        raise ValueError("at least one stream is required")
    collector = PairCollector()
    hosts = set()
    for stream in streams:
        if stream.host:
            hosts.add(stream.host)
        for ev in stream.events:
            collector.feed(ev)
    return offsets_from_pairs(collector.pairs(), sorted(hosts), reference_host)


def offsets_from_pairs(
    pairs: list[tuple], hosts: list[str], reference_host: str | None = None
) -> ClockOffsets:
    if not hosts:
        return ClockOffsets(offsets={}, reference_host="")
    hosts = sorted(hosts)
    if reference_host is None:
        reference_host = hosts[0]
    elif reference_host not in hosts:
        raise ValueError(f"reference host {reference_host!r} not among streams")

    # minimum raw one-way delta per directed host pair
    min_delta: dict[tuple[str, str], int] = {}
    for _kind, src, dst, send_ts, recv_ts in pairs:
        key = (src, dst)
        delta = recv_ts - send_ts
        if key not in min_delta or delta < min_delta[key]:
            min_delta[key] = delta

    offsets = {h: 0 for h in hosts}
    warnings: list[str] = []
    residual = 0
    visited = {reference_host}
    queue = [reference_host]
    while queue:
        a = queue.pop(0)
        for b in hosts:
            if b in visited:
                continue
            d_ab = min_delta.get((a, b))
            d_ba = min_delta.get((b, a))
            if d_ab is None and d_ba is None:
                continue
            if d_ab is not None and d_ba is not None:
                rel = (d_ba - d_ab) // 2
                residual = max(residual, (d_ab + d_ba + 1) // 2)
            elif d_ab is not None:
                # one-sided evidence: pessimistically assume zero minimum delay
                rel = -d_ab
                warnings.append(
                    f"only {a}->{b} pairs found; assuming zero minimum delay"
                )
            else:
                rel = d_ba
                warnings.append(
                    f"only {b}->{a} pairs found; assuming zero minimum delay"
                )
            offsets[b] = offsets[a] + rel
            visited.add(b)
            queue.append(b)
    for h in hosts:
        if h not in visited:
            warnings.append(f"host {h} has no matched pairs to the reference; offset 0")
    for w in warnings:
        log.warning("%s", w)

    result = ClockOffsets(
        offsets=offsets,
        reference_host=reference_host,
        residual_bound_ns=max(residual, 0),
        warnings=warnings,
    )
    for kind, src, dst, send_ts, recv_ts in pairs:
        if recv_ts + offsets[dst] < send_ts + offsets[src]:
            result.infeasible_pairs.append(
                {
                    "kind": kind,
                    "src": src,
                    "dst": dst,
                    "send_ts": send_ts,
                    "recv_ts": recv_ts,
                }
            )
    if result.infeasible_pairs:
        log.warning(
            "%d matched pairs violate causality after the midpoint fit",
            len(result.infeasible_pairs),
        )
    return result


def zero_offsets(streams: Iterable[TraceStream], reference_host: str | None = None) -> ClockOffsets:
    hosts = sorted({s.host for s in streams if s.host})
    ref = reference_host or (hosts[0] if hosts else "")
    return ClockOffsets(offsets={h: 0 for h in hosts}, reference_host=ref)


def merge(
    streams: Iterable[TraceStream], offsets: ClockOffsets
) -> Iterator[TraceEvent]:
    """K-way merge to a single timeline ordered by (adjusted ts, host, seq)."""
    streams = list(streams)
    for s in streams:
        if s.host and s.host not in offsets.offsets:
            raise ValueError(f"no offset for host {s.host!r}")
    yield from merge_iterators(
        [iter(s.events) for s in streams], offsets
    )


def merge_iterators(
    iterators: list[Iterator[TraceEvent]], offsets: ClockOffsets
) -> Iterator[TraceEvent]:
    def adjusted(events: Iterator[TraceEvent]) -> Iterator[TraceEvent]:
        for ev in events:
            off = offsets.offsets.get(ev.host)
            if off is None:
                raise ValueError(f"no offset for host {ev.host!r}")
            yield ev if off == 0 else ev.with_ts(ev.ts + off)

    yield from heapq.merge(
        *(adjusted(it) for it in iterators), key=lambda e: (e.ts, e.host, e.seq)
    )


def read_experiment(source) -> Iterator[TraceEvent]:
    """Stream a merged experiment file, checking global time order."""
    last_ts = None
    for ev in read_events(source):
        if last_ts is not None and ev.ts < last_ts:
            raise ValueError(
                f"experiment not time-ordered: ts {ev.ts} after {last_ts}"
            )
        last_ts = ev.ts
        yield ev


def write_offsets_sidecar(offsets: ClockOffsets, path) -> None:
    Path(path).write_text(json.dumps(offsets.to_json(), indent=2) + "\n")


def load_offsets_sidecar(path) -> ClockOffsets:
    obj = json.loads(Path(path).read_text())
    return ClockOffsets(
        offsets={k: int(v) for k, v in obj["offsets"].items()},
        reference_host=obj["reference_host"],
        residual_bound_ns=int(obj.get("residual_bound_ns", 0)),
        warnings=list(obj.get("warnings", [])),
        infeasible_pairs=list(obj.get("infeasible_pairs", [])),
    )
