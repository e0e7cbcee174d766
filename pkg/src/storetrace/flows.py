"""Cross-node request flow reconstruction.

A flow is the ordered set of segments one request traverses: the read and
command execution on the node that accepted it, bus transits to peer nodes,
the peers' packet reads, and response writes. Cross-host links are joined
only through message-id equality; there is no time-proximity guessing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

from .analysis import AnalysisResult, RedisAnalyzer
from .events import TraceEvent
from .statesys import StateSystem

log = logging.getLogger(__name__)

OP_READ = "Read"
OP_WRITE = "Write to client"
OP_BUS = "Bus transit"
OP_CLUSTER_READ = "Cluster read"
GAP_LABEL = "(gap)"


class IncompleteFlow(ValueError):
    """Latency breakdown requested for a flow with missing halves."""


@dataclass(slots=True)
class FlowSegment:
    host: str
    tid: int
    label: str
    t0: int
    t1: int
    fd: int | None = None
    msg_id: int | None = None

    def to_json(self) -> dict:
        out = {"host": self.host, "tid": self.tid, "label": self.label,
               "t0": self.t0, "t1": self.t1}
        if self.fd is not None:
            out["fd"] = self.fd
        if self.msg_id is not None:
            out["msg_id"] = self.msg_id
        return out


@dataclass
class RequestFlow:
    flow_id: str
    origin: str
    command: str
    complete: bool
    segments: list[FlowSegment] = field(default_factory=list)

    @property
    def t0(self) -> int:
        return min(s.t0 for s in self.segments)

    @property
    def t1(self) -> int:
        return max(s.t1 for s in self.segments)

    def to_json(self) -> dict:
        return {
            "id": self.flow_id,
            "origin": self.origin,
            "command": self.command,
            "complete": self.complete,
            "segments": [s.to_json() for s in self.segments],
        }


@dataclass
class FlowsResult:
    flows: list[RequestFlow]
    dangling_msg_ids: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "flows": [f.to_json() for f in self.flows],
            "dangling_msg_ids": self.dangling_msg_ids,
        }


def _collect(events: Iterable[TraceEvent]) -> AnalysisResult:
    model = StateSystem(None)
    analyzer = RedisAnalyzer(model, collect=True)
    return analyzer.run(events)


def build_flows(
    experiment: Iterable[TraceEvent] | None,
    analysis: AnalysisResult | None = None,
) -> FlowsResult:
    """Reconstruct flows from a merged experiment (or a completed collection
    pass over one)."""
    if analysis is None:
        if experiment is None:
            raise ValueError("need an experiment or a completed analysis")
        analysis = _collect(experiment)

    sends_by_msg: dict[int, list] = {}
    for send in analysis.sends:
        sends_by_msg.setdefault(send.msg_id, []).append(send)
    recvs_by_msg: dict[int, list] = {}
    for recv in analysis.recvs:
        recvs_by_msg.setdefault(recv.msg_id, []).append(recv)
    deliveries_by_msg: dict[int, list] = {}
    for msg_id, host, tid, t0, t1 in analysis.deliveries:
        deliveries_by_msg.setdefault(msg_id, []).append((host, tid, t0, t1))

    dangling: list[int] = []
    flows: list[RequestFlow] = []
    for req in analysis.requests:
        segments = [
            FlowSegment(req.host, req.tid, OP_READ, req.read_t0, req.t0, fd=req.fd)
        ]
        complete = True
        if req.t1 is not None:
            segments.append(FlowSegment(req.host, req.tid, req.command, req.t0, req.t1, fd=req.fd))
        else:
            complete = False
        # one send record exists per destination, all sharing the message id
        for msg_id in dict.fromkeys(req.msg_ids):
            sends = sends_by_msg.get(msg_id, [])
            recvs = sorted(recvs_by_msg.get(msg_id, []), key=lambda r: r.host)
            by_host = {r.host: r for r in recvs}
            unclaimed = list(recvs)
            for send in sends:
                recv = None
                if send.dst is not None:
                    recv = by_host.get(send.dst)
                elif unclaimed:
                    recv = unclaimed[0]
                if recv in unclaimed:
                    unclaimed.remove(recv)
                if recv is None:
                    complete = False
                    dangling.append(msg_id)
                    continue
                segments.append(
                    FlowSegment(send.host, send.tid, OP_BUS, send.ts, recv.read_ts,
                                msg_id=msg_id)
                )
                segments.append(
                    FlowSegment(recv.host, recv.tid, OP_CLUSTER_READ,
                                recv.read_ts, recv.process_ts, fd=recv.fd, msg_id=msg_id)
                )
                for host, tid, w0, w1 in deliveries_by_msg.get(msg_id, []):
                    if host == recv.host:
                        segments.append(
                            FlowSegment(host, tid, OP_WRITE, w0, w1, msg_id=msg_id)
                        )
        if req.write is not None:
            segments.append(
                FlowSegment(req.host, req.tid, OP_WRITE, req.write[0], req.write[1], fd=req.fd)
            )
        segments.sort(key=lambda s: (s.t0, s.t1, s.host, s.label))
        flows.append(
            RequestFlow(
                flow_id=req.req_id,
                origin=req.req_id,
                command=req.command,
                complete=complete,
                segments=segments,
            )
        )
    if dangling:
        log.warning("%d cluster messages had no matching read", len(dangling))
    flows.sort(key=lambda f: (f.t0, f.flow_id))
    return FlowsResult(flows=flows, dangling_msg_ids=sorted(set(dangling)))


def flow_latency_breakdown(flow: RequestFlow) -> dict[str, int]:
    """Per-label durations along the chain ending at the flow's last segment.

    Segments tile by construction; holes between chained segments are
    reported under "(gap)" so the durations always sum to t1 - t0.
    """
    if not flow.complete:
        raise IncompleteFlow(f"flow {flow.flow_id} has missing halves")
    if not flow.segments:
        return {}
    ordered = sorted(flow.segments, key=lambda s: (s.t0, s.t1))
    last = max(ordered, key=lambda s: (s.t1, s.t0))
    start = ordered[0].t0
    durations: dict[str, int] = {}
    used: set[int] = set()
    cur = last
    while True:
        durations[cur.label] = durations.get(cur.label, 0) + (cur.t1 - cur.t0)
        used.add(id(cur))
        if cur.t0 <= start:
            break
        pred = None
        for seg in ordered:
            if id(seg) in used or seg.t1 > cur.t0:
                continue
            if pred is None or (seg.t1, seg.t0) > (pred.t1, pred.t0):
                pred = seg
        if pred is None:
            durations[GAP_LABEL] = durations.get(GAP_LABEL, 0) + (cur.t0 - start)
            break
        if pred.t1 < cur.t0:
            durations[GAP_LABEL] = durations.get(GAP_LABEL, 0) + (cur.t0 - pred.t1)
        cur = pred
    return durations
