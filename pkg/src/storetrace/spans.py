"""Microservice interaction spans and their alignment with store flows.

Client spans pair http_client_request with http_client_response, server
spans pair http_server_receive with http_server_response; both pairings are
FIFO per connection 4-tuple, which stays deterministic under keep-alive
reuse and pipelining. A server span is parented to the client span with the
same tuple and FIFO index; an outbound client span is parented to the
containing server span on the same host (the one that started last).
Correlation uses only event attributes; no context is injected anywhere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

from .events import TraceEvent
from .flows import FlowsResult

log = logging.getLogger(__name__)

_OPEN = {"http_client_request": "client", "http_server_receive": "server"}
_CLOSE = {"http_client_response": "client", "http_server_response": "server"}


@dataclass(slots=True)
class Span:
    span_id: int
    kind: str                  # "client" | "server"
    service: str
    host: str
    key: tuple                 # (src_addr, src_port, dst_addr, dst_port)
    fifo_index: int
    t0: int
    t1: int | None = None      # None: other half never arrived
    fd: int | None = None
    parent: int | None = None
    flow_id: str | None = None

    def to_json(self) -> dict:
        return {
            "id": self.span_id,
            "kind": self.kind,
            "service": self.service,
            "host": self.host,
            "key": list(self.key),
            "k": self.fifo_index,
            "t0": self.t0,
            "t1": self.t1,
            "parent": self.parent,
            "fd": self.fd,
        }


@dataclass
class SpanForest:
    spans: list[Span] = field(default_factory=list)
    #: events whose same-side partner was missing
    unmatched: int = 0
    flow_parents: dict[str, int] = field(default_factory=dict)

    def roots(self) -> list[Span]:
        return [s for s in self.spans if s.parent is None]

    def to_json(self) -> dict:
        return {
            "spans": [s.to_json() for s in self.spans],
            "unmatched": self.unmatched,
            "flows": [
                {"id": fid, "parent_span": sid}
                for fid, sid in sorted(self.flow_parents.items())
            ],
        }


def _tuple_key(ev: TraceEvent) -> tuple:
    a = ev.attrs
    return (a["src_addr"], a["src_port"], a["dst_addr"], a["dst_port"])


def reconstruct_spans(events: Iterable[TraceEvent]) -> SpanForest:
    forest = SpanForest()
    open_fifo: dict[tuple, list[Span]] = {}
    fifo_count: dict[tuple, int] = {}

    for ev in events:
        kind = _OPEN.get(ev.name)
        if kind is not None:
            key = _tuple_key(ev)
            fk = (kind, key)
            idx = fifo_count.get(fk, 0)
            fifo_count[fk] = idx + 1
            span = Span(
                span_id=len(forest.spans),
                kind=kind,
                service=ev.attrs["service"],
                host=ev.host,
                key=key,
                fifo_index=idx,
                t0=ev.ts,
                fd=ev.attrs.get("fd"),
            )
            forest.spans.append(span)
            open_fifo.setdefault(fk, []).append(span)
            continue
        kind = _CLOSE.get(ev.name)
        if kind is not None:
            fk = (kind, _tuple_key(ev))
            queue = open_fifo.get(fk)
            if not queue:
                forest.unmatched += 1
                log.debug("unpaired %s at ts=%d", ev.name, ev.ts)
                continue
            span = queue.pop(0)
            span.t1 = ev.ts

    for queue in open_fifo.values():
        forest.unmatched += len(queue)

    _link_server_to_client(forest)
    _link_client_to_server(forest)
    return forest


def _link_server_to_client(forest: SpanForest) -> None:
    clients: dict[tuple, dict[int, Span]] = {}
    for span in forest.spans:
        if span.kind == "client":
            clients.setdefault(span.key, {})[span.fifo_index] = span
    for span in forest.spans:
        if span.kind != "server":
            continue
        match = clients.get(span.key, {}).get(span.fifo_index)
        if match is not None:
            span.parent = match.span_id


def _link_client_to_server(forest: SpanForest) -> None:
    by_host: dict[str, list[Span]] = {}
    for span in forest.spans:
        if span.kind == "server" and span.t1 is not None:
            by_host.setdefault(span.host, []).append(span)
    for spans in by_host.values():
        spans.sort(key=lambda s: (s.t0, -(s.t1 or 0)))
    for span in forest.spans:
        if span.kind != "client" or span.t1 is None:
            continue
        best = None
        for server in by_host.get(span.host, ()):
            if server.t0 > span.t0:
                break
            if server.t1 >= span.t1 and server.span_id != span.span_id:
                if (
                    best is None
                    or (server.t0, -server.t1) > (best.t0, -best.t1)
                ):
                    best = server
        if best is not None:
            span.parent = best.span_id


def verify_containment(forest: SpanForest, tolerance_ns: int = 0) -> list[tuple[int, int]]:
    """Pairs (child, parent) violating time containment beyond the tolerance."""
    index = {s.span_id: s for s in forest.spans}
    bad = []
    for span in forest.spans:
        if span.parent is None or span.t1 is None:
            continue
        parent = index[span.parent]
        if parent.t1 is None:
            continue
        if span.t0 < parent.t0 - tolerance_ns or span.t1 > parent.t1 + tolerance_ns:
            bad.append((span.span_id, parent.span_id))
    return bad


def attach_redis_spans(
    forest: SpanForest, flows: FlowsResult, conn_tuples: dict[tuple, tuple]
) -> SpanForest:
    """Nest each store-level flow under the client span that issued it.

    The flow's origin connection 4-tuple selects the candidate client spans;
    flows and spans zip in FIFO order per tuple. Flows without a matching
    span stay roots.
    """
    spans_by_key: dict[tuple, list[Span]] = {}
    for span in forest.spans:
        if span.kind == "client":
            spans_by_key.setdefault(span.key, []).append(span)
    for spans in spans_by_key.values():
        spans.sort(key=lambda s: s.fifo_index)

    used: dict[tuple, int] = {}
    for flow in sorted(flows.flows, key=lambda f: (f.t0, f.flow_id)):
        origin = flow.flow_id  # <host>:<fd>#<gen>:<n>
        host, rest = origin.split(":", 1)
        fd_part, _n = rest.rsplit(":", 1)
        fd_s, gen_s = fd_part.split("#")
        key4 = conn_tuples.get((host, int(fd_s), int(gen_s)))
        if key4 is None:
            continue
        candidates = spans_by_key.get(tuple(key4), [])
        k = used.get(tuple(key4), 0)
        if k < len(candidates):
            span = candidates[k]
            used[tuple(key4)] = k + 1
            forest.flow_parents[flow.flow_id] = span.span_id
            span.flow_id = flow.flow_id
    return forest
