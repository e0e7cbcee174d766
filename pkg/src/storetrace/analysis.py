"""Event-handling automaton that populates the model from a merged trace.

Events are dispatched on tracepoint name; paired events (read start/end,
command start/end, write start/end, cluster read/process) are matched by
file descriptor or message id. Connection contexts are generation-qualified
(`fd#gen`, generation bumped on free) so descriptor reuse never conflates
two connections, and entity names are host-qualified because one experiment
spans many hosts.

Unmatched end-events never abort the run: they are counted and repaired
with a zero-length marker state, since truncated traces are the common
case. Orphan events on freed connections feed the double-free detector
instead of erroring.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

from .events import TraceEvent
from .statesys import StateSystem

log = logging.getLogger(__name__)

READ_COMMANDS = frozenset({"get", "subscribe", "mget", "exists", "lrange"})
WRITE_COMMANDS = frozenset({"set", "publish", "del", "lpush", "expire", "mset"})

#: thread Operation values that are not command names
PHASE_POLLING = "Polling"
PHASE_READING = "Reading client"
PHASE_EXECUTING = "Executing command"
PHASE_WRITING = "Writing client"
PHASE_RUNNING_TASK = "Running task"

OP_READ = "Read"
OP_WRITE = "Write to client"
OP_CLUSTER_READ = "Cluster read"
OP_FREEING = "FREEING CLIENT"

BUS_PORTS = frozenset({16379})


@dataclass(slots=True)
class ConnectionContext:
    fd: int
    gen: int
    host: str
    conn_type: str
    open_ts: int
    quark_base: int            # Connections/<host>:<fd>#<gen> entity quark
    freed: bool = False
    reading: bool = False
    read_open_ts: int | None = None
    ssl_pending: bool = False
    in_pending_read_list: bool = False
    cmd_count: int = 0
    active_req: "ActiveRequest | None" = None
    last_closed_req: "ActiveRequest | None" = None


@dataclass(slots=True)
class ActiveRequest:
    req_id: str
    host: str
    tid: int
    fd: int
    gen: int
    command: str
    t0: int
    read_t0: int
    quark_base: int
    t1: int | None = None
    msg_ids: list[int] = field(default_factory=list)
    write: tuple[int, int] | None = None


@dataclass(slots=True)
class SendRecord:
    msg_id: int
    host: str
    tid: int
    ts: int
    size: int
    kind: str
    dst: str | None
    req_id: str | None


@dataclass(slots=True)
class RecvRecord:
    msg_id: int
    host: str
    tid: int
    read_ts: int
    process_ts: int
    fd: int | None


@dataclass
class AnalysisReport:
    events: int = 0
    unmatched: int = 0
    contexts: int = 0
    requests: int = 0
    passthrough: int = 0
    orphan_frees: int = 0
    queue_floor_warnings: int = 0
    hosts: list[str] = field(default_factory=list)
    first_ts: int | None = None
    last_ts: int | None = None

    def to_json(self) -> dict:
        return {
            "events": self.events,
            "unmatched": self.unmatched,
            "contexts": self.contexts,
            "requests": self.requests,
            "passthrough": self.passthrough,
            "orphan_frees": self.orphan_frees,
            "queue_floor_warnings": self.queue_floor_warnings,
            "hosts": self.hosts,
            "first_ts": self.first_ts,
            "last_ts": self.last_ts,
        }


@dataclass
class AnalysisResult:
    report: AnalysisReport
    # populated only when collect=True
    requests: list[ActiveRequest] = field(default_factory=list)
    sends: list[SendRecord] = field(default_factory=list)
    recvs: list[RecvRecord] = field(default_factory=list)
    deliveries: list[tuple] = field(default_factory=list)  # (msg_id, host, tid, t0, t1)
    list_adds: list[tuple] = field(default_factory=list)   # (ts, host, fd, gen, tid)
    frees: list[tuple] = field(default_factory=list)       # (ts, host, fd, gen, tid)
    conn_tuples: dict[tuple, tuple] = field(default_factory=dict)


class RedisAnalyzer:
    """Consumes a merged experiment in order and writes model states.

    Strictly single-threaded: the automaton is stateful and order-dependent.
    """

    def __init__(self, model: StateSystem, collect: bool = False):
        self.model = model
        self.collect = collect
        self.result = AnalysisResult(report=AnalysisReport())
        self._conns: dict[tuple[str, int], ConnectionContext] = {}
        self._next_gen: dict[tuple[str, int], int] = {}
        self._live_conns: dict[str, int] = {}
        self._queue_len: dict[str, int] = {}
        self._el_quarks: dict[str, int] = {}
        self._thread_quarks: dict[tuple[str, int], int] = {}
        self._thread_req: dict[tuple[str, int], ActiveRequest] = {}
        self._open_writes: dict[tuple[str, int], tuple[int, int]] = {}
        self._open_cluster_reads: dict[tuple[str, int], tuple[int, int, int | None]] = {}
        self._last_processed: dict[tuple[str, int], int] = {}
        self._cum_out = 0
        self._cum_in = 0
        self._finalized = False
        m = self.model
        self._bus_out_q = m.quark("Bus/Volume")
        self._bus_in_q = m.quark("Bus/VolumeIn")
        self._bus_type_q = m.quark("Bus/Type")
        self._dispatch = {
            "start_read_client_query": self._on_start_read,
            "end_read_client_query": self._on_end_read,
            "call_command_start": self._on_cmd_start,
            "call_command_end": self._on_cmd_end,
            "write_to_client_start": self._on_write_start,
            "write_to_client_end": self._on_write_end,
            "add_file_event": self._on_add_file_event,
            "delete_file_event": self._on_delete_file_event,
            "ssl_read": self._on_ssl_read,
            "run_pending_reads": self._on_run_pending,
            "free_client": self._on_free,
            "cluster_send": self._on_cluster_send,
            "cluster_read": self._on_cluster_read,
            "cluster_process_packet": self._on_cluster_process,
        }

    # -- quark helpers ----------------------------------------------------

    def _el(self, host: str) -> int:
        base = self._el_quarks.get(host)
        if base is None:
            base = self.model.quark(f"EventLoop/{host}")
            self._el_quarks[host] = base
        return base

    def _thread_op_q(self, host: str, tid: int) -> int:
        key = (host, tid)
        base = self._thread_quarks.get(key)
        if base is None:
            base = self.model.quark(f"Threads/{host}:{tid}")
            self._thread_quarks[key] = base
        return base + 2  # Operation leaf

    def _thread_req_q(self, host: str, tid: int) -> int:
        return self._thread_op_q(host, tid) - 1  # Request leaf

    def _conn(self, ev: TraceEvent, create: bool = True) -> ConnectionContext | None:
        key = (ev.host, ev.attrs["fd"])
        ctx = self._conns.get(key)
        if ctx is not None and not ctx.freed:
            return ctx
        if not create:
            return ctx
        gen = self._next_gen.get(key, 0)
        conn_type = self._infer_type(ev)
        base = self.model.quark(f"Connections/{ev.host}:{key[1]}#{gen}")
        ctx = ConnectionContext(
            fd=key[1], gen=gen, host=ev.host, conn_type=conn_type,
            open_ts=ev.ts, quark_base=base,
        )
        self._conns[key] = ctx
        self.result.report.contexts += 1
        self._live_conns[ev.host] = self._live_conns.get(ev.host, 0) + 1
        m = self.model
        m.modify(ev.ts, base + 2, conn_type)       # Type
        m.modify(ev.ts, base + 3, key[1])          # DataStructure: live fd
        m.modify(ev.ts, base + 4, self._live_conns[ev.host])  # Objects
        a = ev.attrs
        if "src_addr" in a and "dst_addr" in a:
            self.result.conn_tuples[(ev.host, key[1], gen)] = (
                a["src_addr"], a.get("src_port"), a["dst_addr"], a.get("dst_port"),
            )
        return ctx

    @staticmethod
    def _infer_type(ev: TraceEvent) -> str:
        a = ev.attrs
        explicit = a.get("conn_type")
        if isinstance(explicit, str) and explicit in ("client", "cluster", "replica"):
            return explicit
        if a.get("dst_port") in BUS_PORTS or a.get("src_port") in BUS_PORTS:
            return "cluster"
        return "client"

    def _repair_marker(self, ts: int, quark: int, label: str) -> None:
        """Zero-length state marking an end-event that had no open start."""
        m = self.model
        m.modify(ts, quark, label)
        m.modify(ts, quark, None)

    def _unmatched(self, ev: TraceEvent, what: str) -> None:
        self.result.report.unmatched += 1
        log.debug("unmatched %s at ts=%d on %s", what, ev.ts, ev.host)

    # -- handlers ----------------------------------------------------------

    def handle(self, ev: TraceEvent) -> None:
        self.result.report.events += 1
        if self.result.report.first_ts is None:
            self.result.report.first_ts = ev.ts
        self.result.report.last_ts = ev.ts
        handler = self._dispatch.get(ev.name)
        if handler is None:
            self.result.report.passthrough += 1
            return
        handler(ev)

    def _on_start_read(self, ev: TraceEvent) -> None:
        ctx = self._conn(ev)
        ctx.reading = True
        ctx.read_open_ts = ev.ts
        m = self.model
        mem = ev.attrs.get("mem")
        if mem is not None:
            m.modify(ev.ts, ctx.quark_base + 1, mem)  # Memory
        m.modify(ev.ts, self._thread_op_q(ev.host, ev.tid), OP_READ)
        m.modify(ev.ts, self._el(ev.host) + 1, PHASE_READING)

    def _on_end_read(self, ev: TraceEvent) -> None:
        ctx = self._conn(ev, create=False)
        if ctx is None or not ctx.reading:
            self._unmatched(ev, "end_read_client_query")
            self._repair_marker(ev.ts, self._thread_op_q(ev.host, ev.tid), OP_READ)
        else:
            ctx.reading = False
            ctx.read_open_ts = None
            nbytes = ev.attrs.get("bytes")
            if nbytes is not None and ctx.conn_type == "client":
                self._cum_in += nbytes
                self.model.modify(ev.ts, self._bus_in_q, self._cum_in)
        if self._queue_len.get(ev.host, 0) == 0:
            self.model.modify(ev.ts, self._el(ev.host) + 1, PHASE_POLLING)

    def _on_cmd_start(self, ev: TraceEvent) -> None:
        ctx = self._conn(ev)
        command = ev.attrs["command"]
        n = ctx.cmd_count
        ctx.cmd_count += 1
        req_id = f"{ev.host}:{ctx.fd}#{ctx.gen}:{n}"
        base = self.model.quark(f"Requests/{req_id}")
        req = ActiveRequest(
            req_id=req_id, host=ev.host, tid=ev.tid, fd=ctx.fd, gen=ctx.gen,
            command=command, t0=ev.ts,
            read_t0=ctx.read_open_ts if ctx.read_open_ts is not None else ev.ts,
            quark_base=base,
        )
        ctx.active_req = req
        self._thread_req[(ev.host, ev.tid)] = req
        m = self.model
        m.modify(ev.ts, base + 1, "query_buffer")                  # DataStructure
        if command in WRITE_COMMANDS:
            m.modify(ev.ts, base + 2, "write")                     # Type
        elif command in READ_COMMANDS:
            m.modify(ev.ts, base + 2, "read")
        m.modify(ev.ts, base + 3, f"{ev.host}:{ctx.fd}#{ctx.gen}")  # Connection
        m.modify(ev.ts, self._thread_op_q(ev.host, ev.tid), command)
        m.modify(ev.ts, self._thread_req_q(ev.host, ev.tid), req_id)
        m.modify(ev.ts, self._el(ev.host) + 1, PHASE_EXECUTING)

    def _on_cmd_end(self, ev: TraceEvent) -> None:
        ctx = self._conn(ev, create=False)
        req = ctx.active_req if ctx is not None else None
        m = self.model
        if req is None:
            self._unmatched(ev, "call_command_end")
            self._repair_marker(ev.ts, self._thread_op_q(ev.host, ev.tid), "command")
        else:
            req.t1 = ev.ts
            base = req.quark_base
            m.modify(ev.ts, base + 1, None)
            m.modify(ev.ts, base + 2, None)
            m.modify(ev.ts, base + 3, None)
            m.modify(ev.ts, self._thread_op_q(req.host, req.tid), None)
            m.modify(ev.ts, self._thread_req_q(req.host, req.tid), None)
            ctx.active_req = None
            ctx.last_closed_req = req
            self._thread_req.pop((req.host, req.tid), None)
            self.result.report.requests += 1
            if self.collect:
                self.result.requests.append(req)
        m.modify(ev.ts, self._el(ev.host) + 1, PHASE_READING)

    def _on_write_start(self, ev: TraceEvent) -> None:
        self._conn(ev)
        self._open_writes[(ev.host, ev.tid)] = (ev.ts, ev.attrs["fd"])
        m = self.model
        m.modify(ev.ts, self._thread_op_q(ev.host, ev.tid), OP_WRITE)
        m.modify(ev.ts, self._el(ev.host) + 1, PHASE_WRITING)

    def _on_write_end(self, ev: TraceEvent) -> None:
        open_write = self._open_writes.pop((ev.host, ev.tid), None)
        m = self.model
        if open_write is None:
            self._unmatched(ev, "write_to_client_end")
            self._repair_marker(ev.ts, self._thread_op_q(ev.host, ev.tid), OP_WRITE)
        else:
            t0, fd = open_write
            m.modify(ev.ts, self._thread_op_q(ev.host, ev.tid), None)
            if self.collect:
                msg = self._last_processed.pop((ev.host, ev.tid), None)
                if msg is not None:
                    self.result.deliveries.append((msg, ev.host, ev.tid, t0, ev.ts))
                else:
                    ctx = self._conns.get((ev.host, fd))
                    req = ctx.last_closed_req if ctx is not None else None
                    if req is not None and req.write is None:
                        req.write = (t0, ev.ts)
        if self._queue_len.get(ev.host, 0) == 0:
            m.modify(ev.ts, self._el(ev.host) + 1, PHASE_POLLING)

    def _on_add_file_event(self, ev: TraceEvent) -> None:
        n = self._queue_len.get(ev.host, 0) + 1
        self._queue_len[ev.host] = n
        m = self.model
        m.modify(ev.ts, self._el(ev.host) + 2, n)  # QueueLength
        req = self._thread_req.get((ev.host, ev.tid))
        if req is not None and req.command == "publish":
            m.modify(ev.ts, req.quark_base + 1, "el_queue")
            m.modify(ev.ts, req.quark_base + 2, "write")

    def _on_delete_file_event(self, ev: TraceEvent) -> None:
        n = self._queue_len.get(ev.host, 0) - 1
        if n < 0:
            n = 0
            self.result.report.queue_floor_warnings += 1
            log.debug("queue length underflow on %s at ts=%d", ev.host, ev.ts)
        self._queue_len[ev.host] = n
        self.model.modify(ev.ts, self._el(ev.host) + 2, n)

    def _on_ssl_read(self, ev: TraceEvent) -> None:
        ctx = self._conn(ev)
        nbytes = ev.attrs["bytes_read"]
        m = self.model
        m.modify(ev.ts, self._thread_op_q(ev.host, ev.tid), f"Reading SSL bytes={nbytes}")
        pending = bool(ev.attrs.get("pending", 0))
        ctx.ssl_pending = pending
        if pending:
            ctx.in_pending_read_list = True
            if self.collect:
                self.result.list_adds.append((ev.ts, ev.host, ctx.fd, ctx.gen, ev.tid))

    def _on_run_pending(self, ev: TraceEvent) -> None:
        self.model.modify(ev.ts, self._el(ev.host) + 1, PHASE_RUNNING_TASK)

    def _on_free(self, ev: TraceEvent) -> None:
        key = (ev.host, ev.attrs["fd"])
        ctx = self._conns.get(key)
        m = self.model
        if ctx is not None and not ctx.freed:
            ctx.freed = True
            self._next_gen[key] = ctx.gen + 1
            live = max(self._live_conns.get(ev.host, 1) - 1, 0)
            self._live_conns[ev.host] = live
            base = ctx.quark_base
            m.modify(ev.ts, base + 1, None)
            m.modify(ev.ts, base + 2, None)
            m.modify(ev.ts, base + 3, None)
            m.modify(ev.ts, base + 4, None)
            gen = ctx.gen
        else:
            # free on an unknown or already-freed connection: evidence for
            # the double-free detector, not an analysis error
            self.result.report.orphan_frees += 1
            gen = ctx.gen if ctx is not None else self._next_gen.get(key, 1) - 1
        if self.collect:
            self.result.frees.append((ev.ts, ev.host, key[1], gen, ev.tid))
        m.modify(ev.ts, self._thread_op_q(ev.host, ev.tid), OP_FREEING)

    def _on_cluster_send(self, ev: TraceEvent) -> None:
        a = ev.attrs
        self._cum_out += a["bytes"]
        m = self.model
        m.modify(ev.ts, self._bus_out_q, self._cum_out)
        m.modify(ev.ts, self._bus_type_q, a["kind"])
        req = self._thread_req.get((ev.host, ev.tid))
        if req is not None:
            req.msg_ids.append(a["msg_id"])
        if self.collect:
            self.result.sends.append(
                SendRecord(
                    msg_id=a["msg_id"], host=ev.host, tid=ev.tid, ts=ev.ts,
                    size=a["bytes"], kind=a["kind"], dst=a.get("dst"),
                    req_id=req.req_id if req is not None else None,
                )
            )

    def _on_cluster_read(self, ev: TraceEvent) -> None:
        if "fd" in ev.attrs:
            self._conn(ev)
        msg_id = ev.attrs["msg_id"]
        self._open_cluster_reads[(ev.host, msg_id)] = (ev.ts, ev.tid, ev.attrs.get("fd"))
        self.model.modify(ev.ts, self._thread_op_q(ev.host, ev.tid), OP_CLUSTER_READ)

    def _on_cluster_process(self, ev: TraceEvent) -> None:
        msg_id = ev.attrs["msg_id"]
        opened = self._open_cluster_reads.pop((ev.host, msg_id), None)
        m = self.model
        if opened is None:
            self._unmatched(ev, "cluster_process_packet")
            self._repair_marker(ev.ts, self._thread_op_q(ev.host, ev.tid), OP_CLUSTER_READ)
            return
        read_ts, tid, fd = opened
        m.modify(ev.ts, self._thread_op_q(ev.host, tid), None)
        self._last_processed[(ev.host, tid)] = msg_id
        if self.collect:
            self.result.recvs.append(
                RecvRecord(msg_id=msg_id, host=ev.host, tid=tid,
                           read_ts=read_ts, process_ts=ev.ts, fd=fd)
            )

    # -- driving -----------------------------------------------------------

    def run(self, events: Iterable[TraceEvent]) -> AnalysisResult:
        for ev in events:
            self.handle(ev)
        return self.finalize()

    def finalize(self, t_end: int | None = None) -> AnalysisResult:
        """Close the model one tick past the last event so final states survive."""
        if self._finalized:
            return self.result
        report = self.result.report
        if t_end is None:
            t_end = report.last_ts + 1 if report.last_ts is not None else self.model.now
        if self.collect:
            # requests still open at trace end surface as incomplete flows
            for ctx in self._conns.values():
                if ctx.active_req is not None:
                    self.result.requests.append(ctx.active_req)
        self.model.close_all(t_end)
        report.hosts = sorted(self._live_conns.keys() | self._queue_len.keys() | self._el_quarks.keys())
        self._finalized = True
        return self.result


def analyze(
    events: Iterable[TraceEvent], model: StateSystem, collect: bool = False
) -> AnalysisResult:
    """Run the full automaton over an event iterable and close the model."""
    return RedisAnalyzer(model, collect=collect).run(events)
