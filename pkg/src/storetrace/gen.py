"""Deterministic synthetic trace scenarios with ground-truth sidecars.

Each scenario emulates an instrumented deployment at desk scale and emits
one jsonl stream per host plus a ground_truth.json describing what a
correct analysis must reconstruct (request flows, span parentage, injected
clock offsets, injected fault locations). All randomness comes from the
config seed; identical configs produce byte-identical output.

Fault switches:
  BroadcastAmplification - publish traffic whose cluster fan-out inflates
      bus volume (ratio tunable via payload/gossip_header/nodes).
  SslPendingDoubleFree   - the pending-read sequence that frees one
      connection twice from two threads.
  ReadStall              - one cluster read stretched by stall_ns,
      coinciding with a bus volume burst; the workload pauses for the
      stall so per-thread timelines stay serialized.
  PipelinedHttp          - overlapping requests on a shared keep-alive
      connection (FIFO pairing exercise).
  TruncateTail           - drop one peer's reads for the last publish,
      leaving an incomplete flow.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .events import TraceEvent, write_stream

BASE_TS = 1_000_000_000  # 1s; keeps every timestamp well inside 2^53

FAULT_AMPLIFICATION = "BroadcastAmplification"
FAULT_DOUBLE_FREE = "SslPendingDoubleFree"
FAULT_READ_STALL = "ReadStall"
FAULT_PIPELINED = "PipelinedHttp"
FAULT_TRUNCATE = "TruncateTail"

KNOWN_FAULTS = {
    FAULT_AMPLIFICATION,
    FAULT_DOUBLE_FREE,
    FAULT_READ_STALL,
    FAULT_PIPELINED,
    FAULT_TRUNCATE,
}


class ConfigInvalid(ValueError):
    """Scenario configuration rejected."""


@dataclass
class ScenarioConfig:
    seed: int = 7
    nodes: int = 3
    clients: int = 2
    requests: int = 1000            # per command
    commands: tuple[str, ...] = ("publish",)
    payload: int = 10240            # published bytes per message (V)
    gossip_header: int = 2048       # cluster encapsulation overhead (H)
    service_time_ns: int = 100_000  # command execution time
    read_lat_ns: int = 2_000        # connection read before command decode
    write_ns: int = 3_000
    proc_ns: int = 5_000            # cluster packet processing
    gap_ns: int = 150_000           # request slot width
    bus_delay_ns: int = 200_000     # one-way inter-node delay (also the minimum)
    ping_rounds: int = 5
    ping_bytes: int = 64
    stall_ns: int = 50_000_000
    offsets: dict[str, int] = field(default_factory=dict)
    faults: frozenset = frozenset()
    http_net_ns: int = 150_000      # microservice hop one-way delay
    http_proc_ns: int = 100_000     # per-service processing before next hop
    redis_exec_ns: int = 50_000

    def check(self) -> None:
        if self.nodes < 1:
            raise ConfigInvalid("nodes must be >= 1")
        if self.requests < 0:
            raise ConfigInvalid("requests must be >= 0")
        if self.clients < 1:
            raise ConfigInvalid("clients must be >= 1")
        if self.payload < 1 or self.gossip_header < 0:
            raise ConfigInvalid("payload must be >= 1, gossip_header >= 0")
        unknown = set(self.faults) - KNOWN_FAULTS
        if unknown:
            raise ConfigInvalid(f"unknown faults: {sorted(unknown)}")
        if FAULT_AMPLIFICATION in self.faults and self.nodes < 2:
            raise ConfigInvalid("BroadcastAmplification requires nodes >= 2")
        busy = self.read_lat_ns + self.service_time_ns + self.write_ns + 10_000
        if self.gap_ns < busy:
            raise ConfigInvalid(
                f"gap_ns={self.gap_ns} too small for request duration ~{busy}"
            )

    def digest(self) -> dict:
        d = asdict(self)
        d["faults"] = sorted(self.faults)
        d["commands"] = list(self.commands)
        return d


@dataclass
class GroundTruth:
    scenario: str
    offsets: dict[str, int]
    min_one_way_delay_ns: int
    config: dict
    flows: list[dict] = field(default_factory=list)
    spans: list[dict] = field(default_factory=list)
    faults: dict = field(default_factory=dict)
    expected_out_in_ratio: float | None = None
    requests_per_command: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "offsets": self.offsets,
            "min_one_way_delay_ns": self.min_one_way_delay_ns,
            "config": self.config,
            "flows": self.flows,
            "spans": self.spans,
            "faults": self.faults,
            "expected_out_in_ratio": self.expected_out_in_ratio,
            "requests_per_command": self.requests_per_command,
        }


class _Emitter:
    """Collects events per host in true time; applies clock offsets on write."""

    def __init__(self, offsets: dict[str, int]):
        self.offsets = offsets
        self.by_host: dict[str, list[tuple[int, int, str, int, dict]]] = {}
        self._order = 0

    def emit(self, host: str, tid: int, ts: int, name: str, **attrs) -> None:
        self.by_host.setdefault(host, []).append((ts, self._order, name, tid, attrs))
        self._order += 1

    def streams(self) -> dict[str, list[TraceEvent]]:
        out: dict[str, list[TraceEvent]] = {}
        for host in sorted(self.by_host):
            rows = sorted(self.by_host[host], key=lambda r: (r[0], r[1]))
            off = self.offsets.get(host, 0)
            events = []
            for seq, (ts, _order, name, tid, attrs) in enumerate(rows, start=1):
                raw = ts - off
                if raw < 0:
                    raise ConfigInvalid("offset pushes a timestamp below zero")
                events.append(
                    TraceEvent(ts=raw, host=host, tid=tid, seq=seq, name=name, attrs=attrs)
                )
            out[host] = events
        return out


def _main_tid(node_index: int) -> int:
    return node_index * 100 + 1


def _bus_tid(node_index: int) -> int:
    return node_index * 100 + 51


def _ping_tid(node_index: int) -> int:
    return node_index * 100 + 61


def _sorted_segments(segs: list[list]) -> list[list]:
    return sorted(segs, key=lambda s: (s[3], s[4], s[0], s[2]))


def _ping_phase(config: ScenarioConfig, n_hosts: int) -> int:
    """A slot offset free of n1 request handling and peer packet handling,
    wide enough for one full round of staggered pings."""
    width = n_hosts * (n_hosts - 1) * 200 + config.proc_ns + 4_000
    n1_busy = (0, config.read_lat_ns + config.service_time_ns + config.write_ns + 2_000)
    peer_at = (config.read_lat_ns + config.service_time_ns + config.bus_delay_ns) % config.gap_ns
    peer_busy = (peer_at - 2_000, peer_at + config.proc_ns + config.write_ns + 2_000)
    for cand in range(0, max(config.gap_ns - width, 1), 1_000):
        window = (cand, cand + width)
        if window[1] >= n1_busy[0] and window[0] <= n1_busy[1]:
            continue
        if window[1] >= peer_busy[0] and window[0] <= peer_busy[1]:
            continue
        return cand
    raise ConfigInvalid("no collision-free ping phase for this timing config")


def _emit_pings(em: _Emitter, hosts: list[str], start: int, end: int, config: ScenarioConfig) -> int:
    """Bidirectional gossip pings at exactly the minimum one-way delay.

    Returns the total byte volume injected on the bus.
    """
    if len(hosts) < 2:
        return 0
    phase = _ping_phase(config, len(hosts))
    rounds = max(config.ping_rounds, 2)
    span = max(end - start, config.gap_ns * (rounds + 1))
    interval = max((span // (rounds + 1)) // config.gap_ns, 1) * config.gap_ns
    mid = 20_000_000
    volume = 0
    for k in range(rounds):
        base = start + (k + 1) * interval + phase
        pair_no = 0
        for a in hosts:
            for b in hosts:
                if a == b:
                    continue
                ts = base + pair_no * 200
                mid += 1
                ai, bi = hosts.index(a), hosts.index(b)
                em.emit(a, _ping_tid(ai), ts, "cluster_send",
                        msg_id=mid, bytes=config.ping_bytes, kind="ping", dst=b)
                em.emit(b, _ping_tid(bi), ts + config.bus_delay_ns, "cluster_read",
                        msg_id=mid, fd=520 + ai, bytes=config.ping_bytes, conn_type="cluster")
                em.emit(b, _ping_tid(bi), ts + config.bus_delay_ns + config.proc_ns,
                        "cluster_process_packet", msg_id=mid)
                volume += config.ping_bytes
                pair_no += 1
    return volume


def _emit_burst(em: _Emitter, hosts: list[str], center: int, config: ScenarioConfig) -> None:
    """Bus volume flood concentrated around the stalled read: roughly three
    times the workload's total broadcast volume inside an 8 ms window, so
    the local out-rate clearly dominates the trace average. Peers take these
    packets on a secondary io thread so the victim timeline stays intact."""
    peers = hosts[1:]
    n_publish = config.requests * sum(1 for c in config.commands if c == "publish")
    workload_bytes = n_publish * len(peers) * (config.payload + config.gossip_header)
    target = max(3 * workload_bytes, 1_000_000)
    n_msgs = 40
    window = 8_000_000
    size = max(target // (n_msgs * max(len(peers), 1)), 1)
    step = window // n_msgs
    start = center - window // 2
    for k in range(n_msgs):
        ts = start + k * step
        mid = 10_000_000 + k
        for peer in peers:
            pidx = hosts.index(peer)
            em.emit(hosts[0], _bus_tid(0), ts, "cluster_send",
                    msg_id=mid, bytes=size, kind="broadcast", dst=peer)
            em.emit(peer, _bus_tid(pidx) + 1, ts + config.bus_delay_ns, "cluster_read",
                    msg_id=mid, fd=510, bytes=size, conn_type="cluster")
            em.emit(peer, _bus_tid(pidx) + 1, ts + config.bus_delay_ns + config.proc_ns,
                    "cluster_process_packet", msg_id=mid)


def gen_cluster_publish(config: ScenarioConfig) -> tuple[dict[str, list[TraceEvent]], GroundTruth]:
    """Publish/subscribe workload on an N-node cluster.

    Node n1 takes client requests; publishes are broadcast on the bus to
    every other node; the subscriber sits on n2. Request slots are aligned
    to a fixed grid so ping markers never preempt a request timeline.
    """
    config.check()
    hosts = [f"n{i + 1}" for i in range(config.nodes)]
    peers = hosts[1:]
    subscriber = hosts[1] if len(hosts) > 1 else None
    em = _Emitter(config.offsets)
    gt = GroundTruth(
        scenario="cluster_publish",
        offsets=dict(config.offsets),
        min_one_way_delay_ns=config.bus_delay_ns,
        config=config.digest(),
    )

    msg_id = 0
    client_fds = [10 + i for i in range(config.clients)]
    conn_cmds: dict[int, int] = {}
    sub_fd = 300
    total = config.requests * len(config.commands)
    stall_at = total // 2 if FAULT_READ_STALL in config.faults else None
    truncate_last = FAULT_TRUNCATE in config.faults and total > 0
    host = hosts[0]
    tid = _main_tid(0)

    t = BASE_TS
    req_no = 0
    counts: dict[str, int] = {}
    for _ in range(config.requests):
        for cmd in config.commands:
            fd = client_fds[req_no % len(client_fds)]
            counts[cmd] = counts.get(cmd, 0) + 1
            cmd_no = conn_cmds.get(fd, 0)
            conn_cmds[fd] = cmd_no + 1
            req_id = f"{host}:{fd}#0:{cmd_no}"

            r0 = t
            c0 = r0 + config.read_lat_ns
            c1 = c0 + config.service_time_ns
            mem = 16384 + (req_no % 7) * 1024
            em.emit(host, tid, r0, "start_read_client_query", fd=fd, mem=mem)
            em.emit(host, tid, c0, "call_command_start", fd=fd, command=cmd)
            segments = [
                [host, tid, "Read", r0, c0],
                [host, tid, cmd, c0, c1],
            ]
            complete = True
            if cmd == "publish":
                em.emit(host, tid, c0 + config.service_time_ns // 2, "add_file_event", fd=fd)
                msg_id += 1
                size = config.payload + config.gossip_header
                is_last = truncate_last and req_no == total - 1
                for peer in peers:
                    em.emit(host, tid, c1, "cluster_send",
                            msg_id=msg_id, bytes=size, kind="broadcast", dst=peer)
                for j, peer in enumerate(peers):
                    if is_last and j == 0:
                        complete = False
                        continue  # truncated: this send never lands
                    rts = c1 + config.bus_delay_ns
                    pts = rts + config.proc_ns
                    if stall_at == req_no and j == 0:
                        pts += config.stall_ns
                    pidx = hosts.index(peer)
                    ptid = _bus_tid(pidx)
                    em.emit(peer, ptid, rts, "cluster_read",
                            msg_id=msg_id, fd=500, bytes=size, conn_type="cluster")
                    em.emit(peer, ptid, pts, "cluster_process_packet", msg_id=msg_id)
                    segments.append([host, tid, "Bus transit", c1, rts])
                    segments.append([peer, ptid, "Cluster read", rts, pts])
                    if peer == subscriber:
                        w0, w1 = pts, pts + config.write_ns
                        em.emit(peer, ptid, w0, "write_to_client_start", fd=sub_fd)
                        em.emit(peer, ptid, w1, "write_to_client_end", fd=sub_fd)
                        segments.append([peer, ptid, "Write to client", w0, w1])
                em.emit(host, tid, c1, "call_command_end", fd=fd)
                em.emit(host, tid, c1, "end_read_client_query", fd=fd, bytes=config.payload)
                em.emit(host, tid, c1, "delete_file_event", fd=fd)
            else:
                em.emit(host, tid, c1, "call_command_end", fd=fd)
                em.emit(host, tid, c1, "end_read_client_query", fd=fd, bytes=64)
                w0, w1 = c1, c1 + config.write_ns
                em.emit(host, tid, w0, "write_to_client_start", fd=fd)
                em.emit(host, tid, w1, "write_to_client_end", fd=fd)
                segments.append([host, tid, "Write to client", w0, w1])

            gt.flows.append(
                {
                    "id": req_id,
                    "command": cmd,
                    "complete": complete,
                    "segments": _sorted_segments(segments),
                }
            )
            if stall_at == req_no:
                stall_mid = c1 + config.bus_delay_ns + (config.proc_ns + config.stall_ns) // 2
                _emit_burst(em, hosts, stall_mid, config)
                # pause the workload through the stall, keeping the slot grid
                pause = ((config.stall_ns + config.gap_ns - 1) // config.gap_ns + 1) * config.gap_ns
                t += pause
            req_no += 1
            t += config.gap_ns

    ping_volume = _emit_pings(em, hosts, BASE_TS, t, config)
    gt.requests_per_command = counts
    if stall_at is not None:
        gt.faults["read_stall"] = {"request_index": stall_at, "stall_ns": config.stall_ns}
    if truncate_last:
        gt.faults["truncated_request_index"] = total - 1
    if peers and counts.get("publish") and stall_at is None:
        published = counts["publish"] * config.payload
        sent = counts["publish"] * len(peers) * (config.payload + config.gossip_header)
        gt.expected_out_in_ratio = (sent + ping_volume) / published
    return em.streams(), gt


def gen_ssl_double_free(config: ScenarioConfig) -> tuple[dict[str, list[TraceEvent]], GroundTruth]:
    """Pending-read sequence on a TLS connection that ends in a double free.

    With the fault disabled the same workload stops after the first free,
    which is the healthy control case.
    """
    config.check()
    em = _Emitter(config.offsets)
    host = "n1"
    main = _main_tid(0)
    io_a = main + 10
    io_b = main + 11
    fault = FAULT_DOUBLE_FREE in config.faults
    gt = GroundTruth(
        scenario="ssl_double_free",
        offsets=dict(config.offsets),
        min_one_way_delay_ns=0,
        config=config.digest(),
    )

    # background request on a healthy connection
    t = BASE_TS
    em.emit(host, main, t, "start_read_client_query", fd=72, mem=8192)
    em.emit(host, main, t + 2_000, "call_command_start", fd=72, command="get")
    em.emit(host, main, t + 52_000, "call_command_end", fd=72)
    em.emit(host, main, t + 52_000, "end_read_client_query", fd=72, bytes=64)
    em.emit(host, main, t + 53_000, "write_to_client_start", fd=72)
    em.emit(host, main, t + 56_000, "write_to_client_end", fd=72)

    fd = 132
    reads = [8192, 101, 18]
    t = BASE_TS + 200_000
    em.emit(host, main, t, "ssl_read", fd=fd,
            bytes_requested=16384, bytes_read=reads[0], pending=1)
    t += 5_000
    em.emit(host, main, t, "run_pending_reads")
    t += 2_000
    em.emit(host, io_a, t, "ssl_read", fd=fd,
            bytes_requested=16384, bytes_read=reads[1], pending=1)
    t += 3_000
    em.emit(host, main, t, "run_pending_reads")
    t += 2_000
    em.emit(host, io_a, t, "ssl_read", fd=fd,
            bytes_requested=16384, bytes_read=reads[2], pending=1)
    t += 3_000
    em.emit(host, main, t, "run_pending_reads")
    t += 2_000
    em.emit(host, io_a, t, "ssl_read", fd=fd,
            bytes_requested=16384, bytes_read=-1, pending=0)
    t += 1_000
    first_free = t
    em.emit(host, io_a, t, "free_client", fd=fd)
    second_free = None
    if fault:
        t += 4_000
        em.emit(host, io_b, t, "ssl_read", fd=fd,
                bytes_requested=16384, bytes_read=-1, pending=0)
        t += 1_000
        second_free = t
        em.emit(host, io_b, t, "free_client", fd=fd)
    t += 10_000
    em.emit(host, main, t, "delete_file_event", fd=fd)

    if fault:
        gt.faults["double_free"] = {
            "fd": fd,
            "tids": [io_a, io_b],
            "free_ts": [first_free, second_free],
            "read_sizes": reads,
        }
    return em.streams(), gt


_ADDR = {
    "loadgen": "10.0.1.1",
    "gateway": "10.0.1.10",
    "user": "10.0.1.11",
    "order": "10.0.1.12",
    "redis-gateway": "10.0.1.13",
    "mysql-gateway": "10.0.1.14",
}
_PORT = {
    "gateway": 8080,
    "user": 8081,
    "order": 8082,
    "redis-gateway": 8083,
    "mysql-gateway": 8084,
}
_REDIS_HOST = "redis1"
_REDIS_ADDR = "10.0.0.1"
_REDIS_PORT = 6379


def gen_microservices(config: ScenarioConfig) -> tuple[dict[str, list[TraceEvent]], GroundTruth]:
    """Five-service topology plus the store: gateway fans out to user/order,
    user reaches the store through the redis gateway, order goes to the
    mysql gateway.

    Span ground truth is keyed by (kind, connection 4-tuple, per-tuple FIFO
    index); parent references use the same key, so comparisons do not
    depend on reconstruction-internal span ids. Redis-side events are
    emitted for every redis-gateway call so the store-level flow can be
    attached under the corresponding client span.
    """
    config.check()
    em = _Emitter(config.offsets)
    gt = GroundTruth(
        scenario="microservices",
        offsets=dict(config.offsets),
        min_one_way_delay_ns=config.http_net_ns,
        config=config.digest(),
    )
    net = config.http_net_ns
    proc = config.http_proc_ns
    pipelined = FAULT_PIPELINED in config.faults

    span_fifo: dict[tuple, int] = {}

    def add_span(kind, service, span_host, key, t0, t1, parent, flow=None):
        k = span_fifo.get((kind, tuple(key)), 0)
        span_fifo[(kind, tuple(key))] = k + 1
        gt.spans.append(
            {
                "kind": kind,
                "service": service,
                "host": span_host,
                "key": list(key),
                "k": k,
                "t0": t0,
                "t1": t1,
                "parent": parent,
                "flow": flow,
            }
        )
        return [kind, list(key), k]

    def http(name, span_host, tid, ts, key, service, fd):
        em.emit(span_host, tid, ts, name,
                src_addr=key[0], src_port=key[1], dst_addr=key[2], dst_port=key[3],
                service=service, fd=fd)

    redis_fd = 88
    redis_cmds = 0
    prev_sr0: int | None = None
    prev_done: int | None = None

    t = BASE_TS
    chain_ns = 2 * proc + 8 * net + config.redis_exec_ns + 200_000
    req_gap = max(chain_ns + 100_000, 1_000_000)
    for r in range(config.requests):
        target = "user" if r % 2 == 0 else "order"
        backend = "redis-gateway" if target == "user" else "mysql-gateway"
        k0 = (_ADDR["loadgen"], 51000, _ADDR["gateway"], _PORT["gateway"])
        overlap = pipelined and r % 2 == 1 and prev_sr0 is not None
        t_cr0 = prev_sr0 + 10_000 if overlap else t
        t_sr0 = t_cr0 + net
        http("http_client_request", "loadgen", 11, t_cr0, k0, "gateway", 20)
        http("http_server_receive", "gateway", 21, t_sr0, k0, "gateway", 120)

        work0 = max(t_sr0, prev_done + 5_000) if overlap else t_sr0
        t_cr1 = work0 + proc
        k1 = (_ADDR["gateway"], 52000 + (r % 4), _ADDR[target], _PORT[target])
        t_sr1 = t_cr1 + net
        http("http_client_request", "gateway", 21, t_cr1, k1, target, 22)
        http("http_server_receive", target, 31, t_sr1, k1, target, 130)

        t_cr2 = t_sr1 + proc
        k2 = (_ADDR[target], 53000 + (r % 4), _ADDR[backend], _PORT[backend])
        t_sr2 = t_cr2 + net
        http("http_client_request", target, 31, t_cr2, k2, backend, 24)
        http("http_server_receive", backend, 41, t_sr2, k2, backend, 140)

        flow_id = None
        if backend == "redis-gateway":
            cmd = "get" if (r // 2) % 2 == 0 else "set"
            k3 = (_ADDR["redis-gateway"], 54000, _REDIS_ADDR, _REDIS_PORT)
            t_cr3 = t_sr2 + proc
            http("http_client_request", "redis-gateway", 41, t_cr3, k3, "redis", 40)
            rr0 = t_cr3 + net
            rc0 = rr0 + 5_000
            rc1 = rc0 + config.redis_exec_ns
            rw0, rw1 = rc1, rc1 + 3_000
            em.emit(_REDIS_HOST, 1, rr0, "start_read_client_query", fd=redis_fd,
                    src_addr=k3[0], src_port=k3[1], dst_addr=k3[2], dst_port=k3[3])
            em.emit(_REDIS_HOST, 1, rc0, "call_command_start", fd=redis_fd, command=cmd)
            em.emit(_REDIS_HOST, 1, rc1, "call_command_end", fd=redis_fd)
            em.emit(_REDIS_HOST, 1, rc1, "end_read_client_query", fd=redis_fd, bytes=64)
            em.emit(_REDIS_HOST, 1, rw0, "write_to_client_start", fd=redis_fd)
            em.emit(_REDIS_HOST, 1, rw1, "write_to_client_end", fd=redis_fd)
            flow_id = f"{_REDIS_HOST}:{redis_fd}#0:{redis_cmds}"
            redis_cmds += 1
            gt.flows.append(
                {
                    "id": flow_id,
                    "command": cmd,
                    "complete": True,
                    "segments": _sorted_segments(
                        [
                            [_REDIS_HOST, 1, "Read", rr0, rc0],
                            [_REDIS_HOST, 1, cmd, rc0, rc1],
                            [_REDIS_HOST, 1, "Write to client", rw0, rw1],
                        ]
                    ),
                }
            )
            t_cp3 = rw1 + net
            http("http_client_response", "redis-gateway", 41, t_cp3, k3, "redis", 40)
            t_sp2 = t_cp3 + proc // 2
        else:
            t_sp2 = t_sr2 + 2 * proc

        t_cp2 = t_sp2 + net
        http("http_server_response", backend, 41, t_sp2, k2, backend, 140)
        http("http_client_response", target, 31, t_cp2, k2, backend, 24)

        t_sp1 = t_cp2 + proc // 2
        t_cp1 = t_sp1 + net
        http("http_server_response", target, 31, t_sp1, k1, target, 130)
        http("http_client_response", "gateway", 21, t_cp1, k1, target, 22)

        t_sp0 = t_cp1 + proc // 2
        t_cp0 = t_sp0 + net
        http("http_server_response", "gateway", 21, t_sp0, k0, "gateway", 120)
        http("http_client_response", "loadgen", 11, t_cp0, k0, "gateway", 20)

        root = add_span("client", "gateway", "loadgen", k0, t_cr0, t_cp0, None)
        gsrv = add_span("server", "gateway", "gateway", k0, t_sr0, t_sp0, root)
        gcli = add_span("client", target, "gateway", k1, t_cr1, t_cp1, gsrv)
        tsrv = add_span("server", target, target, k1, t_sr1, t_sp1, gcli)
        tcli = add_span("client", backend, target, k2, t_cr2, t_cp2, tsrv)
        bsrv = add_span("server", backend, backend, k2, t_sr2, t_sp2, tcli)
        if backend == "redis-gateway":
            add_span("client", "redis", "redis-gateway", k3, t_cr3, t_cp3, bsrv, flow=flow_id)

        prev_sr0 = t_sr0
        prev_done = t_sp0
        t += req_gap

    gt.requests_per_command = {"http": config.requests, "redis": redis_cmds}
    return em.streams(), gt


def write_scenario(
    streams: dict[str, list[TraceEvent]], gt: GroundTruth, out_dir
) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for host, events in sorted(streams.items()):
        write_stream(events, out / f"{host}.jsonl")
    (out / "ground_truth.json").write_text(json.dumps(gt.to_json(), indent=2) + "\n")
    return out


SCENARIOS = {
    "cluster-publish": gen_cluster_publish,
    "ssl-double-free": gen_ssl_double_free,
    "microservices": gen_microservices,
}


def generate(scenario: str, config: ScenarioConfig, out_dir) -> Path:
    try:
        fn = SCENARIOS[scenario]
    except KeyError:
        raise ConfigInvalid(
            f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}"
        ) from None
    streams, gt = fn(config)
    return write_scenario(streams, gt, out_dir)
