"""Trace event model and the JSON-lines stream format.

A trace file ("*.jsonl") holds one event per line. Every line is a JSON
object with exactly the keys ts/host/tid/seq/name/attrs: `ts` is the
per-host clock in integer nanoseconds, `seq` a strictly increasing
per-stream sequence number, and `attrs` a flat map whose values are
restricted to int/float/str. Recognized tracepoint names are validated
against a required-attribute schema; unknown names pass through untouched
so streams from other runtimes can ride along in the same experiment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Union

Scalar = Union[int, float, str]

EVENT_KEYS = ("ts", "host", "tid", "seq", "name", "attrs")

_HTTP_REQUIRED: dict[str, type] = {
    "src_addr": str,
    "dst_addr": str,
    "src_port": int,
    "dst_port": int,
    "service": str,
    "fd": int,
}

#: Required attributes (name -> type) per recognized tracepoint.
VOCABULARY: dict[str, dict[str, type]] = {
    "start_read_client_query": {"fd": int},
    "end_read_client_query": {"fd": int},
    "write_to_client_start": {"fd": int},
    "write_to_client_end": {"fd": int},
    "ssl_read": {"fd": int, "bytes_requested": int, "bytes_read": int},
    "free_client": {"fd": int},
    "cluster_read": {"msg_id": int},
    "cluster_process_packet": {"msg_id": int},
    "cluster_send": {"msg_id": int, "bytes": int, "kind": str},
    "call_command_start": {"fd": int, "command": str},
    "call_command_end": {"fd": int},
    "add_file_event": {},
    "delete_file_event": {},
    "run_pending_reads": {},
    "http_client_request": dict(_HTTP_REQUIRED),
    "http_server_receive": dict(_HTTP_REQUIRED),
    "http_server_response": dict(_HTTP_REQUIRED),
    "http_client_response": dict(_HTTP_REQUIRED),
}

#: Legacy spellings accepted on input and normalized to canonical names.
NAME_ALIASES = {"write_to_end_start": "write_to_client_end"}


class TraceFormatError(Exception):
    """A trace file violates the stream format."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif path is not None:
            where += " "
        super().__init__(where + message)


class MalformedLine(TraceFormatError):
    """Line is not a well-formed event record."""


class SchemaViolation(TraceFormatError):
    """Recognized event name is missing a required attribute or has a bad type."""


class NonMonotoneSeq(TraceFormatError):
    """Stream ordering invariant ((ts, seq) non-decreasing, seq strict) broken."""


@dataclass(slots=True)
class TraceEvent:
    ts: int
    host: str
    tid: int
    seq: int
    name: str
    attrs: dict[str, Scalar] = field(default_factory=dict)

    def with_ts(self, ts: int) -> "TraceEvent":
        return replace(self, ts=ts)


@dataclass(slots=True)
class TraceStream:
    """All events of one host, ordered by (ts, seq)."""

    host: str
    events: list[TraceEvent]
    path: str | None = None

    def __len__(self) -> int:
        return len(self.events)


def _is_int(v: object) -> bool:
    # bool is an int subclass but not a valid trace scalar
    return type(v) is int


def event_from_obj(obj: object, path: str | None = None, line: int | None = None) -> TraceEvent:
    """Validate one decoded JSON object and build a TraceEvent."""
    if not isinstance(obj, dict):
        raise MalformedLine("event record must be a JSON object", path, line)
    if set(obj.keys()) != set(EVENT_KEYS):
        raise MalformedLine(
            f"record keys must be exactly {list(EVENT_KEYS)}, got {sorted(obj.keys())}",
            path,
            line,
        )
    ts, host, tid, seq, name, attrs = (
        obj["ts"],
        obj["host"],
        obj["tid"],
        obj["seq"],
        obj["name"],
        obj["attrs"],
    )
    if not _is_int(ts) or ts < 0:
        raise MalformedLine("ts must be a non-negative integer", path, line)
    if not isinstance(host, str) or not host:
        raise MalformedLine("host must be a non-empty string", path, line)
    if not _is_int(tid):
        raise MalformedLine("tid must be an integer", path, line)
    if not _is_int(seq):
        raise MalformedLine("seq must be an integer", path, line)
    if not isinstance(name, str) or not name:
        raise MalformedLine("name must be a non-empty string", path, line)
    if not isinstance(attrs, dict):
        raise MalformedLine("attrs must be an object", path, line)
    for k, v in attrs.items():
        if not isinstance(k, str):
            raise MalformedLine("attr keys must be strings", path, line)
        if not (_is_int(v) or type(v) is float or isinstance(v, str)):
            raise MalformedLine(
                f"attr {k!r} must be int, float, or str", path, line
            )

    name = NAME_ALIASES.get(name, name)
    required = VOCABULARY.get(name)
    if required is not None:
        for attr, typ in required.items():
            if attr not in attrs:
                raise SchemaViolation(
                    f"event {name!r} requires attribute {attr!r}", path, line
                )
            v = attrs[attr]
            if typ is int and not _is_int(v):
                raise SchemaViolation(
                    f"attribute {attr!r} of {name!r} must be an integer", path, line
                )
            if typ is str and not isinstance(v, str):
                raise SchemaViolation(
                    f"attribute {attr!r} of {name!r} must be a string", path, line
                )
            if typ is float and not (type(v) is float or _is_int(v)):
                raise SchemaViolation(
                    f"attribute {attr!r} of {name!r} must be numeric", path, line
                )
    return TraceEvent(ts=ts, host=host, tid=tid, seq=seq, name=name, attrs=attrs)


def event_to_line(event: TraceEvent) -> str:
    """Canonical single-line serialization (fixed key order)."""
    obj = {
        "ts": event.ts,
        "host": event.host,
        "tid": event.tid,
        "seq": event.seq,
        "name": event.name,
        "attrs": event.attrs,
    }
    return json.dumps(obj, separators=(",", ":"))


def _open_lines(source) -> tuple[Iterator[str], str | None, bool]:
    """Returns (line iterator, display path, needs_close)."""
    if isinstance(source, (str, Path)):
        fp = open(source, "r", encoding="utf-8")
        return fp, str(source), True
    if hasattr(source, "read"):
        name = getattr(source, "name", None)
        return iter(source), str(name) if name else None, False
    raise TypeError("source must be a path or a file object")


def read_events(source) -> Iterator[TraceEvent]:
    """Stream events from a jsonl source, validating format and schema only.

    Memory use is bounded by one record; stream-level ordering is *not*
    checked here (see parse_stream / iter_stream_events).
    """
    lines, path, needs_close = _open_lines(source)
    try:
        for line_no, raw in enumerate(lines, start=1):
            if isinstance(raw, bytes):
                raw = raw.decode("utf-8")
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedLine(f"invalid JSON: {exc.msg}", path, line_no) from exc
            yield event_from_obj(obj, path, line_no)
    finally:
        if needs_close:
            lines.close()


def iter_stream_events(source) -> Iterator[TraceEvent]:
    """Stream one host's events, enforcing the per-stream ordering invariants."""
    host = None
    last_ts = None
    last_seq = None
    for line_no, event in enumerate(read_events(source), start=1):
        if host is None:
            host = event.host
        elif event.host != host:
            raise MalformedLine(
                f"stream mixes hosts {host!r} and {event.host!r}", None, line_no
            )
        if last_seq is not None and event.seq <= last_seq:
            raise NonMonotoneSeq(
                f"seq {event.seq} after {last_seq} (must be strictly increasing)",
                None,
                line_no,
            )
        if last_ts is not None and event.ts < last_ts:
            raise NonMonotoneSeq(
                f"ts {event.ts} after {last_ts} (must be non-decreasing)", None, line_no
            )
        last_ts, last_seq = event.ts, event.seq
        yield event


def parse_stream(source) -> TraceStream:
    """Parse a full stream into memory. Empty input yields an empty stream."""
    path = str(source) if isinstance(source, (str, Path)) else None
    events = list(iter_stream_events(source))
    host = events[0].host if events else ""
    return TraceStream(host=host, events=events, path=path)


def write_stream(events: Iterable[TraceEvent], dest) -> None:
    """Serialize events as canonical jsonl; round-trips through parse_stream."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8") as fp:
            for ev in events:
                fp.write(event_to_line(ev))
                fp.write("\n")
        return
    for ev in events:
        dest.write(event_to_line(ev))
        dest.write("\n")
