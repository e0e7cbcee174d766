"""Read-only HTTP API over a closed model, for interactive viewers.

Endpoints (all JSON, times in integer nanoseconds):
  GET /api/tree                                attribute path table
  GET /api/states?path=&t0=&t1=&resolution=    intervals of one attribute
  GET /api/series?metric=&bucket_ns=           bus volume series
  GET /api/spans?t0=&t1=                       span forest (filtered)
  GET /api/flows?id=                           flow index or one flow
  GET /api/findings                            detector output

`resolution` merges runs of sub-pixel intervals into one interval labelled
by the dominant (longest total duration) value, so million-interval models
never ship to the browser. Errors come back as {"error": ...} with a 4xx.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .metrics import EmptyModel, Finding, bus_volume_series
from .sht import HistoryReader, StateInterval, TimeOutOfRange, UnknownQuark

log = logging.getLogger(__name__)


@dataclass
class ModelService:
    """Everything the API serves; spans/flows/findings are precomputed."""

    reader: HistoryReader
    flows_json: dict = field(default_factory=lambda: {"flows": [], "dangling_msg_ids": []})
    spans_json: dict = field(default_factory=lambda: {"spans": [], "unmatched": 0, "flows": []})
    findings: list[Finding] = field(default_factory=list)

    def tree(self) -> dict:
        return {
            "paths": self.reader.paths,
            "tree_start": self.reader.tree_start,
            "tree_end": self.reader.tree_end,
        }

    def states(self, path: str, t0: int, t1: int, resolution: int) -> dict:
        quark = self.reader.quark(path)
        intervals = self.reader.query_range(quark, t0, t1)
        if resolution > 0:
            intervals = merge_for_resolution(intervals, t0, t1, resolution)
        return {
            "path": path,
            "t0": t0,
            "t1": t1,
            "intervals": [
                {"t0": iv.start, "t1": iv.end, "value": iv.value} for iv in intervals
            ],
        }

    def series(self, metric: str, bucket_ns: int) -> dict:
        if metric == "bus_volume_out":
            return bus_volume_series(self.reader, bucket_ns, "out").to_json()
        if metric == "bus_volume_in":
            return bus_volume_series(self.reader, bucket_ns, "in").to_json()
        raise KeyError(f"unknown metric {metric!r}")

    def spans(self, t0: int | None, t1: int | None) -> dict:
        spans = self.spans_json["spans"]
        if t0 is not None and t1 is not None:
            spans = [
                s for s in spans
                if s["t1"] is not None and s["t1"] >= t0 and s["t0"] <= t1
            ]
        return {**self.spans_json, "spans": spans}

    def flows(self, flow_id: str | None) -> dict:
        if flow_id is None:
            return {
                "flows": [
                    {"id": f["id"], "complete": f["complete"], "command": f["command"]}
                    for f in self.flows_json["flows"]
                ]
            }
        for f in self.flows_json["flows"]:
            if f["id"] == flow_id:
                return f
        raise KeyError(f"unknown flow {flow_id!r}")


def merge_for_resolution(
    intervals: list[StateInterval], t0: int, t1: int, resolution: int
) -> list[StateInterval]:
    """Collapse runs of intervals narrower than one pixel; the merged
    interval takes the run's dominant value by accumulated duration."""
    if t1 <= t0 or resolution <= 0:
        return intervals
    min_dur = max((t1 - t0) // resolution, 1)
    out: list[StateInterval] = []
    run: list[StateInterval] = []

    def flush() -> None:
        if not run:
            return
        weights: dict = {}
        for iv in run:
            weights[iv.value] = weights.get(iv.value, 0) + max(iv.end - iv.start, 1)
        dominant = max(weights.items(), key=lambda kv: kv[1])[0]
        out.append(StateInterval(run[0].quark, run[0].start, run[-1].end, dominant))
        run.clear()

    for iv in intervals:
        if iv.end - iv.start >= min_dur:
            flush()
            out.append(iv)
        else:
            if run and iv.start - run[0].start >= min_dur:
                flush()
            run.append(iv)
    flush()
    return out


class _Handler(BaseHTTPRequestHandler):
    service: ModelService = None  # set by make_server

    def log_message(self, fmt, *args):  # route through logging, not stderr
        log.debug("http: " + fmt, *args)

    def _send(self, code: int, payload: dict | list) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _fail(self, code: int, message: str) -> None:
        self._send(code, {"error": message})

    def do_GET(self):  # noqa: N802  (http.server API)
        try:
            url = urlparse(self.path)
            qs = {k: v[-1] for k, v in parse_qs(url.query).items()}
            route = url.path.rstrip("/")
            svc = self.service
            if route == "/api/tree":
                self._send(200, svc.tree())
            elif route == "/api/states":
                self._send(
                    200,
                    svc.states(
                        qs["path"],
                        int(qs.get("t0", svc.reader.tree_start)),
                        int(qs.get("t1", svc.reader.tree_end)),
                        int(qs.get("resolution", 0)),
                    ),
                )
            elif route == "/api/series":
                self._send(
                    200,
                    svc.series(
                        qs.get("metric", "bus_volume_out"),
                        int(qs.get("bucket_ns", 1_000_000)),
                    ),
                )
            elif route == "/api/spans":
                t0 = int(qs["t0"]) if "t0" in qs else None
                t1 = int(qs["t1"]) if "t1" in qs else None
                self._send(200, svc.spans(t0, t1))
            elif route == "/api/flows":
                self._send(200, svc.flows(qs.get("id")))
            elif route == "/api/findings":
                self._send(200, [f.to_json() for f in svc.findings])
            else:
                self._fail(404, f"no route {url.path}")
        except (KeyError, UnknownQuark) as exc:
            self._fail(404, str(exc))
        except (ValueError, TimeOutOfRange, EmptyModel) as exc:
            self._fail(400, str(exc))
        except BrokenPipeError:
            pass
        except Exception as exc:  # pragma: no cover - defensive
            log.exception("request failed")
            self._fail(500, str(exc))


def make_server(service: ModelService, host: str = "127.0.0.1", port: int = 8077) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(service: ModelService, host: str, port: int) -> None:
    httpd = make_server(service, host, port)
    addr, bound_port = httpd.server_address[:2]
    log.info("serving model API on http://%s:%d", addr, bound_port)
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.shutdown()


def start_background(service: ModelService, host: str = "127.0.0.1", port: int = 0):
    """Start the API on a background thread; returns (server, base_url)."""
    httpd = make_server(service, host, port)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    addr, bound_port = httpd.server_address[:2]
    return httpd, f"http://{addr}:{bound_port}"
