"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error (message names the
offending file and line where known). Subcommands never write outside the
given --out path.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import gen, metrics, pipeline
from .events import TraceFormatError
from .gen import ConfigInvalid, ScenarioConfig
from .sht import HistoryReader, ShtError

log = logging.getLogger(__name__)


def _parse_offset(spec: str) -> tuple[str, int]:
    host, _, value = spec.partition("=")
    if not host or not value:
        raise argparse.ArgumentTypeError("offset must look like host=ns")
    return host, int(value)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="storetrace",
        description="Trace analysis for in-memory data store clusters and "
        "the microservices around them.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scenario")
    p.add_argument("scenario", choices=sorted(gen.SCENARIOS))
    p.add_argument("--out", required=True)
    p.add_argument("--nodes", type=int, default=3)
    p.add_argument("--clients", type=int, default=2)
    p.add_argument("--requests", type=int, default=1000)
    p.add_argument("--commands", default="publish",
                   help="comma-separated command mix")
    p.add_argument("--payload", type=int, default=10240)
    p.add_argument("--gossip-header", type=int, default=2048)
    p.add_argument("--service-time-ns", type=int, default=100_000)
    p.add_argument("--gap-ns", type=int, default=150_000)
    p.add_argument("--bus-delay-ns", type=int, default=200_000)
    p.add_argument("--stall-ns", type=int, default=50_000_000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--fault", action="append", default=[],
                   help=f"enable a fault ({', '.join(sorted(gen.KNOWN_FAULTS))})")
    p.add_argument("--offset", action="append", default=[], type=_parse_offset,
                   metavar="HOST=NS", help="inject a clock offset")

    p = sub.add_parser("merge", help="merge per-host streams into one experiment")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-sync", action="store_true",
                   help="skip clock offset estimation (all offsets 0)")
    p.add_argument("--reference", help="reference host (defaults to first)")

    p = sub.add_parser("analyze", help="build the model file from an experiment")
    p.add_argument("--in", dest="in_file", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fanout", type=int, default=50)
    p.add_argument("--block-size", type=int, default=65536)

    p = sub.add_parser("flows", help="reconstruct request flows")
    p.add_argument("--trace", required=True)
    p.add_argument("--model", help="model file (optional consistency check)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("spans", help="reconstruct microservice spans")
    p.add_argument("--trace", required=True)
    p.add_argument("--model", help="model file (optional consistency check)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("detect", help="run all detectors")
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bucket-ns", type=int, default=1_000_000)
    p.add_argument("--threshold-ratio", type=float, default=2.0)
    p.add_argument("--stall-threshold-ns", type=int)
    p.add_argument("--corr-window-ns", type=int, default=10_000_000)

    p = sub.add_parser("report", help="render figures and delimited exports")
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--bucket-ns", type=int, default=1_000_000)

    p = sub.add_parser("query", help="print state intervals of one attribute")
    p.add_argument("--model", required=True)
    p.add_argument("--path", required=True)
    p.add_argument("--t0", type=int)
    p.add_argument("--t1", type=int)
    p.add_argument("--resolution", type=int, default=0)

    p = sub.add_parser("serve", help="serve the HTTP API for the explorer UI")
    p.add_argument("--model", required=True)
    p.add_argument("--trace")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8077)

    return parser


def _cmd_gen(args) -> int:
    config = ScenarioConfig(
        seed=args.seed,
        nodes=args.nodes,
        clients=args.clients,
        requests=args.requests,
        commands=tuple(c for c in args.commands.split(",") if c),
        payload=args.payload,
        gossip_header=args.gossip_header,
        service_time_ns=args.service_time_ns,
        gap_ns=args.gap_ns,
        bus_delay_ns=args.bus_delay_ns,
        stall_ns=args.stall_ns,
        offsets=dict(args.offset),
        faults=frozenset(args.fault),
    )
    out = gen.generate(args.scenario, config, args.out)
    print(f"wrote scenario to {out}")
    return 0


def _cmd_merge(args) -> int:
    offsets = pipeline.merge_streams(
        args.in_dir, args.out, sync=not args.no_sync, reference=args.reference
    )
    print(f"merged to {args.out} (reference {offsets.reference_host}, "
          f"residual bound {offsets.residual_bound_ns} ns)")
    return 0


def _cmd_analyze(args) -> int:
    report = pipeline.analyze_file(
        args.in_file, args.out, fanout=args.fanout, block_size=args.block_size
    )
    print(f"model written to {args.out}: {report['events']} events, "
          f"{report['requests']} requests, {report['unmatched']} unmatched")
    return 0


def _cmd_flows(args) -> int:
    if args.model:
        HistoryReader(args.model).close()
    result = pipeline.build_flows_file(args.trace)
    Path(args.out).write_text(json.dumps(result.to_json(), indent=2) + "\n")
    complete = sum(1 for f in result.flows if f.complete)
    print(f"{len(result.flows)} flows ({complete} complete) -> {args.out}")
    return 0


def _cmd_spans(args) -> int:
    if args.model:
        HistoryReader(args.model).close()
    forest, _flows = pipeline.build_spans_file(args.trace)
    Path(args.out).write_text(json.dumps(forest.to_json(), indent=2) + "\n")
    print(f"{len(forest.spans)} spans ({forest.unmatched} unmatched halves) "
          f"-> {args.out}")
    return 0


def _cmd_detect(args) -> int:
    with HistoryReader(args.model) as reader:
        findings = pipeline.detect_all(
            reader,
            args.trace,
            bucket_ns=args.bucket_ns,
            threshold_ratio=args.threshold_ratio,
            stall_threshold_ns=args.stall_threshold_ns,
            corr_window_ns=args.corr_window_ns,
        )
    Path(args.out).write_text(
        json.dumps([f.to_json() for f in findings], indent=2) + "\n"
    )
    print(f"{len(findings)} findings -> {args.out}")
    return 0


def _cmd_report(args) -> int:
    from .report import render_report

    with HistoryReader(args.model) as reader:
        series_in = metrics.bus_volume_series(reader, args.bucket_ns, "in")
        series_out = metrics.bus_volume_series(reader, args.bucket_ns, "out")
        findings = pipeline.detect_all(reader, args.trace, bucket_ns=args.bucket_ns)
        report_counts = None
        report_path = Path(args.model).with_suffix(".report.json")
        if report_path.exists():
            report_counts = json.loads(report_path.read_text())
        written = render_report(
            reader, series_in, series_out, findings, args.out, report_counts
        )
    print(f"report in {args.out}: {', '.join(written)}")
    return 0


def _cmd_query(args) -> int:
    from .server import merge_for_resolution

    with HistoryReader(args.model) as reader:
        t0 = args.t0 if args.t0 is not None else reader.tree_start
        t1 = args.t1 if args.t1 is not None else reader.tree_end
        quark = reader.quark(args.path)
        intervals = reader.query_range(quark, t0, t1)
        if args.resolution:
            intervals = merge_for_resolution(intervals, t0, t1, args.resolution)
        for iv in intervals:
            print(f"{iv.start}\t{iv.end}\t{json.dumps(iv.value)}")
    return 0


def _cmd_serve(args) -> int:
    from .server import ModelService, serve_forever

    reader = HistoryReader(args.model)
    service = ModelService(reader)
    if args.trace:
        forest, flows_result = pipeline.build_spans_file(args.trace)
        service.flows_json = flows_result.to_json()
        service.spans_json = forest.to_json()
        service.findings = pipeline.detect_all(reader, args.trace)
    serve_forever(service, args.host, args.port)
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "merge": _cmd_merge,
    "analyze": _cmd_analyze,
    "flows": _cmd_flows,
    "spans": _cmd_spans,
    "detect": _cmd_detect,
    "report": _cmd_report,
    "query": _cmd_query,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; --help exits 0
        return 0 if exc.code == 0 else 1
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        code = _COMMANDS[args.command](args)
        sys.stdout.flush()
        return code
    except BrokenPipeError:
        # downstream consumer (e.g. head) closed the pipe; not an error
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (TraceFormatError, ShtError, ConfigInvalid, FileNotFoundError,
            NotADirectoryError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
