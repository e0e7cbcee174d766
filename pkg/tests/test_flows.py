import pytest

from conftest import load_gt, run_pipeline

from storetrace.flows import (
    FlowSegment,
    IncompleteFlow,
    RequestFlow,
    build_flows,
    flow_latency_breakdown,
)
from storetrace.gen import (
    FAULT_TRUNCATE,
    ScenarioConfig,
    gen_cluster_publish,
    write_scenario,
)
from storetrace.pipeline import build_flows_file, load_events


def gt_segments(flow):
    return [list(s) for s in flow["segments"]]


def as_lists(flow):
    return [[s.host, s.tid, s.label, s.t0, s.t1] for s in flow.segments]


def test_flows_match_ground_truth(publish_small):
    result = build_flows_file(publish_small["merged"])
    gt = {f["id"]: f for f in publish_small["gt"]["flows"]}
    got = {f.flow_id: f for f in result.flows}
    assert set(got) == set(gt)
    for fid, flow in got.items():
        assert as_lists(flow) == gt_segments(gt[fid]), fid
        assert flow.complete == gt[fid]["complete"]
    assert not result.dangling_msg_ids


def test_flow_conservation(publish_small):
    result = build_flows_file(publish_small["merged"])
    assert len(result.flows) == publish_small["gt"]["requests_per_command"]["publish"]


def test_get_request_single_host_three_segments(tmp_path):
    config = ScenarioConfig(requests=3, commands=("get",))
    streams, gt = gen_cluster_publish(config)
    trace_dir = write_scenario(streams, gt, tmp_path / "t")
    merged, _model, _ = run_pipeline(trace_dir, tmp_path)
    result = build_flows_file(merged)
    assert len(result.flows) == 3
    for flow in result.flows:
        assert [s.label for s in flow.segments] == ["Read", "get", "Write to client"]
        assert len({s.host for s in flow.segments}) == 1


def test_truncated_flow_incomplete(tmp_path):
    config = ScenarioConfig(requests=6, faults=frozenset({FAULT_TRUNCATE}))
    streams, gt = gen_cluster_publish(config)
    trace_dir = write_scenario(streams, gt, tmp_path / "t")
    merged, _model, _ = run_pipeline(trace_dir, tmp_path)
    result = build_flows_file(merged)
    incomplete = [f for f in result.flows if not f.complete]
    assert len(incomplete) == 1
    assert result.dangling_msg_ids
    gt_map = {f["id"]: f for f in load_gt(trace_dir)["flows"]}
    assert not gt_map[incomplete[0].flow_id]["complete"]
    assert as_lists(incomplete[0]) == gt_segments(gt_map[incomplete[0].flow_id])


def test_flows_span_multiple_hosts(publish_small):
    result = build_flows_file(publish_small["merged"])
    flow = result.flows[0]
    assert len({s.host for s in flow.segments}) >= 2
    labels = [s.label for s in flow.segments]
    for needed in ("Read", "publish", "Bus transit", "Cluster read", "Write to client"):
        assert needed in labels


def _manual_flow(segs, complete=True):
    return RequestFlow(
        flow_id="f", origin="f", command="x", complete=complete,
        segments=[FlowSegment("h", 1, label, t0, t1) for (label, t0, t1) in segs],
    )


def test_breakdown_simple_chain():
    flow = _manual_flow([("Read", 0, 2), ("Bus", 2, 7), ("Write", 7, 9)])
    assert flow_latency_breakdown(flow) == {"Read": 2, "Bus": 5, "Write": 2}


def test_breakdown_zero_duration_segment():
    flow = _manual_flow([("Read", 0, 2), ("Mark", 2, 2), ("Write", 2, 5)])
    out = flow_latency_breakdown(flow)
    assert out == {"Read": 2, "Mark": 0, "Write": 3}


def test_breakdown_records_gaps():
    flow = _manual_flow([("Read", 0, 2), ("Write", 5, 9)])
    out = flow_latency_breakdown(flow)
    assert out == {"Read": 2, "(gap)": 3, "Write": 4}
    assert sum(out.values()) == 9


def test_breakdown_incomplete_rejected():
    flow = _manual_flow([("Read", 0, 2)], complete=False)
    with pytest.raises(IncompleteFlow):
        flow_latency_breakdown(flow)


def test_breakdown_injected_bus_delay(tmp_path):
    config = ScenarioConfig(requests=2, bus_delay_ns=50_000_000, gap_ns=150_000)
    streams, gt = gen_cluster_publish(config)
    trace_dir = write_scenario(streams, gt, tmp_path / "t")
    merged, _model, _ = run_pipeline(trace_dir, tmp_path)
    result = build_flows_file(merged)
    out = flow_latency_breakdown(result.flows[0])
    assert out["Bus transit"] == 50_000_000
    flow = result.flows[0]
    assert sum(out.values()) == flow.t1 - flow.t0


def test_build_flows_from_raw_events(publish_small):
    result = build_flows(load_events(publish_small["merged"]))
    assert len(result.flows) == 120
