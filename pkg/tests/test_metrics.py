import pytest

from conftest import make_event, run_pipeline

from storetrace.gen import (
    FAULT_READ_STALL,
    ScenarioConfig,
    gen_cluster_publish,
    gen_ssl_double_free,
    write_scenario,
)
from storetrace.metrics import (
    EmptyModel,
    Series,
    bus_volume_series,
    detect_bus_amplification,
    detect_double_free,
    detect_read_stall,
    fanout_stats,
    latency_report,
)
from storetrace.pipeline import collect, load_events
from storetrace.sht import HistoryReader


def _scenario(tmp_path, config, generator=gen_cluster_publish):
    streams, gt = generator(config)
    trace_dir = write_scenario(streams, gt, tmp_path / "trace")
    merged, model, offsets = run_pipeline(trace_dir, tmp_path)
    return merged, HistoryReader(model), gt


def test_no_cluster_events_zero_series(tmp_path):
    merged, reader, _ = _scenario(
        tmp_path, ScenarioConfig(nodes=1, requests=4, commands=("get",))
    )
    out = bus_volume_series(reader, 1_000_000, "out")
    assert out.total() == 0


def test_series_conservation_across_bucket_widths(publish_small):
    reader = HistoryReader(publish_small["model"])
    events = list(load_events(publish_small["merged"]))
    sent = sum(e.attrs["bytes"] for e in events if e.name == "cluster_send")
    ms = bus_volume_series(reader, 1_000_000, "out")
    s = bus_volume_series(reader, 1_000_000_000, "out")
    assert ms.total() == sent
    assert s.total() == sent
    ingress = sum(
        e.attrs.get("bytes", 0)
        for e in events
        if e.name == "end_read_client_query" and e.host == "n1"
    )
    assert bus_volume_series(reader, 1_000_000, "in").total() == ingress


def test_empty_model_rejected(tmp_path):
    from storetrace.sht import HistoryWriter
    from storetrace.statesys import StateSystem

    writer = HistoryWriter(tmp_path / "e.sht", tree_start=0)
    StateSystem(writer).close_all(0)
    reader = HistoryReader(tmp_path / "e.sht")
    with pytest.raises(EmptyModel):
        bus_volume_series(reader, 1_000_000, "out")


def test_amplification_ratio_ten(tmp_path):
    config = ScenarioConfig(requests=300, payload=1024, gossip_header=4096)
    merged, reader, gt = _scenario(tmp_path, config)
    s_in = bus_volume_series(reader, 1_000_000, "in")
    s_out = bus_volume_series(reader, 1_000_000, "out")
    fanout = fanout_stats(collect(merged).sends)
    findings = detect_bus_amplification(s_in, s_out, threshold_ratio=2.0, fanout=fanout)
    assert len(findings) == 1
    f = findings[0]
    assert f.severity == "critical"
    assert f.evidence["ratio"] == pytest.approx(10.0, rel=0.05)
    assert f.evidence["max_fanout"] == 2
    assert f.kind == "BusAmplification"


def test_amplification_closed_form(tmp_path):
    config = ScenarioConfig(requests=1000, payload=10240, gossip_header=2048, nodes=3)
    merged, reader, gt = _scenario(tmp_path, config)
    s_in = bus_volume_series(reader, 1_000_000, "in")
    s_out = bus_volume_series(reader, 1_000_000, "out")
    measured = s_out.total() / s_in.total()
    expected = (config.nodes - 1) * (config.payload + config.gossip_header) / config.payload
    assert measured == pytest.approx(expected, rel=0.01)


def test_amplification_no_finding_when_balanced():
    s_in = Series("in", 1000, 0, [100.0, 100.0, 100.0])
    s_out = Series("out", 1000, 0, [100.0, 100.0, 100.0])
    assert detect_bus_amplification(s_in, s_out) == []


def test_double_free_scenario_exactly_one_finding(ssl_fixture):
    findings = detect_double_free(load_events(ssl_fixture["merged"]))
    crit = [f for f in findings if f.severity == "critical"]
    assert len(crit) == 1
    assert len(findings) == 1
    gt_fault = ssl_fixture["gt"]["faults"]["double_free"]
    assert sorted(crit[0].evidence["tids"]) == sorted(gt_fault["tids"])
    assert crit[0].evidence["fd"] == 132
    assert [crit[0].t0, crit[0].t1] == gt_fault["free_ts"]


def test_double_free_control_clean(tmp_path):
    merged, _reader, _ = _scenario(tmp_path, ScenarioConfig(), gen_ssl_double_free)
    assert detect_double_free(load_events(merged)) == []


def test_double_free_pattern_not_value_sensitive(tmp_path):
    events = []
    seq = 1
    for nbytes in (4096, 50, 7):
        events.append(make_event(100 + seq, "ssl_read", seq=seq, fd=9,
                                 bytes_requested=8192, bytes_read=nbytes, pending=1))
        seq += 1
        events.append(make_event(100 + seq, "run_pending_reads", seq=seq))
        seq += 1
    for tid in (11, 12):
        events.append(make_event(100 + seq, "ssl_read", seq=seq, tid=tid, fd=9,
                                 bytes_requested=8192, bytes_read=-1, pending=0))
        seq += 1
        events.append(make_event(100 + seq, "free_client", seq=seq, tid=tid, fd=9))
        seq += 1
    findings = detect_double_free(events)
    assert len(findings) == 1
    assert findings[0].severity == "critical"
    assert findings[0].evidence["tids"] == [11, 12]


def test_free_reconnect_free_is_clean():
    rows = [
        (100, "start_read_client_query", 1, {"fd": 5}),
        (110, "free_client", 1, {"fd": 5}),
        (120, "start_read_client_query", 1, {"fd": 5}),
        (130, "free_client", 1, {"fd": 5}),
    ]
    events = [make_event(ts, n, seq=i + 1, tid=tid, **a)
              for i, (ts, n, tid, a) in enumerate(rows)]
    assert detect_double_free(events) == []


def test_duplicate_list_add_warns():
    events = [
        make_event(100, "ssl_read", seq=1, tid=11, fd=9,
                   bytes_requested=8192, bytes_read=100, pending=1),
        make_event(105, "ssl_read", seq=2, tid=12, fd=9,
                   bytes_requested=8192, bytes_read=100, pending=1),
    ]
    findings = detect_double_free(events)
    assert len(findings) == 1
    assert findings[0].severity == "warn"
    assert findings[0].evidence["first_add_tid"] == 11
    assert findings[0].evidence["second_add_tid"] == 12


def test_no_false_positives_on_default_scenarios(tmp_path, publish_small, ssl_fixture):
    assert detect_double_free(load_events(publish_small["merged"])) == []


def test_read_stall_detected_with_burst(tmp_path):
    config = ScenarioConfig(requests=200, faults=frozenset({FAULT_READ_STALL}))
    merged, reader, gt = _scenario(tmp_path, config)
    s_out = bus_volume_series(reader, 1_000_000, "out")
    findings = detect_read_stall(reader, s_out)
    assert len(findings) == 1
    f = findings[0]
    assert f.severity == "warn"
    assert f.evidence["duration_ns"] >= config.stall_ns
    assert "Threads/n2:" in f.paths[0]


def test_read_stall_flat_volume_is_info(tmp_path):
    rows = [
        (100, "cluster_read", {"msg_id": 1, "fd": 500, "conn_type": "cluster"}),
        (200, "cluster_process_packet", {"msg_id": 1}),
        (300, "cluster_read", {"msg_id": 2, "fd": 500, "conn_type": "cluster"}),
        (50_000_000, "cluster_process_packet", {"msg_id": 2}),
    ]
    events = [make_event(ts, n, seq=i + 1, **a) for i, (ts, n, a) in enumerate(rows)]
    from storetrace.sht import HistoryWriter
    from storetrace.statesys import StateSystem
    from storetrace.analysis import analyze

    writer = HistoryWriter(tmp_path / "m.sht", tree_start=100)
    analyze(events, StateSystem(writer))
    reader = HistoryReader(tmp_path / "m.sht")
    flat = Series("bus_volume_out", 1_000_000, 100, [10.0] * 51)
    findings = detect_read_stall(reader, flat, stall_threshold_ns=1_000_000)
    assert len(findings) == 1
    assert findings[0].severity == "info"


def test_read_stall_none_when_uniform(publish_small):
    reader = HistoryReader(publish_small["model"])
    s_out = bus_volume_series(reader, 1_000_000, "out")
    assert detect_read_stall(reader, s_out) == []


def test_latency_exact_mean_for_deterministic_service_time(publish_small):
    reader = HistoryReader(publish_small["model"])
    report = latency_report(reader)
    stats = report["publish"]
    assert stats["count"] == 120
    assert stats["mean_ns"] == 100_000.0
    assert stats["p50_ns"] == 100_000
    assert stats["p99_ns"] == 100_000


def test_latency_groups_per_command(tmp_path):
    config = ScenarioConfig(requests=10, commands=("get", "set", "subscribe", "publish"))
    merged, reader, gt = _scenario(tmp_path, config)
    report = latency_report(reader)
    assert sorted(report) == ["get", "publish", "set", "subscribe"]
    for stats in report.values():
        assert stats["count"] == 10


def test_latency_ssl_background_only(tmp_path):
    merged, reader, _ = _scenario(
        tmp_path, ScenarioConfig(), gen_ssl_double_free
    )
    report = latency_report(reader)
    assert list(report) == ["get"]  # just the background request


def test_latency_zero_commands(tmp_path):
    from storetrace.sht import HistoryWriter
    from storetrace.statesys import StateSystem
    from storetrace.analysis import analyze

    events = [make_event(100, "add_file_event", seq=1), make_event(110, "delete_file_event", seq=2)]
    writer = HistoryWriter(tmp_path / "m.sht", tree_start=100)
    analyze(events, StateSystem(writer))
    assert latency_report(HistoryReader(tmp_path / "m.sht")) == {}
