import json

import pytest

from storetrace.events import parse_stream
from storetrace.gen import (
    FAULT_AMPLIFICATION,
    FAULT_DOUBLE_FREE,
    FAULT_TRUNCATE,
    ConfigInvalid,
    ScenarioConfig,
    gen_cluster_publish,
    gen_microservices,
    gen_ssl_double_free,
    write_scenario,
)


def test_identical_configs_identical_bytes(tmp_path):
    config = ScenarioConfig(requests=25)
    for sub in ("a", "b"):
        streams, gt = gen_cluster_publish(config)
        write_scenario(streams, gt, tmp_path / sub)
    for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_streams_are_valid_and_ordered(tmp_path):
    streams, gt = gen_cluster_publish(ScenarioConfig(requests=30, offsets={"n2": 10_000}))
    out = write_scenario(streams, gt, tmp_path / "t")
    for path in out.glob("*.jsonl"):
        parsed = parse_stream(path)  # raises on order/schema violations
        assert parsed.host == path.stem


def test_every_start_has_an_end_and_every_send_a_read():
    streams, _gt = gen_cluster_publish(ScenarioConfig(requests=40))
    events = [e for evs in streams.values() for e in evs]
    starts = sum(1 for e in events if e.name == "start_read_client_query")
    ends = sum(1 for e in events if e.name == "end_read_client_query")
    sends = [e for e in events if e.name == "cluster_send" and e.attrs["kind"] == "broadcast"]
    reads = [e for e in events if e.name == "cluster_read"]
    assert starts == ends == 40
    read_ids = {(e.host, e.attrs["msg_id"]) for e in reads}
    for send in sends:
        assert (send.attrs["dst"], send.attrs["msg_id"]) in read_ids


def test_truncation_drops_one_read():
    config = ScenarioConfig(requests=10, faults=frozenset({FAULT_TRUNCATE}))
    _streams, gt = gen_cluster_publish(config)
    incomplete = [f for f in gt.flows if not f["complete"]]
    assert len(incomplete) == 1


def test_single_node_has_no_cluster_traffic():
    streams, gt = gen_cluster_publish(ScenarioConfig(nodes=1, requests=5))
    events = [e for evs in streams.values() for e in evs]
    assert not [e for e in events if e.name.startswith("cluster")]
    assert gt.expected_out_in_ratio is None


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        ScenarioConfig(nodes=0).check()
    with pytest.raises(ConfigInvalid):
        ScenarioConfig(nodes=1, faults=frozenset({FAULT_AMPLIFICATION})).check()
    with pytest.raises(ConfigInvalid):
        ScenarioConfig(faults=frozenset({"NoSuchFault"})).check()
    with pytest.raises(ConfigInvalid):
        ScenarioConfig(gap_ns=1_000).check()


def test_ratio_target_math():
    # (N-1)(V+H)/V = 10 for N=3, V=1024, H=4096
    config = ScenarioConfig(
        requests=50, payload=1024, gossip_header=4096,
        faults=frozenset({FAULT_AMPLIFICATION}),
    )
    _, gt = gen_cluster_publish(config)
    assert gt.expected_out_in_ratio == pytest.approx(10.0, rel=0.01)


def test_ssl_scenario_fault_vs_control():
    with_fault, gt = gen_ssl_double_free(
        ScenarioConfig(faults=frozenset({FAULT_DOUBLE_FREE}))
    )
    control, gt_control = gen_ssl_double_free(ScenarioConfig())
    n_frees = sum(1 for e in with_fault["n1"] if e.name == "free_client")
    n_frees_control = sum(1 for e in control["n1"] if e.name == "free_client")
    assert n_frees == 2 and n_frees_control == 1
    assert "double_free" in gt.faults and not gt_control.faults
    sizes = [e.attrs["bytes_read"] for e in with_fault["n1"] if e.name == "ssl_read"]
    assert sizes == [8192, 101, 18, -1, -1]


def test_microservices_span_count_and_offsets(tmp_path):
    config = ScenarioConfig(requests=8, offsets={"user": 3_000_000})
    streams, gt = gen_microservices(config)
    # per request: 6 spans, plus a redis client span on the user path
    assert len(gt.spans) == 8 * 6 + 4
    assert len(gt.flows) == 4
    out = write_scenario(streams, gt, tmp_path / "ms")
    data = json.loads((out / "ground_truth.json").read_text())
    assert data["offsets"] == {"user": 3_000_000}
