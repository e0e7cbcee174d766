import json
import urllib.request
import urllib.error

import pytest

from storetrace.pipeline import build_spans_file, detect_all
from storetrace.server import ModelService, merge_for_resolution, start_background
from storetrace.sht import HistoryReader, StateInterval


@pytest.fixture(scope="module")
def api(ssl_fixture):
    reader = HistoryReader(ssl_fixture["model"])
    forest, flows = build_spans_file(ssl_fixture["merged"])
    service = ModelService(reader)
    service.flows_json = flows.to_json()
    service.spans_json = forest.to_json()
    service.findings = detect_all(reader, ssl_fixture["merged"])
    httpd, base = start_background(service)
    yield {"base": base, "reader": reader, "service": service}
    httpd.shutdown()


def _get(base, path):
    with urllib.request.urlopen(base + path, timeout=10) as resp:
        return json.loads(resp.read())


def test_tree_lists_paths(api):
    tree = _get(api["base"], "/api/tree")
    assert "Threads/n1:11/Operation" in tree["paths"]
    assert tree["tree_start"] < tree["tree_end"]


def test_states_equal_direct_query(api):
    reader = api["reader"]
    path = "Threads/n1:11/Operation"
    quark = reader.quark(path)
    t0, t1 = reader.tree_start, reader.tree_end
    got = _get(api["base"], f"/api/states?path={path}&t0={t0}&t1={t1}")
    direct = [
        {"t0": iv.start, "t1": iv.end, "value": iv.value}
        for iv in reader.query_range(quark, t0, t1)
    ]
    assert got["intervals"] == direct
    assert any(iv["value"] == "FREEING CLIENT" for iv in got["intervals"])


def test_series_endpoint(api):
    out = _get(api["base"], "/api/series?metric=bus_volume_out&bucket_ns=1000000")
    assert out["name"] == "bus_volume_out"
    assert sum(out["values"]) == 0  # single node, no bus traffic


def test_flows_index_and_single(api):
    from urllib.parse import quote

    index = _get(api["base"], "/api/flows")
    assert len(index["flows"]) == 1
    fid = index["flows"][0]["id"]
    one = _get(api["base"], f"/api/flows?id={quote(fid, safe='')}")
    assert one["id"] == fid
    assert one["segments"]


def test_findings_endpoint(api):
    findings = _get(api["base"], "/api/findings")
    assert [f["kind"] for f in findings] == ["DoubleFree"]
    assert findings[0]["severity"] == "critical"


def test_spans_endpoint_empty_for_store_only_trace(api):
    spans = _get(api["base"], "/api/spans")
    assert spans["spans"] == []


def test_unknown_path_404(api):
    with pytest.raises(urllib.error.HTTPError) as err:
        _get(api["base"], "/api/states?path=Nope/x")
    assert err.value.code == 404
    body = json.loads(err.value.read())
    assert "error" in body


def test_bad_range_400(api):
    reader = api["reader"]
    with pytest.raises(urllib.error.HTTPError) as err:
        _get(
            api["base"],
            f"/api/states?path=Bus/Volume&t0={reader.tree_end + 5}&t1={reader.tree_end + 9}",
        )
    assert err.value.code == 400


def test_unknown_route_404(api):
    with pytest.raises(urllib.error.HTTPError) as err:
        _get(api["base"], "/api/nope")
    assert err.value.code == 404


def test_resolution_merging_preserves_bounds():
    ivs = [
        StateInterval(0, 0, 1000, "big"),
        StateInterval(0, 1000, 1001, "a"),
        StateInterval(0, 1001, 1002, "b"),
        StateInterval(0, 1002, 1004, "b"),
        StateInterval(0, 1004, 2000, "big2"),
    ]
    merged = merge_for_resolution(ivs, 0, 2000, 10)  # pixel width 200
    assert [(iv.start, iv.end) for iv in merged] == [(0, 1000), (1000, 1004), (1004, 2000)]
    assert merged[1].value == "b"  # dominant by duration


def test_resolution_zero_is_identity():
    ivs = [StateInterval(0, 0, 5, "x")]
    assert merge_for_resolution(ivs, 0, 5, 0) == ivs
