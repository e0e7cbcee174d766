import json
from pathlib import Path

import pytest

from storetrace import pipeline
from storetrace.gen import ScenarioConfig, gen_cluster_publish, write_scenario


def make_event(ts, name, host="n1", tid=1, seq=1, **attrs):
    from storetrace.events import TraceEvent

    return TraceEvent(ts=ts, host=host, tid=tid, seq=seq, name=name, attrs=attrs)


def load_gt(trace_dir):
    return json.loads((Path(trace_dir) / "ground_truth.json").read_text())


def gauge_shift(gt, offsets):
    """Merged timelines are expressed on the reference host's clock; ground
    truth times are true times. Returns the constant to add to ground truth."""
    ref = offsets.reference_host
    return -gt["offsets"].get(ref, 0)


def run_pipeline(trace_dir, workdir, sync=True):
    """gen output dir -> (merged path, model path, offsets)."""
    workdir = Path(workdir)
    merged = workdir / "merged.jsonl"
    model = workdir / "model.sht"
    offsets = pipeline.merge_streams(trace_dir, merged, sync=sync)
    pipeline.analyze_file(merged, model)
    return merged, model, offsets


@pytest.fixture(scope="session")
def publish_small(tmp_path_factory):
    """3-node publish scenario, 120 requests, no faults, no offsets."""
    root = tmp_path_factory.mktemp("publish_small")
    config = ScenarioConfig(requests=120, clients=3)
    streams, gt = gen_cluster_publish(config)
    trace_dir = write_scenario(streams, gt, root / "trace")
    merged, model, offsets = run_pipeline(trace_dir, root)
    return {
        "dir": trace_dir,
        "merged": merged,
        "model": model,
        "offsets": offsets,
        "gt": load_gt(trace_dir),
        "config": config,
    }


@pytest.fixture(scope="session")
def ssl_fixture(tmp_path_factory):
    from storetrace.gen import FAULT_DOUBLE_FREE, gen_ssl_double_free

    root = tmp_path_factory.mktemp("ssl")
    config = ScenarioConfig(faults=frozenset({FAULT_DOUBLE_FREE}))
    streams, gt = gen_ssl_double_free(config)
    trace_dir = write_scenario(streams, gt, root / "trace")
    merged, model, offsets = run_pipeline(trace_dir, root)
    return {
        "dir": trace_dir,
        "merged": merged,
        "model": model,
        "offsets": offsets,
        "gt": load_gt(trace_dir),
    }
