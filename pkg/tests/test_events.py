import io
import json
import random

import pytest

from storetrace.events import (
    MalformedLine,
    NonMonotoneSeq,
    SchemaViolation,
    TraceEvent,
    TraceFormatError,
    event_to_line,
    parse_stream,
    read_events,
    write_stream,
)


def _line(**over):
    obj = {"ts": 100, "host": "n1", "tid": 7, "seq": 1,
           "name": "start_read_client_query", "attrs": {"fd": 72}}
    obj.update(over)
    return json.dumps(obj)


def test_parse_single_event():
    stream = parse_stream(io.StringIO(_line()))
    assert len(stream) == 1
    ev = stream.events[0]
    assert ev.attrs["fd"] == 72
    assert ev.host == "n1"
    assert ev.tid == 7


def test_empty_file_is_empty_stream():
    stream = parse_stream(io.StringIO(""))
    assert stream.events == []
    assert stream.host == ""


def test_seq_regression_rejected():
    text = _line(seq=2) + "\n" + _line(ts=101, seq=1)
    with pytest.raises(NonMonotoneSeq):
        parse_stream(io.StringIO(text))


def test_ts_regression_rejected():
    text = _line(ts=100, seq=1) + "\n" + _line(ts=99, seq=2)
    with pytest.raises(NonMonotoneSeq):
        parse_stream(io.StringIO(text))


def test_host_mix_rejected():
    text = _line() + "\n" + _line(host="n2", seq=2)
    with pytest.raises(MalformedLine):
        parse_stream(io.StringIO(text))


def test_unknown_name_passes_through():
    line = _line(name="java_gc_pause", attrs={"heap": 12, "note": "x"})
    stream = parse_stream(io.StringIO(line))
    assert stream.events[0].name == "java_gc_pause"
    assert stream.events[0].attrs == {"heap": 12, "note": "x"}


def test_legacy_write_end_alias():
    line = _line(name="write_to_end_start", attrs={"fd": 3})
    stream = parse_stream(io.StringIO(line))
    assert stream.events[0].name == "write_to_client_end"


def test_missing_required_attr():
    with pytest.raises(SchemaViolation):
        parse_stream(io.StringIO(_line(attrs={})))


def test_wrong_attr_type():
    with pytest.raises(SchemaViolation):
        parse_stream(io.StringIO(_line(attrs={"fd": "72"})))


def test_bool_attr_rejected():
    with pytest.raises(MalformedLine):
        parse_stream(io.StringIO(_line(attrs={"fd": 72, "flag": True})))


def test_extra_key_rejected():
    obj = json.loads(_line())
    obj["extra"] = 1
    with pytest.raises(MalformedLine):
        parse_stream(io.StringIO(json.dumps(obj)))


def test_negative_ts_rejected():
    with pytest.raises(MalformedLine):
        parse_stream(io.StringIO(_line(ts=-1)))


def test_error_reports_line_number():
    text = _line() + "\nnot json\n"
    with pytest.raises(MalformedLine) as err:
        parse_stream(io.StringIO(text))
    assert err.value.line == 2


def test_round_trip_single():
    stream = parse_stream(io.StringIO(_line()))
    out = io.StringIO()
    write_stream(stream.events, out)
    again = parse_stream(io.StringIO(out.getvalue()))
    assert again.events == stream.events


def test_round_trip_ten_thousand_events_byte_identical():
    rng = random.Random(42)
    events = []
    names = ["start_read_client_query", "free_client", "custom_probe"]
    for seq in range(1, 10_001):
        name = names[rng.randrange(3)]
        attrs = {"fd": rng.randrange(1000)}
        if name == "custom_probe":
            attrs = {"x": rng.random(), "label": f"v{rng.randrange(50)}"}
        events.append(
            TraceEvent(ts=seq * 10, host="n1", tid=5, seq=seq, name=name, attrs=attrs)
        )
    first = io.StringIO()
    write_stream(events, first)
    parsed = parse_stream(io.StringIO(first.getvalue()))
    second = io.StringIO()
    write_stream(parsed.events, second)
    assert first.getvalue() == second.getvalue()
    assert parsed.events == events


def test_fuzzed_lines_never_crash_with_unexpected_errors():
    rng = random.Random(7)
    pieces = ['{', '}', '"ts"', ':', '1', ',', '"host": "a"', '[', ']',
              'null', 'true', '1.5', '"name"', '"attrs"', '"x"']
    for _ in range(500):
        line = "".join(rng.choice(pieces) for _ in range(rng.randrange(1, 12)))
        try:
            list(read_events(io.StringIO(line)))
        except TraceFormatError:
            pass  # the only acceptable failure mode


def test_canonical_line_key_order():
    ev = TraceEvent(ts=1, host="h", tid=2, seq=3, name="n", attrs={"b": 1, "a": 2})
    line = event_to_line(ev)
    assert line.startswith('{"ts":1,"host":"h","tid":2,"seq":3,"name":"n"')


def test_parsing_is_lazy_single_pass():
    # the streaming readers must not slurp the input up front
    consumed = []

    def lines():
        for seq in range(1, 6):
            consumed.append(seq)
            yield _line(ts=seq * 10, seq=seq)

    class FakeFile:
        def __init__(self):
            self._it = lines()

        def __iter__(self):
            return self._it

        def read(self):  # satisfies the file-object probe
            return ""

    events = read_events(FakeFile())
    next(events)
    assert consumed == [1]
    next(events)
    assert consumed == [1, 2]
