import json

import pytest

from lambdalab.jsonvalue import freeze
from lambdalab.workload import Event, Workload, WorkloadError, load_workload, parse_workload


def test_list_and_object_forms():
    a = parse_workload([{"function": "echo", "payload": 1}])
    b = parse_workload({"events": [{"function": "echo", "payload": 1}], "store": {"k": 2}})
    assert a.events == b.events == (Event("echo", 1),)
    assert b.store == freeze({"k": 2}) and a.store is None


def test_events_are_released_by_earliest_step():
    wl = parse_workload([
        {"function": "a", "earliest_step": 3},
        {"function": "b", "earliest-step": 0},
    ])
    assert [e.target for e in wl.ordered] == ["b", "a"]
    assert wl.horizon == 3


@pytest.mark.parametrize("bad, message", [
    ("nope", "list of events"),
    ([1], "expected an object"),
    ([{"payload": 1}], "needs 'function' or 'program'"),
    ([{"function": "f", "earliest_step": -1}], "nonnegative"),
    ({"events": [], "store": [1]}, "store seed"),
    ([{"program": "p.spl"}], "not supported"),
])
def test_malformed_workloads(bad, message):
    with pytest.raises(WorkloadError, match=message):
        parse_workload(bad)


def test_program_events_resolve_relative_to_the_file(tmp_path):
    (tmp_path / "p.spl").write_text("ret in;")
    (tmp_path / "w.json").write_text(json.dumps([{"program": "p.spl", "payload": 3}]))
    seen = []
    wl = load_workload(tmp_path / "w.json", lambda path: seen.append(path) or "parsed")
    assert seen == [tmp_path / "p.spl"] and wl.events[0].program == "parsed"


def test_unreadable_files(tmp_path):
    with pytest.raises(WorkloadError):
        load_workload(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(WorkloadError):
        load_workload(tmp_path / "bad.json")


def test_length():
    assert len(Workload((Event("a", 1), Event("b", 2)))) == 2
