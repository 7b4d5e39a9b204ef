from hypothesis import given, settings
from hypothesis import strategies as st

from lambdalab.jsonvalue import freeze
from lambdalab.models import BANK_TX_REQUESTS, get_model, model_bank_tx, tx_key
from lambdalab.naive import (
    ABSENT,
    Committed,
    FreshRequestClass,
    Held,
    NaiveSemantics,
    NonConforming,
    ReplayClass,
    classify_requests,
    classify_trace,
    is_complete,
    naive_initial,
    naive_run,
)
from lambdalab.trace import Exhaustive, Random, Script, Start, Stop
from lambdalab.workload import requests

import pytest


def test_echo_runs_start_internal_stop():
    trace = naive_run(get_model("echo"), requests("echo", 4), Random(0))
    assert trace.rules == ["N-Start", "N-Buffer-Stop", "N-Emit-Stop"]
    assert trace.labels[0] == Start("echo", 1, 4) and trace.labels[-1] == Stop(1, 4)
    assert is_complete(trace)


def test_one_request_at_a_time():
    model = get_model("echo")
    wl = requests("echo", 1, 2)
    sem = NaiveSemantics(model)
    config = naive_initial(model, wl)
    (start,) = sem.enabled(config, wl)
    assert [t.rule for t in sem.enabled(start.next, wl)] == ["N-Buffer-Stop"]


def test_buffered_replies_may_be_emitted_late():
    model = get_model("echo")
    wl = requests("echo", 1, 2)
    trace = naive_run(model, wl, Script(("N-Start", "N-Buffer-Stop", "N-Start", "N-Buffer-Stop", "N-Emit-Stop#1",
                                         "N-Emit-Stop")))
    assert [lab.x for lab in trace.labels if isinstance(lab, Stop)] == [2, 1]


def test_counter_restarts_from_the_initial_state():
    model = get_model("counter")
    trace = naive_run(model, requests("counter", 1, 2, 3), Random(5))
    assert sorted(lab.v for lab in trace.labels if isinstance(lab, Stop)) == [1, 1, 1]


def test_transaction_holds_then_commits():
    bank = model_bank_tx()
    wl = requests("bank-tx", BANK_TX_REQUESTS[0])
    trace = naive_run(bank, wl, Random(1))
    locks = [type(s.state.lock) for s in trace.steps]
    assert Held in locks and Committed in locks
    assert trace.final.lock == ABSENT
    assert trace.final.store[tx_key("t1")] is True
    assert trace.labels[-1] == Stop(1, True)


def test_rollback_restores_the_pre_transaction_history():
    bank = model_bank_tx()
    wl = requests("bank-tx", BANK_TX_REQUESTS[0])
    sem = NaiveSemantics(bank, rollback_budget=1)
    trace = naive_run(bank, wl, Script(("N-Start", "N-BeginTx", "N-Read", "N-Rollback")), rollback_budget=1)
    before = trace.steps[0].state
    after = trace.final
    assert after.lock == ABSENT and after.state.history == before.state.history
    assert "N-Rollback" not in [t.rule for t in sem.enabled(after, wl)]


def test_candidate_stores_choose_the_transaction_snapshot():
    bank = model_bank_tx()
    wl = requests("bank-tx", BANK_TX_REQUESTS[0])
    stores = [freeze({}), freeze({tx_key("t1"): True})]
    sem = NaiveSemantics(bank, stores)
    config = sem.enabled(naive_initial(bank, wl), wl)[0].next
    begins = [t for t in sem.enabled(config, wl) if t.rule == "N-BeginTx"]
    assert len(begins) == 2


def test_exhaustive_bank_traces_are_classified():
    bank = model_bank_tx()
    wl = requests("bank-tx", BANK_TX_REQUESTS[0], BANK_TX_REQUESTS[0])
    traces = [t for t in naive_run(bank, wl, Exhaustive(60), rollback_budget=1) if is_complete(t)]
    seen = set()
    for t in traces:
        classes = classify_requests(t, bank)
        assert classes[1] == FreshRequestClass(1)
        assert classes[2] == ReplayClass(2)
        seen.add(classify_trace(t, bank, 2))
    assert seen == {ReplayClass(2)}


def test_stuck_mutant_is_nonconforming():
    model = model_bank_tx(mutation="write-before-tx")
    trace = naive_run(model, requests(model.name, BANK_TX_REQUESTS[0]), Random(0))
    cls = classify_trace(trace, model)
    assert isinstance(cls, NonConforming) and "Write" in cls.reason


def test_classification_requires_a_store_model():
    from lambdalab.naive import NotApplicable

    with pytest.raises(NotApplicable):
        classify_requests(naive_run(get_model("echo"), requests("echo", 1)), get_model("echo"))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), pair=st.sampled_from([(0, 0), (0, 1), (1, 0), (1, 1)]))
def test_random_naive_runs_conform(seed, pair):
    bank = model_bank_tx()
    wl = requests("bank-tx", *(BANK_TX_REQUESTS[i] for i in pair))
    trace = naive_run(bank, wl, Random(seed), rollback_budget=2)
    if is_complete(trace):
        for cls in classify_requests(trace, bank).values():
            assert isinstance(cls, (FreshRequestClass, ReplayClass))
