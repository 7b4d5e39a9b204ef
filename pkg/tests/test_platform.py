from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lambdalab.jsonvalue import EMPTY_OBJECT, freeze
from lambdalab.models import BANK_TX_REQUESTS, EndTx, enumerate_states, get_model, model_bank_tx, tx_key
from lambdalab.platform import (
    FREE,
    Configuration,
    FaultBudget,
    Instance,
    Owned,
    Platform,
    Request,
    StaleTransition,
    Store,
    stops_per_request,
)
from lambdalab.trace import (
    BudgetExceeded,
    Exhaustive,
    Random,
    Script,
    ScriptError,
    Start,
    Stop,
    observable_project,
)
from lambdalab.workload import requests

ECHO = get_model("echo")


def rules_of(platform, config, workload, budget=FaultBudget()):
    return [t.rule for t in platform.enabled(config, workload, budget)]


def test_request_release_is_observable():
    p = Platform([ECHO])
    wl = requests("echo", 5)
    (t,) = p.enabled(p.initial(wl), wl, FaultBudget())
    assert t.rule == "Req" and t.label == Start("echo", 1, 5)
    assert t.next.requests == [Request("echo", 1, 5)] and t.next.next_x == 2


def test_cold_and_warm_starts():
    p = Platform([ECHO])
    wl = requests("echo", 1, 2)
    trace = p.run(None, wl, Script(("Req", "Cold", "Resp", "Req")), FaultBudget())
    assert Counter(rules_of(p, trace.final, wl)) == Counter({"Cold": 1, "Warm": 1})


def test_resp_consumes_request_and_idles_instance():
    p = Platform([ECHO])
    wl = requests("echo", 4)
    trace = p.run(None, wl, Script(("Req", "Cold", "Resp")), FaultBudget())
    final = trace.final
    assert trace.labels[-1] == Stop(1, 4)
    assert final.requests == [] and final.response(1).v == 4
    assert [i.idle for i in final.instances] == [True]


def test_instance_cap_limits_cold_starts():
    p = Platform([ECHO])
    wl = requests("echo", 1)
    budget = FaultBudget(max_instances_per_request=1)
    trace = p.run(None, wl, Script(("Req", "Cold")), budget)
    assert "Cold" not in rules_of(p, trace.final, wl, budget)


def test_die_respects_budget():
    p = Platform([ECHO])
    wl = requests("echo", 1)
    trace = p.run(None, wl, Script(("Req", "Cold", "Die")), FaultBudget(die=1))
    assert trace.final.instances == [] and trace.final.dies == 1
    assert "Die" not in rules_of(p, p.run(None, wl, Script(("Req", "Cold")), FaultBudget()).final, wl)


def test_apply_rejects_stale_transitions():
    p = Platform([ECHO])
    wl = requests("echo", 1)
    config = p.initial(wl)
    (req,) = p.enabled(config, wl, FaultBudget())
    after = p.apply(config, req, wl, FaultBudget())
    with pytest.raises(StaleTransition):
        p.apply(after, req, wl, FaultBudget())


def test_script_errors_name_the_step():
    p = Platform([ECHO])
    with pytest.raises(ScriptError, match="step 2"):
        p.run(None, requests("echo", 1), Script(("Req", "Warm")), FaultBudget())
    with pytest.raises(ScriptError, match="out of range"):
        p.run(None, requests("echo", 1), Script((3,)), FaultBudget())


def test_transaction_rules():
    bank = model_bank_tx()
    p = Platform([bank])
    wl = requests("bank-tx", BANK_TX_REQUESTS[0])
    trace = p.run(None, wl, Script(("Req", "Cold", "BeginTx")), FaultBudget())
    lock = trace.final.store.lock
    assert isinstance(lock, Owned) and lock.y == 1 and lock.snapshot == EMPTY_OBJECT
    trace = p.run(None, wl, Random(3), FaultBudget())
    store = trace.final.store
    assert store.lock == FREE and store.committed[tx_key("t1")] is True


def test_drop_tx_when_owner_is_gone():
    bank = model_bank_tx()
    p = Platform([bank])
    wl = requests("bank-tx", BANK_TX_REQUESTS[0])
    trace = p.run(None, wl, Script(("Req", "Cold", "BeginTx", "Read", "Die")), FaultBudget(die=1))
    assert isinstance(trace.final.store.lock, Owned)
    (drop,) = [t for t in p.enabled(trace.final, wl, FaultBudget(die=1)) if t.rule == "DropTx"]
    after = drop.next.store
    assert after.lock == FREE and after.committed == trace.final.store.committed


def test_end_tx_commits_snapshot():
    config = Configuration(
        (Instance("bank-tx", 1, None, 1),),
        Store(EMPTY_OBJECT, Owned(1, freeze({"k": 1}))),
    )
    bank = model_bank_tx()
    # swap in a state whose next command is EndTx
    state = next(s for s in enumerate_states(bank)
                 if bank.step_of(s) is not None and isinstance(bank.step_of(s)[1], EndTx))
    config = config.evolve([config.components[0]], [Instance("bank-tx", 1, state, 1)])
    p = Platform([bank])
    (t,) = [t for t in p.enabled(config, requests("bank-tx"), FaultBudget()) if t.rule == "EndTx"]
    assert t.next.store == Store(freeze({"k": 1}), FREE)


def test_digest_ignores_component_order():
    a = Configuration((Request("echo", 1, 1), Request("echo", 2, 2)))
    b = Configuration((Request("echo", 2, 2), Request("echo", 1, 1)))
    assert a == b and a.digest == b.digest


def test_exhaustive_traces_are_maximal_or_truncated():
    p = Platform([ECHO])
    traces = p.run(None, requests("echo", 1), Exhaustive(6), FaultBudget(die=1))
    assert traces
    for t in traces:
        assert t.truncated or not p.enabled(t.final, requests("echo", 1), FaultBudget(die=1)) or \
            len(t.steps) == 6


def test_node_limit_raises():
    p = Platform([ECHO])
    with pytest.raises(BudgetExceeded):
        p.explore(requests("echo", 1, 2), FaultBudget(die=1), 20, node_limit=10)


def test_observable_projection_filters_one_request():
    labels = [Start("f", 1, 1), Start("f", 2, 2), Stop(1, "w")]
    assert observable_project(labels, 1) == [Start("f", 1, 1), Stop(1, "w")]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32), die=st.integers(0, 2), name=st.sampled_from(["echo", "counter", "auth-cache"]))
def test_random_runs_answer_each_request_at_most_once(seed, die, name):
    model = get_model(name)
    wl = requests(name, *model.requests[:2])
    trace = Platform([model]).run(None, wl, Random(seed, 300), FaultBudget(die=die))
    assert all(c <= 1 for c in stops_per_request(trace).values())
    starts = [lab.x for lab in trace.labels if isinstance(lab, Start)]
    assert starts == sorted(starts) == list(range(1, len(starts) + 1))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32))
def test_random_runs_are_reproducible(seed):
    p = Platform([model_bank_tx()])
    wl = requests("bank-tx", *BANK_TX_REQUESTS)
    a = p.run(None, wl, Random(seed), FaultBudget(die=1))
    b = p.run(None, wl, Random(seed), FaultBudget(die=1))
    assert a.records() == b.records()
    replay = p.run(None, wl, Script(tuple(a.choices)), FaultBudget(die=1))
    assert replay.records() == a.records()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32))
def test_committed_results_match_replies(seed):
    bank = model_bank_tx()
    wl = requests("bank-tx", BANK_TX_REQUESTS[0], BANK_TX_REQUESTS[0])
    trace = Platform([bank]).run(None, wl, Random(seed), FaultBudget(die=2))
    committed = trace.final.store.committed
    for lab in trace.labels:
        if isinstance(lab, Stop):
            assert committed[tx_key("t1")] == lab.v
