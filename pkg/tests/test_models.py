import pytest

from lambdalab.jsonvalue import JsonObject, freeze
from lambdalab.models import (
    BANK_TX_REQUESTS,
    CATALOG,
    DEFAULT_DATABASE,
    EQUALITY,
    MUTATIONS,
    BeginTx,
    EndTx,
    Epsilon,
    Read,
    Return,
    UnsupportedModel,
    Write,
    account_key,
    enumerate_states,
    function_registry,
    get_model,
    get_relation,
    model_auth_cache,
    model_bank_tx,
    model_process_id,
    same_command,
    tx_key,
)


def drive(model, v, reads=None, tag=None, limit=50):
    """Run one request to its Return, answering reads from ``reads``."""
    reads = reads or {}
    state = model.recv_of(v, model.initial(tag))
    commands = []
    for _ in range(limit):
        state, cmd = model.step_of(state)
        commands.append(cmd)
        if isinstance(cmd, Return):
            return commands
        if isinstance(cmd, Read):
            state = model.recv_of(freeze(reads.get(cmd.key)), state)
    raise AssertionError("no return")


def test_catalog_names_resolve():
    for name in CATALOG:
        assert get_model(name).name == name
    with pytest.raises(KeyError):
        get_model("missing")
    with pytest.raises(KeyError):
        get_relation("missing")


def test_undefined_steps_are_none():
    echo = get_model("echo")
    assert echo.step_of(echo.initial()) is None
    busy = echo.recv_of(1, echo.initial())
    assert echo.recv_of(2, busy) is None


def test_same_command_compares_payloads():
    assert same_command(Return(1), Return(1))
    assert not same_command(Return(1), Return(True))
    assert same_command(Epsilon(), Epsilon())
    assert not same_command(Read("a"), Write("a", 1))


def test_echo_returns_its_input():
    assert drive(get_model("echo"), freeze({"a": 1})) == [Return(freeze({"a": 1}))]


def test_counter_counts_requests_per_instance():
    counter = get_model("counter")
    state = counter.initial()
    replies = []
    for v in (7, 8, 9):
        state, cmd = counter.step_of(counter.recv_of(v, state))
        replies.append(cmd.value)
    assert replies == [1, 2, 3]


def test_process_id_answer_depends_on_tag():
    model = model_process_id()
    low = drive(model, 1, tag=5)[-1].value
    high = drive(model, 1, tag=20000)[-1].value
    assert low == JsonObject({"output": "Low process id"})
    assert high == JsonObject({"output": "High process id"})
    with pytest.raises(ValueError):
        model_process_id((1, 2))


def test_auth_cache_state_count_and_caching():
    model = model_auth_cache(DEFAULT_DATABASE)
    assert len(enumerate_states(model)) == (1 + 2 * 2) * 2 ** 2
    state = model.recv_of(freeze({"user": "u1", "pass": "p1"}), model.initial())
    state, cmd = model.step_of(state)
    assert cmd == Return(True) and ("u1", "p1") in state.cache
    state, cmd = model.step_of(model.recv_of(freeze({"user": "u1", "pass": "p2"}), state))
    assert cmd == Return(False)
    assert drive(model, "junk")[-1].value == JsonObject({"error": "malformed request"})


def test_enumeration_refuses_large_models():
    with pytest.raises(UnsupportedModel):
        enumerate_states(get_model("bank"), 1000)


def test_enumerated_states_are_closed_under_steps():
    for name in ("echo", "counter", "process-id", "auth-cache", "bank-tx"):
        model = get_model(name)
        states = set(enumerate_states(model))
        for s in states:
            out = model.step_of(s)
            if out is not None and not isinstance(out[1], Read):
                assert out[0] in states


def test_bank_deposit_protocol_on_a_miss():
    t1 = BANK_TX_REQUESTS[0]
    commands = drive(model_bank_tx(), t1)
    kinds = [type(c).__name__ for c in commands]
    assert kinds[:2] == ["BeginTx", "Read"] and commands[1] == Read(tx_key("t1"))
    assert Read(account_key("checking")) in commands
    assert Write(tx_key("t1"), True) in commands
    assert kinds[-2:] == ["EndTx", "Return"] and commands[-1] == Return(True)


def test_bank_replay_returns_stored_result():
    commands = drive(model_bank_tx(), BANK_TX_REQUESTS[0], reads={tx_key("t1"): True})
    assert commands == [BeginTx(), Read(tx_key("t1")), EndTx(), Return(True)]


def test_bank_transfer_checks_funds():
    t2 = BANK_TX_REQUESTS[1]
    assert drive(model_bank_tx(), t2)[-1] == Return(False)
    rich = {account_key("checking"): 10}
    commands = drive(model_bank_tx(), t2, reads=rich)
    assert Write(account_key("savings"), 5) in commands and commands[-1] == Return(True)


@pytest.mark.parametrize("mutation", MUTATIONS)
def test_each_mutation_changes_the_protocol(mutation):
    plain = drive(model_bank_tx(), BANK_TX_REQUESTS[0])
    assert drive(model_bank_tx(mutation=mutation), BANK_TX_REQUESTS[0]) != plain


def test_unknown_mutation_is_rejected():
    with pytest.raises(ValueError):
        model_bank_tx(mutation="bogus")


def test_registry_serves_helpers_and_bank():
    registry = function_registry()
    assert {"inc", "double", "f", "g", "h", "bank"} <= set(registry)
    assert registry["bank"].transactional and registry["bank"].name == "bank"
    assert drive(registry["f"], 3) == [Return(freeze({"d": 3, "e": [3]}))]
    assert drive(registry["h"], 3)[-1].value["error"].startswith("h:")


def test_equality_relation_is_reflexive():
    assert EQUALITY(1, 1) and not EQUALITY(1, 2)


def test_recv_memo_keeps_true_and_one_apart():
    echo = get_model("echo")
    assert echo.recv_of(True, echo.initial())[0] is True
    assert type(echo.recv_of(1, echo.initial())[0]) is int
    assert type(echo.recv_of([True], echo.initial())[0][0]) is bool
    assert type(echo.recv_of([1], echo.initial())[0][0]) is int
