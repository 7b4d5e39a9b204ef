"""Serverless function models: commands, the model interface and shipped examples.

A model is a tuple of pure functions over an opaque, hashable state space.
``recv`` and ``step`` raise ``ModelError`` where the function is undefined,
which the engines read as "this premise does not hold".
"""

from __future__ import annotations

import dataclasses
import itertools
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from typing import Any

from .jsonvalue import JsonObject, canonical, freeze, json_type


class ModelError(Exception):
    """A model function was applied outside its domain."""


class UnsupportedModel(Exception):
    """The model does not expose a finite state enumeration."""


# -- commands ---------------------------------------------------------------


@dataclass(frozen=True)
class Epsilon:
    def __str__(self) -> str:
        return "eps"


@dataclass(frozen=True)
class Return:
    value: Any

    def __str__(self) -> str:
        return f"return({canonical(self.value)})"


@dataclass(frozen=True)
class BeginTx:
    def __str__(self) -> str:
        return "beginTx"


@dataclass(frozen=True)
class EndTx:
    def __str__(self) -> str:
        return "endTx"


@dataclass(frozen=True)
class Read:
    key: str

    def __str__(self) -> str:
        return f"read({self.key})"


@dataclass(frozen=True)
class Write:
    key: str
    value: Any

    def __str__(self) -> str:
        return f"write({self.key},{canonical(self.value)})"


Command = Epsilon | Return | BeginTx | EndTx | Read | Write
EPSILON = Epsilon()
BEGIN_TX = BeginTx()
END_TX = EndTx()


def same_command(a: Command, b: Command) -> bool:
    """Command equality that distinguishes JSON true from 1."""
    return canonical(a) == canonical(b)


# -- the model interface ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class FunctionModel:
    name: str
    init: Callable[[Any], Any]
    recv: Callable[[Any, Any], Any]
    step: Callable[[Any], tuple[Any, Command]]
    requests: tuple = ()
    tags: tuple = (None,)
    states: Callable[[], Iterable[Any]] | None = None
    read_values: tuple = (None,)
    request_key: Callable[[Any], str | None] | None = None
    transactional: bool = False
    description: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    def initial(self, tag: Any = None) -> Any:
        return self.init(self.tags[0] if tag is None else tag)

    def initial_states(self) -> list:
        return [self.init(tag) for tag in self.tags]

    def step_of(self, state: Any) -> tuple[Any, Command] | None:
        """Memoized ``step``; ``None`` where the model leaves it undefined."""
        key = ("step", state)
        try:
            return self._cache[key]
        except KeyError:
            pass
        try:
            result = self.step(state)
        except ModelError:
            result = None
        self._cache[key] = result
        return result

    def recv_of(self, value: Any, state: Any) -> Any | None:
        value = freeze(value)
        # True == 1 in Python, so the key must carry the JSON type
        tagged = canonical(value) if isinstance(value, (tuple, JsonObject)) else (type(value), value)
        key = ("recv", tagged, state)
        try:
            return self._cache[key]
        except KeyError:
            pass
        try:
            result = self.recv(value, state)
        except ModelError:
            result = None
        self._cache[key] = result
        return result

    def key_of(self, payload: Any) -> str | None:
        return self.request_key(payload) if self.request_key else None


@dataclass(frozen=True)
class SafetyRelation:
    name: str
    related: Callable[[Any, Any], bool]

    def __call__(self, a: Any, b: Any) -> bool:
        return self.related(a, b)


EQUALITY = SafetyRelation("equality", lambda a, b: a == b)
ALL_STATES = SafetyRelation("all", lambda a, b: True)


def enumerate_states(model: FunctionModel, limit: int = 50_000) -> list:
    """The model's finite state space.

    Uses the model's own enumeration when it has one, otherwise the closure
    of its initial states under ``recv`` (over requests and read values) and
    ``step``. Raises ``UnsupportedModel`` when the closure exceeds ``limit``.
    """
    if model.states is not None:
        return list(model.states())
    inputs = tuple(model.requests) + tuple(model.read_values)
    seen: dict[str, Any] = {}
    frontier = list(model.initial_states())
    while frontier:
        state = frontier.pop()
        key = canonical(state)
        if key in seen:
            continue
        seen[key] = state
        if len(seen) > limit:
            raise UnsupportedModel(f"{model.name}: more than {limit} states")
        succ = model.step_of(state)
        if succ is not None:
            frontier.append(succ[0])
        for value in inputs:
            nxt = model.recv_of(value, state)
            if nxt is not None:
                frontier.append(nxt)
    return [seen[k] for k in sorted(seen)]


def _error(message: str) -> JsonObject:
    return JsonObject({"error": message})


# -- echo and friends ---------------------------------------------------------


def pure_model(name: str, fn: Callable[[Any], Any], requests: Iterable = (1, 2)) -> FunctionModel:
    """A stateless function: receive a value, return ``fn(value)``."""

    def recv(v, state):
        if state is not None:
            raise ModelError(f"{name}: recv on a busy state")
        return (v,)

    def step(state):
        if state is None:
            raise ModelError(f"{name}: step on an idle state")
        try:
            out = fn(state[0])
        except (TypeError, KeyError, ValueError, IndexError) as exc:
            out = _error(f"{name}: {exc}")
        return None, Return(freeze(out))

    requests = tuple(freeze(r) for r in requests)
    return FunctionModel(
        name=name,
        init=lambda tag: None,
        recv=recv,
        step=step,
        requests=requests,
        states=lambda: [None] + [(r,) for r in requests],
        description=f"stateless function {name}",
    )


def model_echo(requests: Iterable = (1, 2)) -> FunctionModel:
    return pure_model("echo", lambda v: v, requests)


def model_counter(cap: int = 4, requests: Iterable = (1, 2)) -> FunctionModel:
    """Returns how many requests this instance has served (saturating at cap).

    Deliberately unsafe: a warm instance answers differently from a cold one.
    """

    def recv(v, state):
        count, pending = state
        if pending is not None:
            raise ModelError("counter: recv on a busy state")
        return count, (v,)

    def step(state):
        count, pending = state
        if pending is None:
            raise ModelError("counter: step on an idle state")
        count = min(count + 1, cap)
        return (count, None), Return(count)

    return FunctionModel(
        name="counter",
        init=lambda tag: (0, None),
        recv=recv,
        step=step,
        requests=tuple(freeze(r) for r in requests),
        description="instance-local request counter",
    )


# -- authentication with a cache ----------------------------------------------


@dataclass(frozen=True)
class AuthState:
    query: tuple | None
    cache: frozenset
    db: tuple


def model_auth_cache(database: Mapping[str, str]) -> FunctionModel:
    """Checks a user/password pair against ``database``, caching successes.

    Requests are objects ``{"user": u, "pass": p}``. The state space is
    Option(U x P) x C x {D} where U and P are the users and passwords named in
    the database and C ranges over subsets of the database's own pairs, so
    |states| = (1 + |U||P|) * 2^|D|.
    """
    if not database:
        raise ValueError("database must be nonempty")
    db = tuple(sorted(database.items()))
    lookup = dict(db)
    users = sorted(lookup)
    passwords = sorted(set(lookup.values()))

    def recv(v, state):
        if state.query is not None:
            raise ModelError("auth-cache: recv on a busy state")
        if isinstance(v, JsonObject) and isinstance(v.get("user"), str) and isinstance(v.get("pass"), str):
            query = (v["user"], v["pass"])
        else:
            query = ("?", v)
        return AuthState(query, state.cache, state.db)

    def step(state):
        if state.query is None:
            raise ModelError("auth-cache: step on an idle state")
        user, password = state.query
        idle = AuthState(None, state.cache, state.db)
        if user == "?":
            return idle, Return(_error("malformed request"))
        if (user, password) in state.cache:
            return idle, Return(True)
        # a cached pair with another password falls through to the database,
        # as the cache lookup in the original code does
        if lookup.get(user) == password:
            return AuthState(None, state.cache | {(user, password)}, state.db), Return(True)
        return idle, Return(False)

    def states():
        queries = [None] + [(u, p) for u in users for p in passwords]
        caches = [
            frozenset(c) for n in range(len(db) + 1) for c in itertools.combinations(db, n)
        ]
        return [AuthState(q, c, db) for q in queries for c in caches]

    return FunctionModel(
        name="auth-cache",
        init=lambda tag: AuthState(None, frozenset(), db),
        recv=recv,
        step=step,
        requests=tuple(JsonObject({"user": u, "pass": p}) for u in users for p in passwords),
        states=states,
        description="authentication with an instance-local cache",
    )


def auth_cache_relation(database: Mapping[str, str]) -> SafetyRelation:
    """Same pending query, and both caches contained in the database."""
    pairs = set(database.items())

    def related(a: AuthState, b: AuthState) -> bool:
        return a.query == b.query and a.db == b.db and a.cache <= pairs and b.cache <= pairs

    return SafetyRelation("auth-cache-default", related)


DEFAULT_DATABASE = {"u1": "p1", "u2": "p2"}


# -- process id ---------------------------------------------------------------


def model_process_id(pool: Iterable[int] = (5, 20000)) -> FunctionModel:
    """Answers depending on an instance tag fixed when the instance is created."""
    pool = tuple(pool)
    if len({tag > 10000 for tag in pool}) < 2:
        raise ValueError("pool needs tags on both sides of the threshold")

    def recv(v, state):
        tag, pending = state
        if pending is not None:
            raise ModelError("process-id: recv on a busy state")
        return tag, (v,)

    def step(state):
        tag, pending = state
        if pending is None:
            raise ModelError("process-id: step on an idle state")
        text = "High process id" if tag > 10000 else "Low process id"
        return (tag, None), Return(JsonObject({"output": text}))

    return FunctionModel(
        name="process-id",
        init=lambda tag: (tag, None),
        recv=recv,
        step=step,
        requests=(1, 2),
        tags=pool,
        description="reply depends on the instance's process id",
    )


# -- banking --------------------------------------------------------------------


def _number(v: Any) -> bool:
    return json_type(v) == "number"


@dataclass(frozen=True)
class BankState:
    accounts: tuple
    pending: Any = None


def model_bank_naive(requests: Iterable | None = None) -> FunctionModel:
    """Banking with balances in instance memory.

    Deposits set a balance; transfers move funds when the source covers them.
    Instances do not share balances, so platform runs lose updates.
    """

    def recv(v, state):
        if state.pending is not None:
            raise ModelError("bank: recv on a busy state")
        return BankState(state.accounts, (v,))

    def step(state):
        if state.pending is None:
            raise ModelError("bank: step on an idle state")
        req = state.pending[0]
        accounts = dict(state.accounts)
        kind = req.get("type") if isinstance(req, JsonObject) else None
        if kind == "deposit" and isinstance(req.get("name"), str) and _number(req.get("value")):
            accounts[req["name"]] = req["value"]
            result = True
        elif kind == "transfer" and isinstance(req.get("from"), str) and isinstance(req.get("to"), str) and _number(req.get("amnt")):
            src, dst, amount = req["from"], req["to"], req["amnt"]
            if accounts.get(src, 0) >= amount:
                accounts[dst] = accounts.get(dst, 0) + amount
                accounts[src] = accounts.get(src, 0) - amount
                result = True
            else:
                result = False
        else:
            return BankState(state.accounts), Return(_error("malformed request"))
        return BankState(tuple(sorted(accounts.items()))), Return(result)

    if requests is None:
        requests = (
            {"type": "deposit", "name": "alice", "value": 10},
            {"type": "transfer", "from": "alice", "to": "bob", "amnt": 5},
        )
    return FunctionModel(
        name="bank",
        init=lambda tag: BankState(()),
        recv=recv,
        step=step,
        requests=tuple(freeze(r) for r in requests),
        description="bank with instance-local accounts",
    )


@dataclass(frozen=True)
class TxState:
    phase: str
    request: Any = None
    data: tuple = ()


IDLE_TX = TxState("idle")

BANK_TX_REQUESTS = (
    {"type": "deposit", "to": "checking", "amount": 10, "transId": "t1"},
    {"type": "transfer", "from": "checking", "to": "savings", "amount": 5, "transId": "t2"},
)


def tx_key(trans_id: Any) -> str:
    return f"tx:{trans_id}"


def account_key(name: str) -> str:
    return f"acct:{name}"


def _valid_bank_request(req: Any) -> bool:
    if not isinstance(req, JsonObject) or json_type(req.get("transId")) not in ("string", "number"):
        return False
    if not _number(req.get("amount")) or not isinstance(req.get("to"), str):
        return False
    if req.get("type") == "deposit":
        return True
    return req.get("type") == "transfer" and isinstance(req.get("from"), str)


def _bank_request_key(req: Any) -> str | None:
    return tx_key(req["transId"]) if _valid_bank_request(req) else None


MUTATIONS = ("no-write", "foreign-write", "early-return", "write-before-tx")


def model_bank_tx(requests: Iterable | None = None, mutation: str | None = None) -> FunctionModel:
    """Banking against the shared key-value store, idempotent per transId.

    Each request runs one transaction: read the request's transaction record
    ``tx:<transId>``; if present, return it; otherwise update the account
    balances (``acct:<name>``), record the result under the transaction key,
    commit and return the result. A transfer with insufficient funds records
    and returns false.

    ``mutation`` selects a deliberately broken variant used by the checkers:
    ``no-write`` never records the result, ``foreign-write`` also writes
    another request's record, ``early-return`` returns before committing and
    ``write-before-tx`` touches an account before taking the lock.
    """
    if mutation is not None and mutation not in MUTATIONS:
        raise ValueError(f"unknown mutation {mutation!r}")
    if requests is None:
        requests = BANK_TX_REQUESTS
    requests = tuple(freeze(r) for r in requests)
    known_keys = [k for k in (_bank_request_key(r) for r in requests) if k]

    def foreign_key(own: str) -> str:
        others = [k for k in known_keys if k != own]
        return others[0] if others else own + "'"

    def recv(v, state):
        if state.phase == "idle":
            return TxState("received", v)
        if state.phase in ("await-record", "await-account"):
            return TxState(state.phase.replace("await", "got"), state.request, state.data + (v,))
        raise ModelError(f"bank-tx: recv in phase {state.phase}")

    def account_reads(req) -> list[str]:
        if req["type"] == "deposit":
            return [account_key(req["to"])]
        return [account_key(req["from"]), account_key(req["to"])]

    def writes_for(req, balances) -> tuple[tuple, Any]:
        amount = req["amount"]
        if req["type"] == "deposit":
            (balance,) = balances
            writes = [(account_key(req["to"]), (balance if _number(balance) else 0) + amount)]
            result = True
        else:
            src, dst = (b if _number(b) else 0 for b in balances)
            if src >= amount:
                writes = [(account_key(req["from"]), src - amount), (account_key(req["to"]), dst + amount)]
                result = True
            else:
                writes, result = [], False
        own = tx_key(req["transId"])
        if mutation == "foreign-write":
            writes.append((foreign_key(own), result))
        if mutation != "no-write":
            writes.append((own, result))
        return tuple(writes), result

    def step(state):
        req = state.request
        phase = state.phase
        if phase == "received":
            if not _valid_bank_request(req):
                return IDLE_TX, Return(_error("malformed request"))
            if mutation == "write-before-tx" and not state.data:
                return TxState("received", req, ("early",)), Write(account_key(req["to"]), 0)
            return TxState("begun", req), BEGIN_TX
        if phase == "begun":
            return TxState("await-record", req), Read(tx_key(req["transId"]))
        if phase == "got-record":
            (stored,) = state.data
            if stored is not None:
                return TxState("committed", req, (stored,)), END_TX
            return TxState("await-account", req), Read(account_reads(req)[0])
        if phase == "got-account":
            needed = account_reads(req)
            if len(state.data) < len(needed):
                return TxState("await-account", req, state.data), Read(needed[len(state.data)])
            writes, result = writes_for(req, state.data)
            return _next_write(TxState("writing", req, (writes, result)))
        if phase == "writing":
            return _next_write(state)
        if phase == "ending":
            return TxState("committed", req, state.data), END_TX
        if phase == "committed":
            return IDLE_TX, Return(state.data[0])
        raise ModelError(f"bank-tx: step in phase {phase}")

    def _next_write(state):
        writes, result = state.data
        if writes:
            (key, value), rest = writes[0], writes[1:]
            return TxState("writing", state.request, (rest, result)), Write(key, value)
        if mutation == "early-return":
            return TxState("ending", state.request, (result,)), Return(result)
        return TxState("committed", state.request, (result,)), END_TX

    name = "bank-tx" if mutation is None else f"bank-tx-{mutation}"
    return FunctionModel(
        name=name,
        init=lambda tag: IDLE_TX,
        recv=recv,
        step=step,
        requests=requests,
        read_values=(None, True, False, 0, 10),
        request_key=_bank_request_key,
        transactional=True,
        description="idempotent transactional bank" if mutation is None else f"bank-tx mutant: {mutation}",
    )


def model_bank() -> tuple[FunctionModel, FunctionModel]:
    """Both banking variants: (instance-local, transactional)."""
    return model_bank_naive(), model_bank_tx()


# -- helper functions used by composition programs ------------------------------


def _sample_f(v):
    return {"d": v, "e": [v]}


def _sample_g(v):
    return {"seen": v}


def _sample_h(v):
    return [v["x"], v["y"]]


def _csv_to_json(text):
    lines = [line for line in str(text).splitlines() if line.strip()]
    if not lines:
        return []
    header = [h.strip() for h in lines[0].split(",")]
    rows = []
    for line in lines[1:]:
        cells = [c.strip() for c in line.split(",")]
        row = {}
        for name, cell in zip(header, cells):
            try:
                row[name] = int(cell)
            except ValueError:
                row[name] = cell
        rows.append(row)
    return rows


def _plot_json(v):
    data, x, y = v["data"], v["x"], v["y"]
    return {"points": [[row[x], row[y]] for row in data]}


def _post(channel):
    return lambda v: {"posted": channel, "body": v}


HELPERS: dict[str, Callable[[Any], Any]] = {
    "inc": lambda v: v + 1,
    "double": lambda v: v * 2,
    "f": _sample_f,
    "g": _sample_g,
    "h": _sample_h,
    "csvToJson": _csv_to_json,
    "plotJson": _plot_json,
    "postStatusToGitHub": _post("github"),
    "postToSlack": _post("slack"),
}


def _thawed(fn):
    from .jsonvalue import thaw

    return lambda v: fn(thaw(v))


CATALOG: dict[str, Callable[[], FunctionModel]] = {
    "echo": model_echo,
    "counter": model_counter,
    "auth-cache": lambda: model_auth_cache(DEFAULT_DATABASE),
    "process-id": model_process_id,
    "bank": model_bank_naive,
    "bank-tx": model_bank_tx,
    **{f"bank-tx-{m}": (lambda m=m: model_bank_tx(mutation=m)) for m in MUTATIONS},
    **{name: (lambda name=name: pure_model(name, _thawed(HELPERS[name]))) for name in HELPERS},
}

RELATIONS: dict[str, Callable[[], SafetyRelation]] = {
    "equality": lambda: EQUALITY,
    "all": lambda: ALL_STATES,
    "auth-cache-default": lambda: auth_cache_relation(DEFAULT_DATABASE),
}


def get_model(name: str, database: Mapping[str, str] | None = None) -> FunctionModel:
    if name == "auth-cache" and database:
        return model_auth_cache(database)
    try:
        return CATALOG[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {', '.join(sorted(CATALOG))}") from None


def get_relation(name: str, database: Mapping[str, str] | None = None) -> SafetyRelation:
    if name == "auth-cache-default" and database:
        return auth_cache_relation(database)
    try:
        return RELATIONS[name]()
    except KeyError:
        raise KeyError(f"unknown relation {name!r}; known: {', '.join(sorted(RELATIONS))}") from None


def function_registry(store_models: Iterable[FunctionModel] = ()) -> dict[str, FunctionModel]:
    """Models addressable from composition programs.

    ``bank`` resolves to the transactional bank, as composition programs
    deposit through the shared store.
    """
    registry = {name: CATALOG[name]() for name in HELPERS}
    registry["echo"] = model_echo()
    bank = model_bank_tx()
    registry["bank"] = dataclasses.replace(bank, name="bank", _cache={})
    for model in store_models:
        registry[model.name] = model
    return registry
