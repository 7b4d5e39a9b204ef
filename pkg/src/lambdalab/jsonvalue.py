"""Immutable JSON values, canonical encoding and configuration digests.

Engine values are "frozen" JSON: arrays are tuples and objects are
``JsonObject`` instances, so every value is hashable and can live inside
configurations, sets and visited tables.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
from collections.abc import Iterator, Mapping
from typing import Any


class JsonObject(Mapping):
    """An immutable, insertion-ordered JSON object.

    Equality ignores key order, as JSON objects do.
    """

    __slots__ = ("_items", "_index", "_hash")

    def __init__(self, items: Any = ()):
        if isinstance(items, Mapping):
            items = items.items()
        index: dict[str, Any] = {}
        for key, value in items:
            if not isinstance(key, str):
                raise TypeError(f"object keys must be strings, got {key!r}")
            index[key] = value
        self._index = index
        self._items = tuple(index.items())
        self._hash = None

    def __getitem__(self, key: str) -> Any:
        return self._index[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._index)

    def __len__(self) -> int:
        return len(self._index)

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset((k, _hash_key(v)) for k, v in self._items))
        return self._hash

    def __eq__(self, other: object) -> bool:
        if isinstance(other, JsonObject):
            return self._index == other._index
        return NotImplemented

    def __repr__(self) -> str:
        return f"JsonObject({dict(self._items)!r})"

    def set(self, key: str, value: Any) -> "JsonObject":
        """Return a copy with ``key`` replaced, or appended when new."""
        if key in self._index:
            return JsonObject((k, value if k == key else v) for k, v in self._items)
        return JsonObject(self._items + ((key, value),))

    def without(self, key: str) -> "JsonObject":
        return JsonObject((k, v) for k, v in self._items if k != key)


EMPTY_OBJECT = JsonObject()


def _hash_key(value: Any) -> Any:
    # keep true and 1 apart inside hashed containers
    if isinstance(value, bool):
        return ("bool", value)
    return value


def freeze(value: Any) -> Any:
    """Convert plain decoded JSON (dicts, lists) into the frozen form."""
    if isinstance(value, dict):
        return JsonObject((k, freeze(v)) for k, v in value.items())
    if isinstance(value, JsonObject):
        return JsonObject((k, freeze(v)) for k, v in value.items())
    if isinstance(value, (list, tuple)):
        return tuple(freeze(v) for v in value)
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    raise TypeError(f"not a JSON value: {value!r}")


def thaw(value: Any) -> Any:
    """Convert a frozen value back into plain dicts and lists."""
    if isinstance(value, JsonObject):
        return {k: thaw(v) for k, v in value.items()}
    if isinstance(value, tuple):
        return [thaw(v) for v in value]
    return value


def is_json(value: Any) -> bool:
    if value is None or isinstance(value, (bool, int, float, str)):
        return True
    if isinstance(value, tuple):
        return all(is_json(v) for v in value)
    if isinstance(value, JsonObject):
        return all(is_json(v) for v in value.values())
    return False


def dumps(value: Any) -> str:
    """Canonical JSON text: sorted keys and no insignificant whitespace."""
    return json.dumps(to_plain(value), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def loads(text: str) -> Any:
    return freeze(json.loads(text))


def json_type(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, (int, float)):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, tuple):
        return "array"
    if isinstance(value, JsonObject):
        return "object"
    return type(value).__name__


def json_equal(a: Any, b: Any) -> bool:
    """Structural JSON equality that keeps booleans and numbers apart."""
    ta, tb = json_type(a), json_type(b)
    if ta != tb:
        return False
    if ta == "array":
        return len(a) == len(b) and all(json_equal(x, y) for x, y in zip(a, b))
    if ta == "object":
        return a.keys() == b.keys() and all(json_equal(a[k], b[k]) for k in a)
    return a == b


def to_plain(obj: Any) -> Any:
    """Encode any engine value (JSON, model states, components) as plain JSON.

    Sets are sorted by their canonical text so the result does not depend on
    hash seeds or insertion order.
    """
    if obj is None or isinstance(obj, (bool, int, str)):
        return obj
    if isinstance(obj, float):
        return int(obj) if obj.is_integer() and abs(obj) < 2**53 else obj
    if isinstance(obj, JsonObject):
        return {k: to_plain(v) for k, v in obj.items()}
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (tuple, list)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, (frozenset, set)):
        items = [to_plain(v) for v in obj]
        return {"$set": sorted(items, key=lambda v: json.dumps(v, sort_keys=True))}
    if isinstance(obj, enum.Enum):
        return obj.name
    if hasattr(obj, "to_plain") and not isinstance(obj, type):
        return obj.to_plain()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        out = {"$": type(obj).__name__}
        for field in dataclasses.fields(obj):
            if field.compare:
                out[field.name] = to_plain(getattr(obj, field.name))
        return out
    raise TypeError(f"cannot encode {obj!r}")


def canonical(obj: Any) -> str:
    return json.dumps(to_plain(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest(obj: Any) -> str:
    return hashlib.sha256(canonical(obj).encode("utf-8")).hexdigest()[:16]
