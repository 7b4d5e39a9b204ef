"""External request schedules fed to the semantics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any

from .jsonvalue import JsonObject, freeze


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    """One external request: a function (or program) name and its payload.

    ``program`` holds the parsed composition program when the target is one.
    """

    target: str
    payload: Any
    earliest_step: int = 0
    program: Any = None


@dataclass(frozen=True)
class Workload:
    events: tuple[Event, ...] = ()
    store: JsonObject | None = None

    @cached_property
    def ordered(self) -> tuple[Event, ...]:
        return tuple(sorted(self.events, key=lambda e: e.earliest_step))

    @cached_property
    def horizon(self) -> int:
        return max((e.earliest_step for e in self.events), default=0)

    def __len__(self) -> int:
        return len(self.events)


def requests(target: str, *payloads: Any, store: Any = None) -> Workload:
    """Convenience: one event per payload, all released from step 0."""
    return Workload(
        tuple(Event(target, freeze(p)) for p in payloads),
        None if store is None else freeze(store),
    )


def parse_workload(data: Any, base: Path | None = None, load_program=None) -> Workload:
    """Build a workload from decoded JSON.

    Accepts either a list of events or ``{"events": [...], "store": {...}}``.
    Each event names ``function`` or ``program`` and may give ``payload``
    and ``earliest_step``. Program events are parsed with ``load_program``.
    """
    store = None
    if isinstance(data, dict):
        store = data.get("store")
        data = data.get("events")
    if not isinstance(data, list):
        raise WorkloadError("workload must be a list of events or an object with an 'events' list")
    if store is not None and not isinstance(store, dict):
        raise WorkloadError("store seed must be a JSON object")
    events = []
    for n, raw in enumerate(data):
        if not isinstance(raw, dict):
            raise WorkloadError(f"event {n}: expected an object")
        earliest = raw.get("earliest_step", raw.get("earliest-step", 0))
        if not isinstance(earliest, int) or isinstance(earliest, bool) or earliest < 0:
            raise WorkloadError(f"event {n}: earliest_step must be a nonnegative integer")
        payload = freeze(raw.get("payload"))
        if "function" in raw:
            events.append(Event(str(raw["function"]), payload, earliest))
        elif "program" in raw:
            if load_program is None:
                raise WorkloadError(f"event {n}: programs are not supported here")
            source = str(raw["program"])
            path = Path(source) if base is None else base / source
            events.append(Event(source, payload, earliest, load_program(path)))
        else:
            raise WorkloadError(f"event {n}: needs 'function' or 'program'")
    return Workload(tuple(events), None if store is None else freeze(store))


def load_workload(path: str | Path, load_program=None) -> Workload:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise WorkloadError(f"{path}: {exc}") from None
    return parse_workload(data, path.parent, load_program)
