"""Action traces: one event per line.

    <tick> <agent-id> <action> [<target>] [key=value ...]

Fields are split shell-style, so quoted fields may contain spaces. Lines that
are blank or start with ``#`` are skipped.
"""

from __future__ import annotations

import re
import shlex
from typing import Iterable

from ..identify import ActionEvent

_TICK = re.compile(r"\d+\Z")


class TraceError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


def parse_trace_line(line: str, lineno: int = 1) -> ActionEvent | None:
    """Parse one line; returns None for blank and comment lines."""
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None
    try:
        fields = shlex.split(stripped, comments=True)
    except ValueError as exc:
        raise TraceError(lineno, str(exc)) from None
    if len(fields) < 3:
        raise TraceError(lineno, "expected '<tick> <agent> <action> [target] [k=v ...]'")
    tick, agent, action, *rest = fields
    if not _TICK.match(tick):
        raise TraceError(lineno, f"tick {tick!r} is not a non-negative integer")
    if not agent or not action:
        raise TraceError(lineno, "agent and action must be non-empty")
    target = None
    if rest and "=" not in rest[0]:
        target = rest.pop(0)
    attributes: dict[str, str] = {}
    for item in rest:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise TraceError(lineno, f"expected key=value, found {item!r}")
        if key in attributes:
            raise TraceError(lineno, f"attribute {key!r} repeated")
        attributes[key] = value
    return ActionEvent(int(tick), agent, action, target, attributes)


def parse_trace(text: str | bytes) -> list[ActionEvent]:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TraceError(text.count(b"\n", 0, exc.start) + 1, "invalid UTF-8") from None
    events = []
    last: dict[str, int] = {}
    for lineno, line in enumerate(text.split("\n"), 1):
        event = parse_trace_line(line, lineno)
        if event is None:
            continue
        prev = last.get(event.agent)
        if prev is not None and event.timestamp < prev:
            raise TraceError(
                lineno, f"tick {event.timestamp} for agent {event.agent!r} goes back from {prev}"
            )
        last[event.agent] = event.timestamp
        events.append(event)
    return events


def format_event(e: ActionEvent) -> str:
    if e.target is not None and "=" in e.target:
        raise ValueError(f"target {e.target!r} contains '=' and cannot be written")
    fields = [str(e.timestamp), e.agent, e.action]
    if e.target is not None:
        fields.append(e.target)
    for k, v in e.attributes.items():
        if not k or "=" in k:
            raise ValueError(f"attribute name {k!r} cannot be written")
        fields.append(f"{k}={v}")
    for f in fields:
        if "\n" in f or "\r" in f:
            raise ValueError(f"field {f!r} contains a line break")
    return " ".join(shlex.quote(f) for f in fields)


def serialize_trace(events: Iterable[ActionEvent]) -> str:
    return "".join(format_event(e) + "\n" for e in events)
