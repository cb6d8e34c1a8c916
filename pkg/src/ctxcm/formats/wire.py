"""Envelope framing: newline-delimited JSON objects with ``kind``, ``seq`` and ``body``."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from ..payload import canonical_json

SUBSCRIBE = "subscribe"
CONTEXT_PUBLISH = "context-publish"
SUGGESTION = "suggestion"
CONFIRM_REQUEST = "confirm-request"
CONFIRM_REPLY = "confirm-reply"
ACK = "ack"
ERROR = "error"

KINDS = frozenset({SUBSCRIBE, CONTEXT_PUBLISH, SUGGESTION, CONFIRM_REQUEST, CONFIRM_REPLY, ACK, ERROR})
_FIELDS = ("kind", "seq", "body")


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class Envelope:
    kind: str
    seq: int
    body: dict[str, Any] = field(default_factory=dict, hash=False)
    # top-level fields this version does not know, kept for forwarding
    extra: dict[str, Any] = field(default_factory=dict, hash=False)


def encode_envelope(e: Envelope) -> bytes:
    if e.kind not in KINDS:
        raise ProtocolError(f"unknown envelope kind {e.kind!r}")
    if isinstance(e.seq, bool) or not isinstance(e.seq, int) or e.seq < 1:
        raise ProtocolError(f"seq must be a positive integer, got {e.seq!r}")
    clash = set(e.extra) & set(_FIELDS)
    if clash:
        raise ProtocolError(f"extra fields shadow envelope fields: {sorted(clash)}")
    obj = dict(e.extra)
    obj.update(kind=e.kind, seq=e.seq, body=e.body)
    return (canonical_json(obj) + "\n").encode("utf-8")


def decode_envelope(line: bytes | str) -> Envelope:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"invalid UTF-8: {exc}") from None
    if line.endswith("\n"):
        line = line[:-1]
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("envelope must be a JSON object")
    missing = [f for f in _FIELDS if f not in obj]
    if missing:
        raise ProtocolError(f"envelope missing {', '.join(missing)}")
    kind, seq, body = obj.pop("kind"), obj.pop("seq"), obj.pop("body")
    if kind not in KINDS:
        raise ProtocolError(f"unknown envelope kind {kind!r}")
    if isinstance(seq, bool) or not isinstance(seq, int) or seq < 1:
        raise ProtocolError(f"seq must be a positive integer, got {seq!r}")
    if not isinstance(body, dict):
        raise ProtocolError("body must be a JSON object")
    return Envelope(kind, seq, body, obj)


class EnvelopeWriter:
    """Numbers outgoing envelopes 1, 2, 3, ... for one connection."""

    def __init__(self) -> None:
        self.seq = 0

    def next(self, kind: str, body: dict[str, Any]) -> tuple[Envelope, bytes]:
        env = Envelope(kind, self.seq + 1, body)
        data = encode_envelope(env)
        self.seq += 1
        return env, data


class EnvelopeReader:
    """Splits a byte stream into envelopes and checks the sequence numbers.

    Once an error has been raised the reader is ``broken`` and the
    connection should be dropped.
    """

    def __init__(self) -> None:
        self.buffer = bytearray()
        self.last_seq = 0
        self.broken = False

    def feed(self, data: bytes) -> list[Envelope]:
        if self.broken:
            raise ProtocolError("connection already flagged as broken")
        self.buffer.extend(data)
        out = []
        while True:
            nl = self.buffer.find(b"\n")
            if nl < 0:
                break
            line = bytes(self.buffer[:nl])
            del self.buffer[: nl + 1]
            if not line.strip():
                continue
            out.append(self._check(line))
        return out

    def _check(self, line: bytes) -> Envelope:
        try:
            env = decode_envelope(line)
        except ProtocolError:
            self.broken = True
            raise
        if env.seq != self.last_seq + 1:
            self.broken = True
            what = "regression" if env.seq <= self.last_seq else "gap"
            raise ProtocolError(f"seq {what}: got {env.seq} after {self.last_seq}")
        self.last_seq = env.seq
        return env

    def close(self) -> None:
        """Signal end of stream; a dangling partial line is a framing error."""
        if self.buffer.strip():
            self.broken = True
            raise ProtocolError(f"truncated envelope at end of stream: {bytes(self.buffer[:40])!r}")
