"""A demonstration context-aware application.

It subscribes to a running service, prints every hierarchy it receives, and
adapts a mock "available tools" list to the application resources of the
innermost context.
"""

from __future__ import annotations

import socket
import sys
from typing import Any, TextIO

from .formats.wire import (
    CONFIRM_REPLY,
    CONFIRM_REQUEST,
    CONTEXT_PUBLISH,
    ERROR,
    SUBSCRIBE,
    SUGGESTION,
    EnvelopeReader,
    EnvelopeWriter,
    ProtocolError,
)


def available_tools(body: dict[str, Any]) -> list[str]:
    hierarchy = body.get("hierarchy") or []
    if not hierarchy:
        return []
    return [r["name"] for r in hierarchy[0].get("resources", []) if r.get("kind") == "application"]


def format_publish(body: dict[str, Any]) -> list[str]:
    lines = [f"context for {body.get('agent')}: focus {body.get('focus')}"]
    for level in body.get("hierarchy", []):
        lines.append(f"  [{level['depth']}] {level['context']} {level['generic_origin']}")
    lines.append("  tools: " + (", ".join(available_tools(body)) or "(none)"))
    return lines


def choose(candidates: list[list[Any]], policy: str) -> str | None:
    if policy == "first" and candidates:
        return candidates[0][0]
    if policy == "second" and len(candidates) > 1:
        return candidates[1][0]
    return None


def run_subscriber(
    host: str,
    port: int,
    app_id: str = "demo",
    agents: list[str] | None = None,
    confirm: str = "first",
    out: TextIO = sys.stdout,
    max_envelopes: int | None = None,
) -> int:
    """Run until the connection closes; returns a process exit code.

    ``confirm`` picks the reply to confirmation requests: ``first``,
    ``second`` or ``none`` (keep the current context).
    """
    try:
        sock = socket.create_connection((host, port))
    except OSError as exc:
        print(f"cannot connect to {host}:{port}: {exc}", file=sys.stderr)
        return 1
    writer, reader = EnvelopeWriter(), EnvelopeReader()
    wanted = set(agents or ())
    seen = 0
    with sock:
        sock.sendall(writer.next(SUBSCRIBE, {"app_id": app_id, "agents": sorted(wanted)})[1])
        while max_envelopes is None or seen < max_envelopes:
            try:
                data = sock.recv(65536)
            except OSError as exc:
                print(f"connection lost: {exc}", file=sys.stderr)
                return 1
            if not data:
                print("connection closed by service", file=sys.stderr)
                return 1
            try:
                envelopes = reader.feed(data)
            except ProtocolError as exc:
                print(f"protocol error: {exc}", file=sys.stderr)
                return 1
            for env in envelopes:
                seen += 1
                body = env.body
                if wanted and body.get("agent") is not None and body["agent"] not in wanted:
                    continue
                if env.kind == CONTEXT_PUBLISH:
                    for line in format_publish(body):
                        print(line, file=out)
                elif env.kind == SUGGESTION:
                    print(f"suggestion for {body.get('agent')}: {body.get('text')}", file=out)
                elif env.kind == CONFIRM_REQUEST:
                    choice = choose(body.get("candidates", []), confirm)
                    print(f"confirm? {body.get('candidates')} -> {choice}", file=out)
                    reply = {"ref": env.seq, "request_id": body.get("request_id"), "choice": choice}
                    sock.sendall(writer.next(CONFIRM_REPLY, reply)[1])
                elif env.kind == ERROR:
                    print(f"error from service: {body.get('message')}", file=sys.stderr)
                out.flush()
    return 0
