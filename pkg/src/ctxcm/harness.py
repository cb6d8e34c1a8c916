"""Deterministic replay of traces through a context manager."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, TextIO

from .identify import ActionEvent, ConfirmationRequest
from .manager import TIMEOUT, ContextManager, EventLog, ManagerConfig
from .model import Ontology

CONFIRM_POLICIES = ("first", "second", "timeout")

# log events that make up the externally visible behaviour of a run
OBSERVABLE_EVENTS = frozenset(
    {"identified", "ambiguous", "confirm-request", "confirm-answer", "confirm-timeout", "publish", "suggestion", "drift"}
)


def confirm_policy(name: str):
    if name == "first":
        return lambda req: req.candidates[0][0]
    if name == "second":
        return lambda req: req.candidates[1][0]
    if name == "timeout":
        return lambda req: TIMEOUT
    raise ValueError(f"unknown confirmation policy {name!r}; expected one of {', '.join(CONFIRM_POLICIES)}")


@dataclass
class ReplayReport:
    identifications: list[dict[str, Any]] = field(default_factory=list)
    focus_switches: int = 0
    drift_events: int = 0
    publishes: int = 0
    suggestions: int = 0
    confirmations_requested: int = 0
    confirmations_answered: int = 0
    final_cascade: list[dict[str, Any]] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


def cascade_tree(cm: ContextManager) -> list[dict[str, Any]]:
    cascade = cm.cascade

    def node(ctx_id: str) -> dict[str, Any]:
        ctx = cascade.contexts[ctx_id]
        return {
            "context": ctx_id,
            "generic_origin": ctx.generic_origin,
            "activity": ctx.activity,
            "activity_class": cascade.activities[ctx.activity].class_id,
            "state": ctx.state,
            "agents": sorted(ctx.agents_involved),
            "children": [node(c) for c in cascade.children[ctx_id]],
        }

    return [node(r) for r in cascade.roots()]


def build_report(cm: ContextManager) -> ReplayReport:
    recs = cm.log.records
    return ReplayReport(
        identifications=[
            {"tick": r["tick"], "agent": r["agent"], **{k: r["detail"][k] for k in ("activity_class", "context", "how")}}
            for r in recs
            if r["event"] == "identified"
        ],
        focus_switches=cm.log.count("focus-change"),
        drift_events=cm.log.count("drift"),
        publishes=cm.log.count("publish"),
        suggestions=cm.log.count("suggestion"),
        confirmations_requested=cm.log.count("confirm-request"),
        confirmations_answered=cm.log.count("confirm-answer"),
        final_cascade=cascade_tree(cm),
    )


def replay(
    ontology: Ontology,
    events: Iterable[ActionEvent],
    policy: str = "first",
    config: ManagerConfig | None = None,
    log_sink: TextIO | None = None,
    end_all: bool = False,
) -> tuple[ContextManager, ReplayReport]:
    cm = ContextManager(ontology, config, EventLog(log_sink), confirm_policy(policy))
    for e in events:
        cm.handle(e)
    if end_all:
        cm.end_all()
    return cm, build_report(cm)


def observable(records: Iterable[dict[str, Any]]) -> list[tuple]:
    """Project log records onto the behaviour compared across run modes (no wall-clock time)."""
    out = []
    for r in records:
        if r["event"] in OBSERVABLE_EVENTS:
            detail = {k: v for k, v in r["detail"].items() if k != "deliveries"}
            out.append((r["tick"], r["agent"], r["stage"], r["event"], tuple(sorted(detail.items(), key=str))))
    return out


def cascade_lines(cm: ContextManager, agent: str) -> list[str]:
    """Indented tree of the cascades the agent takes part in; ``*`` marks its focus."""
    focus = cm.lifecycle.current_focus(agent)  # raises for unknown agents
    cascade = cm.cascade
    lines: list[str] = []

    def walk(ctx_id: str, depth: int) -> None:
        ctx = cascade.contexts[ctx_id]
        if ctx.state == "ended" or agent not in ctx.agents_involved:
            return
        mark = "*" if ctx_id == focus else " "
        lines.append(f"{mark} {'  ' * depth}{ctx_id} {ctx.generic_origin} [{ctx.state}]")
        for child in cascade.children[ctx_id]:
            walk(child, depth + 1)

    for root in cascade.roots():
        walk(root, 0)
    return lines


def describe_confirmation(req: ConfirmationRequest) -> str:
    return " or ".join(f"{c} ({s:.2f})" for c, s in req.candidates)
