"""Conversions between domain objects and plain JSON-ready values."""

from __future__ import annotations

import json
from typing import Any

from .cascade import Cascade, ContextInstance
from .identify import ActionEvent
from .model import Atomic, Conditional, ProcessTemplate, Resource, Step


def canonical_json(obj: Any) -> str:
    """Deterministic JSON text: sorted keys, no insignificant whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def resource_to_json(r: Resource) -> dict[str, Any]:
    return {"id": r.id, "kind": r.kind, "name": r.name, "attributes": dict(r.attributes)}


def resource_from_json(d: dict[str, Any]) -> Resource:
    return Resource(d["id"], d["kind"], d["name"], dict(d.get("attributes", {})))


def steps_to_json(steps: tuple[Step, ...]) -> list[dict[str, Any]]:
    out: list[dict[str, Any]] = []
    for s in steps:
        if isinstance(s, Atomic):
            out.append({"step": s.name})
        else:
            out.append({"if": s.condition, "negated": s.negated, "then": steps_to_json(s.then_steps)})
    return out


def steps_from_json(items: list[dict[str, Any]]) -> tuple[Step, ...]:
    steps: list[Step] = []
    for d in items:
        if "step" in d:
            steps.append(Atomic(d["step"]))
        else:
            steps.append(Conditional(d["if"], bool(d.get("negated", False)), steps_from_json(d.get("then", []))))
    return tuple(steps)


def process_to_json(p: ProcessTemplate) -> list[dict[str, Any]]:
    return steps_to_json(p.steps)


def process_from_json(items: list[dict[str, Any]]) -> ProcessTemplate:
    return ProcessTemplate(steps_from_json(items))


def event_to_json(e: ActionEvent) -> dict[str, Any]:
    return {
        "timestamp": e.timestamp,
        "agent": e.agent,
        "action": e.action,
        "target": e.target,
        "attributes": dict(e.attributes),
    }


def event_from_json(d: dict[str, Any]) -> ActionEvent:
    return ActionEvent(d["timestamp"], d["agent"], d["action"], d.get("target"), dict(d.get("attributes", {})))


def level_to_json(cascade: Cascade, ctx: ContextInstance, depth: int, ontology=None) -> dict[str, Any]:
    activity = cascade.activities[ctx.activity]
    return {
        "depth": depth,
        "context": ctx.id,
        "generic_origin": ctx.generic_origin,
        "activity": ctx.activity,
        "activity_class": activity.class_id,
        "state": ctx.state,
        "agents_involved": sorted(ctx.agents_involved),
        "resources": [resource_to_json(r) for r in ctx.resources.values()],
        "attributes": dict(ctx.attributes),
        "process": process_to_json(ctx.process),
    }


def hierarchy_to_json(cascade: Cascade, ctx_id: str) -> list[dict[str, Any]]:
    """Every level from ``ctx_id`` out to the root, innermost first."""
    return [
        level_to_json(cascade, cascade.contexts[c], depth)
        for depth, c in enumerate(cascade.lineage(ctx_id))
    ]


def effective_to_json(cascade: Cascade, ctx_id: str) -> dict[str, Any]:
    eff = cascade.effective_context(ctx_id)
    return {
        "resources": [
            dict(resource_to_json(r), provider=provider) for r, provider in eff.resources.values()
        ],
        "attributes": {k: {"value": v, "provider": p} for k, (v, p) in eff.attributes.items()},
        "process": process_to_json(eff.process),
        "process_provider": eff.process_provider,
    }
