"""Runtime nesting of activity and context instances.

Contexts form a forest that mirrors the activity forest. Lookups walk from a
context outwards to its root, and the nearest level that defines a key wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator

from .model import ModelError, ProcessTemplate, Resource, UnknownIdError

LIVE, ENDED = "live", "ended"
ACTIVE, SUSPENDED = "active", "suspended"


class CascadeError(ModelError):
    pass


@dataclass
class ActivityInstance:
    id: str
    class_id: str
    parent: str | None
    agents: set[str]
    state: str = LIVE
    started_at: int = 0
    ended_at: int | None = None


@dataclass
class ContextInstance:
    id: str
    activity: str
    generic_origin: str
    resources: dict[str, Resource] = field(default_factory=dict)
    process: ProcessTemplate = ProcessTemplate()
    attributes: dict[str, str] = field(default_factory=dict)
    parent_context: str | None = None
    state: str = SUSPENDED
    agents_involved: set[str] = field(default_factory=set)

    def payload(self) -> tuple[dict[str, Resource], dict[str, str], ProcessTemplate]:
        return dict(self.resources), dict(self.attributes), self.process


@dataclass(frozen=True)
class ResourceResolution:
    key: str
    value: Any
    provider: str
    depth: int
    kind: str  # "attribute" or "resource"


@dataclass(frozen=True)
class EffectiveContext:
    """Merged view of a cascade; every entry carries the context that supplied it."""

    context: str
    resources: dict[str, tuple[Resource, str]]
    attributes: dict[str, tuple[str, str]]
    process: ProcessTemplate
    process_provider: str | None
    levels: tuple[str, ...]


class Cascade:
    """Owns every activity and context instance known to one manager."""

    def __init__(self) -> None:
        self.activities: dict[str, ActivityInstance] = {}
        self.contexts: dict[str, ContextInstance] = {}
        self.context_of: dict[str, str] = {}  # activity id -> context id
        self.children: dict[str, list[str]] = {}  # context id -> child context ids

    def activity(self, inst_id: str) -> ActivityInstance:
        try:
            return self.activities[inst_id]
        except KeyError:
            raise UnknownIdError("activity instance", inst_id) from None

    def context(self, ctx_id: str) -> ContextInstance:
        try:
            return self.contexts[ctx_id]
        except KeyError:
            raise UnknownIdError("context", ctx_id) from None

    def context_for_activity(self, inst_id: str) -> ContextInstance:
        self.activity(inst_id)
        return self.contexts[self.context_of[inst_id]]

    def add(self, inst: ActivityInstance, ctx: ContextInstance) -> None:
        """Register an activity with its context; attaches under the parent if any."""
        if inst.id in self.activities or ctx.id in self.contexts:
            raise CascadeError(f"duplicate instance id {inst.id!r} / {ctx.id!r}")
        if ctx.activity != inst.id:
            raise CascadeError(f"context {ctx.id!r} does not surround activity {inst.id!r}")
        if inst.parent is not None:
            parent_ctx = self.context_for_activity(inst.parent)
        self.activities[inst.id] = inst
        self.contexts[ctx.id] = ctx
        self.context_of[inst.id] = ctx.id
        self.children[ctx.id] = []
        if inst.parent is not None:
            try:
                self.attach(ctx.id, parent_ctx.id)
            except CascadeError:
                del self.activities[inst.id], self.contexts[ctx.id]
                del self.context_of[inst.id], self.children[ctx.id]
                raise

    def attach(self, child: str, parent: str) -> None:
        c = self.context(child)
        p = self.context(parent)
        if p.state == ENDED:
            raise CascadeError(f"cannot attach under ended context {parent!r}")
        if self.activity(c.activity).parent != p.activity:
            raise CascadeError(
                f"activity {c.activity!r} is not a child of activity {p.activity!r}"
            )
        if c.parent_context is not None and c.parent_context != parent:
            raise CascadeError(f"context {child!r} already attached under {c.parent_context!r}")
        if child in self.lineage(parent):
            raise CascadeError(f"attaching {child!r} under {parent!r} would form a cycle")
        c.parent_context = parent
        if child not in self.children[parent]:
            self.children[parent].append(child)

    def lineage(self, ctx_id: str) -> list[str]:
        """Context ids from ``ctx_id`` out to its root, innermost first."""
        out = []
        cur: str | None = ctx_id
        while cur is not None:
            out.append(cur)
            cur = self.context(cur).parent_context
        return out

    def resolve(self, ctx_id: str, key: str) -> ResourceResolution | None:
        ctx = self.context(ctx_id)
        if ctx.state == ENDED:
            raise CascadeError(f"context {ctx_id!r} has ended")
        for depth, level_id in enumerate(self.lineage(ctx_id)):
            level = self.contexts[level_id]
            if key in level.attributes:
                return ResourceResolution(key, level.attributes[key], level_id, depth, "attribute")
            if key in level.resources:
                return ResourceResolution(key, level.resources[key], level_id, depth, "resource")
            for r in level.resources.values():
                if r.name == key:
                    return ResourceResolution(key, r, level_id, depth, "resource")
        return None

    def effective_context(self, ctx_id: str) -> EffectiveContext:
        ctx = self.context(ctx_id)
        if ctx.state == ENDED:
            raise CascadeError(f"context {ctx_id!r} has ended")
        levels = self.lineage(ctx_id)
        resources: dict[str, tuple[Resource, str]] = {}
        attributes: dict[str, tuple[str, str]] = {}
        process, process_provider = ProcessTemplate(), None
        # outermost first so inner levels overwrite
        for level_id in reversed(levels):
            level = self.contexts[level_id]
            for rid, r in level.resources.items():
                resources[rid] = (r, level_id)
            for k, v in level.attributes.items():
                attributes[k] = (v, level_id)
        for level_id in levels:
            if self.contexts[level_id].process:
                process, process_provider = self.contexts[level_id].process, level_id
                break
        return EffectiveContext(ctx_id, resources, attributes, process, process_provider, tuple(levels))

    def influence_set(self, ctx_id: str) -> set[str]:
        """The activity surrounded by ``ctx_id`` and all its descendant activities."""
        self.context(ctx_id)
        out = set()
        stack = [ctx_id]
        while stack:
            cur = stack.pop()
            out.add(self.contexts[cur].activity)
            stack.extend(self.children[cur])
        return out

    def descendants_postorder(self, inst_id: str) -> Iterator[str]:
        """Descendant activity ids, children before parents; ``inst_id`` last."""
        ctx_id = self.context_of[inst_id]
        for child in list(self.children[ctx_id]):
            yield from self.descendants_postorder(self.contexts[child].activity)
        yield inst_id

    def live_children(self, inst_id: str) -> list[str]:
        ctx_id = self.context_of[inst_id]
        return [
            self.contexts[c].activity
            for c in self.children[ctx_id]
            if self.activities[self.contexts[c].activity].state == LIVE
        ]

    def roots(self) -> list[str]:
        return [cid for cid, c in self.contexts.items() if c.parent_context is None]
