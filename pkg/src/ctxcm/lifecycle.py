"""Context lifetime and per-agent contextual focus.

A context is created when its activity begins and ends with it. Each agent
focuses on at most one context at a time; contexts it has left are kept on a
suspended list, most recent first.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

from .cascade import (
    ACTIVE,
    ENDED,
    LIVE,
    SUSPENDED,
    ActivityInstance,
    Cascade,
    CascadeError,
    ContextInstance,
)
from .model import ContextOverrides, ModelError, Ontology, UnknownIdError, specialize

STRICT, CASCADE = "strict", "cascade"


class LifecycleError(ModelError):
    pass


@dataclass(frozen=True)
class FocusState:
    agent: str
    focused: str | None = None
    suspended: tuple[str, ...] = ()


@dataclass
class _Focus:
    focused: str | None = None
    suspended: list[str] = field(default_factory=list)


class Lifecycle:
    """Creates and ends activities, and tracks where each agent's attention is.

    ``on_end`` is called with each context as it ends, after its state has
    been set to ended; the manager uses it to close behaviour records.
    """

    def __init__(
        self,
        ontology: Ontology,
        cascade: Cascade | None = None,
        on_end: Callable[[ContextInstance, ActivityInstance], None] | None = None,
    ) -> None:
        self.ontology = ontology
        self.cascade = cascade if cascade is not None else Cascade()
        self.on_end = on_end
        self._focus: dict[str, _Focus] = {}
        self._activity_ids = (f"a{i}" for i in itertools.count(1))
        self._context_ids = (f"c{i}" for i in itertools.count(1))

    def _agent(self, agent: str) -> _Focus:
        if agent not in self.ontology.agents:
            raise UnknownIdError("agent", agent)
        return self._focus.setdefault(agent, _Focus())

    def begin_activity(
        self,
        agent: str,
        class_id: str,
        parent: str | None = None,
        *,
        at: int = 0,
        focus: bool = True,
        overrides: ContextOverrides | None = None,
    ) -> tuple[ActivityInstance, ContextInstance]:
        """Start an activity and create the context surrounding it.

        With ``focus=False`` the agent is involved in the new context but its
        focus is left alone; the manager uses this for ancestor levels it
        fills in around an identified activity.
        """
        state = self._agent(agent)
        self.ontology.activity_class(class_id)
        generic = self.ontology.context_for(class_id)
        if generic is None:
            raise LifecycleError(f"activity class {class_id!r} has no generic context")
        if parent is not None and self.cascade.activity(parent).state != LIVE:
            raise LifecycleError(f"parent activity {parent!r} has ended")

        payload = specialize(self.ontology, generic.id, class_id, overrides)
        inst = ActivityInstance(next(self._activity_ids), class_id, parent, {agent}, started_at=at)
        ctx = ContextInstance(
            id=next(self._context_ids),
            activity=inst.id,
            generic_origin=payload.generic_origin,
            resources=payload.resources,
            process=payload.process,
            attributes=payload.attributes,
            agents_involved={agent},
        )
        try:
            self.cascade.add(inst, ctx)
        except CascadeError as exc:
            raise LifecycleError(str(exc)) from exc
        if focus:
            self._set_focus(agent, state, ctx.id)
        return inst, ctx

    def join(self, agent: str, inst_id: str) -> ContextInstance:
        """Involve another agent in a live activity and move its focus there."""
        self._agent(agent)
        inst = self.cascade.activity(inst_id)
        if inst.state != LIVE:
            raise LifecycleError(f"activity {inst_id!r} has ended")
        ctx = self.cascade.context_for_activity(inst_id)
        inst.agents.add(agent)
        ctx.agents_involved.add(agent)
        self.switch_focus(agent, ctx.id)
        return ctx

    def switch_focus(self, agent: str, target: str) -> FocusState:
        state = self._agent(agent)
        ctx = self.cascade.context(target)
        if ctx.state == ENDED:
            raise LifecycleError(f"context {target!r} has ended")
        if agent not in ctx.agents_involved:
            raise LifecycleError(f"agent {agent!r} is not involved in context {target!r}")
        if state.focused != target:
            self._set_focus(agent, state, target)
        return self.focus_state(agent)

    def _set_focus(self, agent: str, state: _Focus, target: str) -> None:
        previous = state.focused
        if target in state.suspended:
            state.suspended.remove(target)
        if previous is not None:
            state.suspended.insert(0, previous)
        state.focused = target
        self.cascade.contexts[target].state = ACTIVE
        if previous is not None:
            self._refresh_state(previous)

    def _refresh_state(self, ctx_id: str) -> None:
        ctx = self.cascade.contexts[ctx_id]
        if ctx.state == ENDED:
            return
        focused_by_someone = any(f.focused == ctx_id for f in self._focus.values())
        ctx.state = ACTIVE if focused_by_someone else SUSPENDED

    def end_activity(self, inst_id: str, mode: str = STRICT, *, at: int = 0) -> list[ContextInstance]:
        """End an activity and its context; return the contexts ended, innermost first.

        In strict mode an activity with live children cannot be ended. In
        cascade mode live descendants are ended first, depth first.
        """
        if mode not in (STRICT, CASCADE):
            raise ValueError(f"unknown end mode {mode!r}")
        inst = self.cascade.activity(inst_id)
        if inst.state != LIVE:
            raise LifecycleError(f"activity {inst_id!r} has already ended")
        if mode == STRICT:
            live = self.cascade.live_children(inst_id)
            if live:
                raise LifecycleError(f"activity {inst_id!r} has live children: {', '.join(live)}")
            order = [inst_id]
        else:
            order = [
                a for a in self.cascade.descendants_postorder(inst_id)
                if self.cascade.activities[a].state == LIVE
            ]

        ended = []
        for a in order:
            activity = self.cascade.activities[a]
            ctx = self.cascade.context_for_activity(a)
            activity.state = ENDED
            activity.ended_at = at
            ctx.state = ENDED
            for f in self._focus.values():
                if f.focused == ctx.id:
                    f.focused = None
                if ctx.id in f.suspended:
                    f.suspended.remove(ctx.id)
            ended.append(ctx)
            if self.on_end is not None:
                self.on_end(ctx, activity)
        return ended

    def current_focus(self, agent: str) -> str | None:
        return self._agent(agent).focused

    def focus_state(self, agent: str) -> FocusState:
        state = self._agent(agent)
        return FocusState(agent, state.focused, tuple(state.suspended))

    def focus_map(self) -> dict[str, str | None]:
        return {a: f.focused for a, f in self._focus.items()}

    def return_to_previous(self, agent: str) -> FocusState:
        """Focus on the most recently suspended context, if there is one."""
        state = self._agent(agent)
        if state.suspended:
            return self.switch_focus(agent, state.suspended[0])
        return self.focus_state(agent)

    def live_activities(self, agent: str | None = None) -> list[ActivityInstance]:
        return [
            a for a in self.cascade.activities.values()
            if a.state == LIVE and (agent is None or agent in a.agents)
        ]
