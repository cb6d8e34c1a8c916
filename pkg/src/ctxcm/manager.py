"""The Context Manager.

Per agent the manager runs a small state machine over the incoming action
events. Stage numbers in the structured log:

1. a new activity starts (explicit signal, or drift out of the current one)
2. the surrounding context is identified, or the agent is asked to confirm
3. the context hierarchy is published to subscribed applications
4. applications use it (outside the manager)
5. the manager may suggest the next step of the focus context's process
6. every event is recorded against the focus context
7. sustained mismatch with the focus activity's signature counts as drift

Stage 0 marks bookkeeping records (skipped events, subscriptions, artifacts).
A single caller must drive a manager; it is not thread-safe by design.
"""

from __future__ import annotations

import itertools
import json
import logging
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, TextIO

from .cascade import ActivityInstance, ContextInstance
from .identify import (
    AMBIGUOUS,
    IDENTIFIED,
    ActionEvent,
    ConfirmationRequest,
    EventWindow,
    confirmation_request,
    detect_drift,
    drift_score,
    identify,
)
from .lifecycle import CASCADE, STRICT, Lifecycle
from .model import GenericContext, ModelError, Ontology, UnknownIdError, class_lineage
from .payload import canonical_json, effective_to_json, hierarchy_to_json

log = logging.getLogger(__name__)

TIMEOUT = object()  # confirmation policy result meaning "let the request lapse"

CONTROL_ACTIONS = frozenset(
    {"begin-activity", "end-activity", "new-activity", "switch-focus", "return-focus", "join-activity", "tag-artifact"}
)


def step_token(step_name: str) -> str:
    """The action token that marks a process step as done: ``"Book Rooms"`` -> ``book-rooms``."""
    return re.sub(r"[^a-z0-9]+", "-", step_name.lower()).strip("-")


@dataclass
class ManagerConfig:
    window_capacity: int = 25
    margin: float = 0.1
    drift_threshold: float = 0.2
    drift_k: int = 3
    # drift is scored over this many most recent events, not the whole window
    drift_window: int = 5
    # a pending confirmation lapses after this many further events (None: never)
    confirm_timeout_steps: int | None = 1
    global_context: dict[str, str] = field(default_factory=dict)
    end_mode: str = STRICT


@dataclass
class BehaviorRecord:
    context: str
    generic_origin: str
    events: list[ActionEvent] = field(default_factory=list)
    resources_touched: set[str] = field(default_factory=set)
    closed: bool = False


@dataclass(frozen=True)
class Suggestion:
    agent: str
    text: str
    basis: str
    offered_resource: str | None = None


@dataclass(frozen=True)
class ArtifactRecord:
    artifact_id: str
    name: str
    produced_at: int
    snapshot: str  # canonical JSON text of the cascade at tagging time

    @property
    def produced_in(self) -> dict[str, Any]:
        return json.loads(self.snapshot)


@dataclass(frozen=True)
class EvolutionReport:
    generic: str
    support: int
    min_support: int
    p: float
    counts: dict[str, int]
    promotions: tuple[tuple[str, int], ...]
    unresolved: tuple[str, ...] = ()

    def lines(self) -> list[str]:
        if self.support < self.min_support:
            return [f"no promotions (support {self.support} < {self.min_support})"]
        out = [
            f"promoted {rid} ({count}/{self.support} = {count / self.support:.2f})"
            for rid, count in self.promotions
        ]
        if not out:
            out.append(f"no promotions (no resource reached p={self.p:g} over {self.support} records)")
        for rid in self.unresolved:
            out.append(f"ignored {rid}: not a resource of the ontology")
        return out


@dataclass
class Subscription:
    app_id: str
    deliver: Callable[[str, dict[str, Any]], None]
    agents: frozenset[str] | None = None

    def wants(self, agent: str) -> bool:
        return not self.agents or agent in self.agents


class EventLog:
    """Structured log: one JSON object per stage transition."""

    def __init__(self, sink: TextIO | None = None, clock: Callable[[], float] | None = None):
        self.records: list[dict[str, Any]] = []
        self.sink = sink
        self.clock = clock

    def emit(self, tick: int | None, agent: str | None, stage: int, event: str, **detail: Any) -> None:
        rec: dict[str, Any] = {"tick": tick, "agent": agent, "stage": stage, "event": event, "detail": detail}
        if self.clock is not None:
            rec["time"] = self.clock()
        self.records.append(rec)
        if self.sink is not None:
            self.sink.write(canonical_json(rec) + "\n")

    def count(self, event: str) -> int:
        return sum(1 for r in self.records if r["event"] == event)


@dataclass
class _AgentState:
    window: EventWindow
    unattributed: deque[ActionEvent]
    drift_scores: list[float] = field(default_factory=list)
    identifying: bool = True
    confirmation: ConfirmationRequest | None = None
    confirmation_age: int = 0
    suggestion: Suggestion | None = None
    last_tick: int | None = None


class ContextManager:
    def __init__(
        self,
        ontology: Ontology,
        config: ManagerConfig | None = None,
        event_log: EventLog | None = None,
        confirm_policy: Callable[[ConfirmationRequest], Any] | None = None,
    ) -> None:
        self.config = config or ManagerConfig()
        self.log = event_log if event_log is not None else EventLog()
        self.ontology = ontology
        self.lifecycle = Lifecycle(ontology, on_end=self._context_ended)
        self.records: dict[str, BehaviorRecord] = {}
        self.artifacts: dict[str, ArtifactRecord] = {}
        self.subscriptions: dict[str, Subscription] = {}
        self.confirm_policy = confirm_policy
        self.now = 0
        self._agents: dict[str, _AgentState] = {}
        self._published: dict[str, str | None] = {}
        self._request_ids = (f"q{i}" for i in itertools.count(1))
        self._artifact_ids = (f"art{i}" for i in itertools.count(1))

    @property
    def cascade(self):
        return self.lifecycle.cascade

    def _state(self, agent: str) -> _AgentState:
        if agent not in self.ontology.agents:
            raise UnknownIdError("agent", agent)
        st = self._agents.get(agent)
        if st is None:
            cap = self.config.window_capacity
            st = self._agents[agent] = _AgentState(EventWindow(agent, cap), deque(maxlen=cap))
        return st

    # -- subscriptions -------------------------------------------------------

    def subscribe(
        self,
        app_id: str,
        deliver: Callable[[str, dict[str, Any]], None],
        agents: Iterable[str] | None = None,
        snapshot: bool = True,
    ) -> Subscription:
        """Register an application. With ``snapshot`` it immediately receives
        the current context of every agent it follows."""
        if app_id in self.subscriptions:
            raise ValueError(f"application {app_id!r} is already subscribed")
        sub = Subscription(app_id, deliver, frozenset(agents) if agents else None)
        self.subscriptions[app_id] = sub
        self.log.emit(self.now, None, 0, "subscribe", app=app_id, agents=sorted(sub.agents or ()))
        if snapshot:
            for agent in sorted(self._published):
                ctx = self.lifecycle.current_focus(agent)
                if ctx is not None and sub.wants(agent):
                    self.log.emit(self.now, agent, 3, "snapshot", app=app_id, context=ctx)
                    self._deliver(sub, "context-publish", self._publish_body(agent, ctx))
        return sub

    def unsubscribe(self, app_id: str) -> None:
        if self.subscriptions.pop(app_id, None) is not None:
            self.log.emit(self.now, None, 0, "unsubscribe", app=app_id)

    def _deliver(self, sub: Subscription, kind: str, body: dict[str, Any]) -> bool:
        try:
            sub.deliver(kind, body)
        except Exception as exc:  # never let one subscriber stall the loop
            log.warning("detaching %s after delivery failure: %s", sub.app_id, exc)
            self.subscriptions.pop(sub.app_id, None)
            self.log.emit(self.now, None, 0, "detach", app=sub.app_id, reason=str(exc))
            return False
        return True

    def _broadcast(self, agent: str, kind: str, body: dict[str, Any]) -> int:
        sent = 0
        for sub in list(self.subscriptions.values()):
            if sub.wants(agent) and self._deliver(sub, kind, body):
                sent += 1
        return sent

    # -- event intake --------------------------------------------------------

    def handle(self, event: ActionEvent) -> None:
        """Feed one action event through the loop. Malformed events are logged and skipped."""
        reason = self._reject_reason(event)
        if reason is not None:
            log.info("skipping event %r: %s", event, reason)
            self.log.emit(getattr(event, "timestamp", None), getattr(event, "agent", None), 0, "skipped", reason=reason)
            return
        st = self._state(event.agent)
        st.last_tick = event.timestamp
        self.now = event.timestamp
        agent = event.agent

        if st.confirmation is not None and self.config.confirm_timeout_steps is not None:
            st.confirmation_age += 1
            if st.confirmation_age >= self.config.confirm_timeout_steps:
                self.expire_confirmation(agent)

        if event.action in CONTROL_ACTIONS:
            try:
                self._control(event)
            except (ModelError, ValueError) as exc:
                self.log.emit(event.timestamp, agent, 0, "skipped", reason=str(exc), action=event.action)
            return

        st.window.push(event)
        if st.suggestion is not None and event.action == step_token(st.suggestion.text):
            st.suggestion = None

        focus = self.lifecycle.current_focus(agent)
        if focus is not None and not st.identifying:
            self._check_drift(agent, st, focus)
        if st.identifying and st.confirmation is None:
            self._try_identify(agent, st)

        focus = self.lifecycle.current_focus(agent)
        if focus is None:
            st.unattributed.append(event)
        else:
            backlog = [*st.unattributed, event]
            st.unattributed.clear()
            for e in backlog:
                self._record(focus, e)
            self.suggest(agent)

    def _reject_reason(self, event: Any) -> str | None:
        if not isinstance(event, ActionEvent):
            return f"not an action event: {type(event).__name__}"
        if not isinstance(event.timestamp, int) or isinstance(event.timestamp, bool):
            return "timestamp is not an integer tick"
        if not event.action:
            return "empty action token"
        if event.agent not in self.ontology.agents:
            return f"unknown agent {event.agent!r}"
        last = self._agents[event.agent].last_tick if event.agent in self._agents else None
        if last is not None and event.timestamp < last:
            return f"tick {event.timestamp} goes back from {last}"
        return None

    def _check_drift(self, agent: str, st: _AgentState, focus: str) -> None:
        cls = self.ontology.activity_class(self._class_of(focus))
        recent = list(st.window.events)[-self.config.drift_window:]
        st.drift_scores.append(drift_score(cls, [e.action for e in recent]))
        k = self.config.drift_k
        if detect_drift(st.drift_scores, self.config.drift_threshold, k):
            self.log.emit(self.now, agent, 7, "drift", context=focus, scores=st.drift_scores[-k:])
            st.drift_scores.clear()
            st.identifying = True
            st.window.keep_last(self.config.drift_window)
            self.log.emit(self.now, agent, 1, "new-activity", reason="drift")

    def _candidates(self):
        return [c for _, c in sorted(self.ontology.activity_classes.items()) if c.signature and c.signature.weighted_tokens]

    def _try_identify(self, agent: str, st: _AgentState) -> None:
        candidates = self._candidates()
        if not candidates or not len(st.window):
            return
        result = identify(st.window, candidates, self.config.margin)
        if result.decision == IDENTIFIED:
            self._adopt(agent, result.identified, "identified", score=result.ranking[0][1])
        elif result.decision == AMBIGUOUS:
            req = confirmation_request(result, agent, next(self._request_ids))
            st.confirmation, st.confirmation_age = req, 0
            candidates_json = [[c, s] for c, s in req.candidates]
            self.log.emit(self.now, agent, 2, "ambiguous", candidates=candidates_json)
            self.log.emit(self.now, agent, 2, "confirm-request", request=req.request_id, candidates=candidates_json)
            self._broadcast(
                agent,
                "confirm-request",
                {"agent": agent, "request_id": req.request_id, "candidates": candidates_json},
            )
            if self.confirm_policy is not None:
                choice = self.confirm_policy(req)
                if choice is not TIMEOUT:
                    self.answer_confirmation(agent, req.request_id, choice)

    def answer_confirmation(self, agent: str, request_id: str, choice: str | None) -> bool:
        """Apply the agent's reply; ``None`` keeps the current context.

        Returns False when no such request is pending.
        """
        st = self._state(agent)
        req = st.confirmation
        if req is None or req.request_id != request_id:
            return False
        st.confirmation = None
        valid = {c for c, _ in req.candidates}
        if choice is not None and choice not in valid:
            self.log.emit(self.now, agent, 2, "confirm-answer", request=request_id, choice=None, rejected=choice)
            return True
        self.log.emit(self.now, agent, 2, "confirm-answer", request=request_id, choice=choice)
        if choice is not None:
            self._adopt(agent, choice, "confirmed")
        return True

    def expire_confirmation(self, agent: str) -> None:
        st = self._state(agent)
        if st.confirmation is not None:
            self.log.emit(self.now, agent, 2, "confirm-timeout", request=st.confirmation.request_id)
            st.confirmation = None

    def pending_confirmation(self, agent: str) -> ConfirmationRequest | None:
        return self._state(agent).confirmation

    def _class_of(self, ctx_id: str) -> str:
        return self.cascade.activities[self.cascade.contexts[ctx_id].activity].class_id

    def _adopt(self, agent: str, class_id: str, how: str, **detail: Any) -> None:
        """Make an instance of ``class_id`` the agent's focus, creating it if needed."""
        st = self._state(agent)
        focus = self.lifecycle.current_focus(agent)
        if focus is not None and self._class_of(focus) == class_id:
            self.log.emit(self.now, agent, 2, "reaffirmed", activity_class=class_id, context=focus)
            st.identifying = False
            st.drift_scores.clear()
            return
        for ctx_id in self.lifecycle.focus_state(agent).suspended:
            if self._class_of(ctx_id) == class_id:
                self.log.emit(self.now, agent, 2, "identified", activity_class=class_id, context=ctx_id, how=how, resumed=True, **detail)
                self.lifecycle.switch_focus(agent, ctx_id)
                break
        else:
            parent = self._ensure_ancestors(agent, class_id)
            _, ctx = self.lifecycle.begin_activity(agent, class_id, parent, at=self.now)
            self._open_record(ctx)
            self.log.emit(self.now, agent, 2, "identified", activity_class=class_id, context=ctx.id, how=how, resumed=False, **detail)
        self._sync_focus()

    def _ensure_ancestors(self, agent: str, class_id: str) -> str | None:
        """Return the live activity an instance of ``class_id`` should nest under,
        beginning any missing ancestor levels (without moving focus)."""
        ancestors = class_lineage(class_id, self.ontology)[1:]
        if not ancestors:
            return None
        focus = self.lifecycle.current_focus(agent)
        in_focus_chain = set()
        if focus is not None:
            in_focus_chain = {self.cascade.contexts[c].activity for c in self.cascade.lineage(focus)}
        live = self.lifecycle.live_activities(agent)
        found, depth = None, len(ancestors)
        for i, anc in enumerate(ancestors):
            matches = [a for a in live if a.class_id == anc]
            if matches:
                preferred = [a for a in matches if a.id in in_focus_chain]
                found, depth = (preferred or matches)[-1], i
                break
        parent = found.id if found is not None else None
        for anc in reversed(ancestors[:depth]):
            inst, ctx = self.lifecycle.begin_activity(agent, anc, parent, at=self.now, focus=False)
            self._open_record(ctx)
            self.log.emit(self.now, agent, 1, "begin-activity", activity_class=anc, context=ctx.id, implicit=True)
            parent = inst.id
        return parent

    def _sync_focus(self) -> None:
        """Publish once for every agent whose focus moved since the last sync."""
        current = self.lifecycle.focus_map()
        for agent in current:
            before, after = self._published.get(agent), current[agent]
            if before == after:
                continue
            self._published[agent] = after
            st = self._state(agent)
            st.suggestion = None
            st.drift_scores.clear()
            cls = self.ontology.activity_classes.get(self._class_of(after)) if after else None
            st.identifying = cls is None or not (cls.signature and cls.signature.weighted_tokens)
            self.log.emit(self.now, agent, 3, "focus-change", previous=before, context=after)
            if after is None:
                self.log.emit(self.now, agent, 3, "focus-cleared", previous=before)
            else:
                self.publish(agent)

    def _publish_body(self, agent: str, ctx: str) -> dict[str, Any]:
        return {
            "agent": agent,
            "focus": ctx,
            "hierarchy": hierarchy_to_json(self.cascade, ctx),
            "global": dict(self.config.global_context),
        }

    def publish(self, agent: str) -> dict[str, Any] | None:
        ctx = self.lifecycle.current_focus(agent)
        if ctx is None:
            log.info("not publishing for %s: no focus", agent)
            self.log.emit(self.now, agent, 3, "publish-skipped", reason="no focus")
            return None
        body = self._publish_body(agent, ctx)
        sent = self._broadcast(agent, "context-publish", body)
        self.log.emit(self.now, agent, 3, "publish", context=ctx, levels=len(body["hierarchy"]), deliveries=sent)
        return body

    # -- record keeping ------------------------------------------------------

    def _open_record(self, ctx: ContextInstance) -> None:
        self.records[ctx.id] = BehaviorRecord(ctx.id, ctx.generic_origin)

    def _record(self, ctx_id: str, event: ActionEvent) -> None:
        rec = self.records[ctx_id]
        rec.events.append(event)
        for ref in (event.target, event.attributes.get("resource")):
            if ref is not None and ref in self.ontology.resources:
                rec.resources_touched.add(ref)
        self.log.emit(event.timestamp, event.agent, 6, "record", context=ctx_id, action=event.action)

    def _context_ended(self, ctx: ContextInstance, activity: ActivityInstance) -> None:
        rec = self.records.get(ctx.id)
        if rec is None:
            rec = self.records[ctx.id] = BehaviorRecord(ctx.id, ctx.generic_origin)
        rec.closed = True
        self.log.emit(self.now, None, 1, "end-activity", activity=activity.id, context=ctx.id)

    # -- suggestions ---------------------------------------------------------

    def suggest(self, agent: str) -> Suggestion | None:
        """Offer the first process step not yet seen in the focus context's record.

        At most one suggestion is outstanding per agent; it is cleared when
        the suggested step's action token is observed or the focus moves.
        """
        st = self._state(agent)
        ctx = self.lifecycle.current_focus(agent)
        if ctx is None or st.suggestion is not None:
            return None
        seen = {e.action for e in self.records[ctx].events}
        process = self.cascade.effective_context(ctx).process
        for step in process.atomic_steps():
            if step_token(step) not in seen:
                s = Suggestion(agent, step, ctx)
                st.suggestion = s
                self.log.emit(self.now, agent, 5, "suggestion", text=step, context=ctx)
                self._broadcast(agent, "suggestion", {"agent": agent, "text": step, "basis": ctx, "offered_resource": None})
                return s
        return None

    # -- explicit commands ---------------------------------------------------

    def _control(self, event: ActionEvent) -> None:
        agent, action, target = event.agent, event.action, event.target
        st = self._state(agent)
        if action == "begin-activity":
            if target is None:
                raise ValueError("begin-activity needs an activity class")
            self.begin_activity(agent, target)
        elif action == "end-activity":
            inst = target
            if inst is None:
                focus = self.lifecycle.current_focus(agent)
                if focus is None:
                    raise ValueError("end-activity with no target and no focus")
                inst = self.cascade.contexts[focus].activity
            elif inst in self.cascade.contexts:
                inst = self.cascade.contexts[inst].activity
            self.end_activity(inst, event.attributes.get("mode", self.config.end_mode))
        elif action == "new-activity":
            st.identifying = True
            st.drift_scores.clear()
            st.window.clear()
            self.log.emit(self.now, agent, 1, "new-activity", reason="signal")
        elif action == "switch-focus":
            if target is None:
                raise ValueError("switch-focus needs a context id")
            self.switch_focus(agent, target)
        elif action == "return-focus":
            self.lifecycle.return_to_previous(agent)
            self._sync_focus()
        elif action == "join-activity":
            if target is None:
                raise ValueError("join-activity needs an activity id")
            self.join_activity(agent, target)
        elif action == "tag-artifact":
            focus = self.lifecycle.current_focus(agent)
            if target is None or focus is None:
                raise ValueError("tag-artifact needs a name and a focus")
            self.tag_artifact(target, focus)

    def begin_activity(self, agent: str, class_id: str) -> ContextInstance:
        self._state(agent)
        self.ontology.activity_class(class_id)
        parent = self._ensure_ancestors(agent, class_id)
        _, ctx = self.lifecycle.begin_activity(agent, class_id, parent, at=self.now)
        self._open_record(ctx)
        self.log.emit(self.now, agent, 1, "begin-activity", activity_class=class_id, context=ctx.id, implicit=False)
        self._sync_focus()
        return ctx

    def switch_focus(self, agent: str, ctx_id: str) -> None:
        self.lifecycle.switch_focus(agent, ctx_id)
        self._sync_focus()

    def join_activity(self, agent: str, inst_id: str) -> ContextInstance:
        self._state(agent)
        ctx = self.lifecycle.join(agent, inst_id)
        self.log.emit(self.now, agent, 0, "join", activity=inst_id, context=ctx.id)
        self._sync_focus()
        return ctx

    def end_activity(self, inst_id: str, mode: str = STRICT) -> list[ContextInstance]:
        ended = self.lifecycle.end_activity(inst_id, mode, at=self.now)
        self._sync_focus()
        return ended

    def end_all(self) -> None:
        """End every live root activity, cascading; used at the end of a replay."""
        for inst in list(self.cascade.activities.values()):
            if inst.parent is None and inst.state == "live":
                self.end_activity(inst.id, CASCADE)

    # -- artifacts and evolution ---------------------------------------------

    def tag_artifact(self, name: str, ctx_id: str) -> ArtifactRecord:
        ctx = self.cascade.context(ctx_id)
        if ctx.state == "ended":
            raise ModelError(f"context {ctx_id!r} has ended")
        snapshot = {
            "context": ctx_id,
            "hierarchy": hierarchy_to_json(self.cascade, ctx_id),
            "effective": effective_to_json(self.cascade, ctx_id),
        }
        rec = ArtifactRecord(next(self._artifact_ids), name, self.now, canonical_json(snapshot))
        self.artifacts[rec.artifact_id] = rec
        self.log.emit(self.now, None, 0, "artifact", artifact=rec.artifact_id, name=name, context=ctx_id)
        return rec

    def evolve(self, generic_id: str, p: float, n: int) -> EvolutionReport:
        report, onto = evolve(self.ontology, self.records.values(), generic_id, p, n)
        self.ontology = onto
        self.lifecycle.ontology = onto
        self.log.emit(self.now, None, 0, "evolve", generic=generic_id, promotions=[r for r, _ in report.promotions])
        return report


def evolve(
    ontology: Ontology,
    records: Iterable[BehaviorRecord],
    generic_id: str,
    p: float,
    n: int,
) -> tuple[EvolutionReport, Ontology]:
    """Promote resources touched in at least a fraction ``p`` of the closed
    records of ``generic_id``, provided there are at least ``n`` of them.

    Records are only read. Resources are only ever added.
    """
    try:
        g = ontology.generic_contexts[generic_id]
    except KeyError:
        raise UnknownIdError("generic context", generic_id) from None
    closed = [r for r in records if r.closed and r.generic_origin == generic_id]
    m = len(closed)
    counts: dict[str, int] = {}
    for r in closed:
        for rid in r.resources_touched:
            counts[rid] = counts.get(rid, 0) + 1
    counts = dict(sorted(counts.items()))
    if m < n or m == 0:
        return EvolutionReport(generic_id, m, n, p, counts, ()), ontology

    promotions, unresolved = [], []
    for rid, count in counts.items():
        if count < p * m - 1e-9 or rid in g.resources:
            continue
        if rid not in ontology.resources:
            unresolved.append(rid)
            continue
        promotions.append((rid, count))
    report = EvolutionReport(generic_id, m, n, p, counts, tuple(promotions), tuple(unresolved))
    if not promotions:
        return report, ontology
    new_g = GenericContext(
        g.id, g.for_class, g.resources + tuple(r for r, _ in promotions), g.process, dict(g.attributes)
    )
    return report, ontology.with_generic_context(new_g)


def run_loop(
    events: Iterable[ActionEvent],
    ontology: Ontology,
    config: ManagerConfig | None = None,
    **kwargs: Any,
) -> ContextManager:
    """Drive a fresh manager over ``events`` and return it."""
    cm = ContextManager(ontology, config, **kwargs)
    for e in events:
        cm.handle(e)
    return cm
