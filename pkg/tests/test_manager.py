from __future__ import annotations

import dataclasses

import pytest
from hypothesis import given, strategies as st

from conftest import DEMO, JOB, RECRUIT
from ctxcm.formats.wire import EnvelopeWriter
from ctxcm.identify import ActionEvent
from ctxcm.lifecycle import CASCADE
from ctxcm.manager import (
    TIMEOUT,
    BehaviorRecord,
    ContextManager,
    ManagerConfig,
    evolve,
    run_loop,
    step_token,
)
from ctxcm.model import ActivityClass, Agent, GenericContext, ModelError, Ontology, Resource, UnknownIdError


def ev(t, action, target=None, agent="self", **attrs):
    return ActionEvent(t, agent, action, target, attrs)


class Inbox:
    def __init__(self):
        self.items = []

    def __call__(self, kind, body):
        self.items.append((kind, body))

    def kinds(self):
        return [k for k, _ in self.items]


def with_peer(onto: Ontology) -> Ontology:
    agents = dict(onto.agents)
    agents["peer"] = Agent("peer", "person", "Peer")
    return dataclasses.replace(onto, agents=agents)


WORKSHOP_TOKENS = ["book-flight", "book-hotel", "email-participant", "book-room"]


def identified_manager(onto, config=None):
    cm = ContextManager(onto, config)
    for i, a in enumerate(WORKSHOP_TOKENS, 1):
        cm.handle(ev(i, a))
    return cm


def test_step_token():
    assert step_token("Book Rooms") == "book-rooms"
    assert step_token("  Initial   Agenda!") == "initial-agenda"


def test_empty_source_changes_nothing(workshop):
    cm = run_loop([], workshop)
    assert cm.log.records == [] and not cm.cascade.contexts


def test_workshop_replay(workshop, workshop_trace):
    inbox = Inbox()
    cm = ContextManager(workshop)
    cm.subscribe("app", inbox)
    for e in workshop_trace:
        cm.handle(e)
    publishes = [b for k, b in inbox.items if k == "context-publish"]
    assert len(publishes) == 1
    hierarchy = publishes[0]["hierarchy"]
    assert len(hierarchy) == 4
    assert [lvl["depth"] for lvl in hierarchy] == [0, 1, 2, 3]
    assert "travel department" in {r["name"] for r in hierarchy[0]["resources"]}
    suggestions = [b["text"] for k, b in inbox.items if k == "suggestion"]
    assert suggestions[0] == "Initial Agenda"
    assert cm.log.count("drift") == 0
    focus = cm.lifecycle.current_focus("self")
    assert len(cm.records[focus].events) == 29  # every non-control event, backfilled ones included


def test_unattributed_events_are_backfilled(workshop):
    cm = identified_manager(workshop)
    focus = cm.lifecycle.current_focus("self")
    assert [e.action for e in cm.records[focus].events] == WORKSHOP_TOKENS


def test_filtered_subscription_receives_nothing(workshop):
    cm = ContextManager(with_peer(workshop))
    mine, theirs = Inbox(), Inbox()
    cm.subscribe("mine", mine, agents=["self"])
    cm.subscribe("theirs", theirs, agents=["peer"])
    for i, a in enumerate(WORKSHOP_TOKENS, 1):
        cm.handle(ev(i, a))
    assert "context-publish" in mine.kinds()
    assert theirs.items == []


def test_broadcast_bytes_identical(workshop):
    cm = ContextManager(workshop)
    wires = {}
    for app in ("a", "b"):
        writer, buf = EnvelopeWriter(), []
        wires[app] = buf
        cm.subscribe(app, lambda kind, body, w=writer, b=buf: b.append(w.next(kind, body)[1]))
    for i, a in enumerate(WORKSHOP_TOKENS, 1):
        cm.handle(ev(i, a))
    assert wires["a"] and wires["a"] == wires["b"]


def test_failing_subscriber_is_detached(workshop):
    cm = ContextManager(workshop)
    good = Inbox()

    def broken(kind, body):
        raise ConnectionError("gone")

    cm.subscribe("broken", broken)
    cm.subscribe("good", good)
    for i, a in enumerate(WORKSHOP_TOKENS, 1):
        cm.handle(ev(i, a))
    assert "broken" not in cm.subscriptions
    assert "context-publish" in good.kinds()
    assert cm.log.count("detach") == 1


def test_late_subscriber_gets_snapshot(workshop):
    cm = identified_manager(workshop)
    late = Inbox()
    cm.subscribe("late", late)
    assert late.kinds() == ["context-publish"]
    assert len(late.items[0][1]["hierarchy"]) == 4
    assert cm.log.count("publish") == 1 and cm.log.count("snapshot") == 1


def test_publish_without_focus(workshop):
    cm = ContextManager(workshop)
    assert cm.publish("self") is None
    assert cm.log.count("publish-skipped") == 1


def test_global_context_in_publish(workshop):
    inbox = Inbox()
    cm = ContextManager(workshop, ManagerConfig(global_context={"location": "Canberra"}))
    cm.subscribe("app", inbox)
    for i, a in enumerate(WORKSHOP_TOKENS, 1):
        cm.handle(ev(i, a))
    assert inbox.items[0][1]["global"] == {"location": "Canberra"}


def test_join_shares_context(workshop):
    cm = ContextManager(with_peer(workshop))
    ctx = cm.begin_activity("self", JOB)
    cm.join_activity("peer", ctx.activity)
    assert ctx.agents_involved == {"self", "peer"}
    assert len(cm.cascade.contexts) == 1
    cm.end_activity(ctx.activity, CASCADE)
    assert cm.lifecycle.current_focus("self") is None and cm.lifecycle.current_focus("peer") is None
    with pytest.raises(ModelError):
        cm.join_activity("peer", ctx.activity)


def test_explicit_begin_creates_ancestors(workshop):
    cm = ContextManager(workshop)
    ctx = cm.begin_activity("self", DEMO)
    assert len(cm.cascade.lineage(ctx.id)) == 4
    assert cm.log.count("publish") == 1


def test_suggestions_walk_the_process(workshop):
    cm = ContextManager(workshop)
    ctx = cm.begin_activity("self", DEMO)
    assert cm._agents["self"].suggestion is None
    assert cm.suggest("self").text == "Initial Agenda"
    cm.handle(ev(1, "initial-agenda"))
    cm.handle(ev(2, "contact-participants"))
    assert cm._agents["self"].suggestion.text == "Book Rooms"
    cm.handle(ev(3, "book-rooms"))
    cm.handle(ev(4, "book-travel"))
    assert cm._agents["self"].suggestion is None
    assert cm.suggest("self") is None
    assert ctx.id == cm.lifecycle.current_focus("self")


def test_conditional_steps_are_not_suggested(workshop):
    cm = ContextManager(workshop)
    cm.begin_activity("self", DEMO)
    texts = []
    for i, step in enumerate(["Initial Agenda", "Contact Participants", "Book Rooms", "Book Travel"], 1):
        texts.append(cm._agents["self"].suggestion.text if cm._agents["self"].suggestion else cm.suggest("self").text)
        cm.handle(ev(i, step_token(step)))
    assert "Revise Agenda" not in texts


def test_at_most_one_pending_suggestion(workshop):
    cm = ContextManager(workshop)
    cm.begin_activity("self", DEMO)
    first = cm.suggest("self")
    assert first is not None and cm.suggest("self") is None


def test_two_phase_drift(two_workshops, two_phase_trace):
    cm = run_loop(two_phase_trace, two_workshops, confirm_policy=lambda req: req.candidates[0][0])
    assert cm.log.count("drift") == 1
    ids = [r["detail"]["activity_class"] for r in cm.log.records if r["event"] == "identified"]
    assert ids == [DEMO, RECRUIT]
    assert cm.log.count("publish") == 2
    drift_at = next(i for i, r in enumerate(cm.log.records) if r["event"] == "drift")
    after = [r["event"] for r in cm.log.records[drift_at:]]
    assert after.count("identified") == 1 and after.count("publish") == 1


def test_no_drift_within_k_events_of_a_switch(two_workshops):
    cm = ContextManager(two_workshops)
    cm.begin_activity("self", DEMO)
    for t in range(1, 3):
        cm.handle(ev(t, "unrelated"))
    assert cm.log.count("drift") == 0
    cm.handle(ev(3, "unrelated"))
    assert cm.log.count("drift") == 1


def test_confirmation_policies(two_workshops):
    def run(policy):
        cm = ContextManager(two_workshops, confirm_policy=policy)
        cm.handle(ev(1, "book-flight"))
        cm.handle(ev(2, "book-hotel"))
        return cm

    first = run(lambda req: req.candidates[0][0])
    assert first.log.count("confirm-request") == 1
    assert first._class_of(first.lifecycle.current_focus("self")) == DEMO
    second = run(lambda req: req.candidates[1][0])
    assert second._class_of(second.lifecycle.current_focus("self")) == RECRUIT
    lapsed = run(lambda req: TIMEOUT)
    assert lapsed.pending_confirmation("self") is not None
    lapsed.handle(ev(3, "browse-page"))
    assert lapsed.log.count("confirm-timeout") == 1
    assert lapsed.lifecycle.current_focus("self") is None


def test_manual_confirmation_answer(two_workshops):
    cm = ContextManager(two_workshops)
    cm.handle(ev(1, "book-flight"))
    cm.handle(ev(2, "book-hotel"))
    req = cm.pending_confirmation("self")
    assert req is not None and req.request_id == "q1"
    assert not cm.answer_confirmation("self", "q9", DEMO)
    assert cm.answer_confirmation("self", "q1", RECRUIT)
    assert cm._class_of(cm.lifecycle.current_focus("self")) == RECRUIT


def test_malformed_events_are_skipped(workshop):
    cm = ContextManager(workshop)
    cm.handle(ev(5, "x"))
    cm.handle(ev(3, "y"))  # goes back in time
    cm.handle(ev(6, "z", agent="ghost"))
    cm.handle(ev(7, "end-activity"))  # nothing to end
    skipped = [r["detail"]["reason"] for r in cm.log.records if r["event"] == "skipped"]
    assert len(skipped) == 3
    assert "goes back" in skipped[0] and "ghost" in skipped[1] and "no focus" in skipped[2]


# -- artifacts ---------------------------------------------------------------


def test_tag_artifact_snapshot(workshop):
    cm = ContextManager(workshop)
    ctx = cm.begin_activity("self", DEMO)
    art = cm.tag_artifact("workshop-agenda.doc", ctx.id)
    snap = art.produced_in
    assert len(snap["hierarchy"]) == 4
    assert [lvl["generic_origin"] for lvl in snap["hierarchy"]] == [
        "Organising a Workshop", "Task Context", "Project Context", "Work Context"
    ]
    original = art.snapshot
    ctx.attributes["duration"] = "three days"
    cm.end_activity(ctx.activity)
    assert cm.artifacts[art.artifact_id].snapshot == original
    with pytest.raises(ModelError):
        cm.tag_artifact("late.doc", ctx.id)


def test_snapshots_differ_in_exactly_the_added_resource(workshop):
    cm = ContextManager(workshop)
    ctx = cm.begin_activity("self", DEMO)
    before = cm.tag_artifact("v1", ctx.id).produced_in
    ctx.resources["video-projector"] = workshop.resources["video-projector"]
    after = cm.tag_artifact("v2", ctx.id).produced_in
    ids = lambda snap: {r["id"] for r in snap["hierarchy"][0]["resources"]}
    assert ids(after) - ids(before) == {"video-projector"} and ids(before) <= ids(after)
    before["hierarchy"][0]["resources"] = after["hierarchy"][0]["resources"]
    before["effective"]["resources"] = after["effective"]["resources"]
    assert before == after


# -- evolution ---------------------------------------------------------------

G = "Organising a Workshop"


def records(touched: list[set[str]], closed=True):
    return [BehaviorRecord(f"c{i}", G, [], set(t), closed) for i, t in enumerate(touched)]


def test_evolve_promotes_frequent_resource(workshop):
    report, onto = evolve(workshop, records([{"video-projector"}] * 3), G, 0.6, 3)
    assert report.promotions == (("video-projector", 3),)
    assert report.lines() == ["promoted video-projector (3/3 = 1.00)"]
    assert "video-projector" in onto.generic_contexts[G].resources
    assert onto.version == workshop.version + 1
    assert "video-projector" not in workshop.generic_contexts[G].resources


def test_evolve_support_gate(workshop):
    report, onto = evolve(workshop, records([{"video-projector"}] * 2), G, 0.6, 3)
    assert report.promotions == () and onto is workshop
    assert report.lines() == ["no promotions (support 2 < 3)"]


def test_evolve_rare_resource_not_promoted(workshop):
    report, _ = evolve(workshop, records([{"video-projector"}, set(), set()]), G, 0.6, 3)
    assert report.promotions == ()


def test_evolve_ignores_open_and_foreign_records(workshop):
    recs = records([{"video-projector"}] * 3, closed=False)
    recs += [BehaviorRecord("x", "Task Context", [], {"video-projector"}, True)] * 3
    report, _ = evolve(workshop, recs, G, 0.6, 3)
    assert report.support == 0 and report.promotions == ()


def test_evolve_unknown_generic(workshop):
    with pytest.raises(UnknownIdError):
        evolve(workshop, [], "nope", 0.5, 1)


def test_evolve_from_replayed_records(workshop):
    cm = ContextManager(workshop)
    for round_ in range(3):
        ctx = cm.begin_activity("self", DEMO)
        cm.handle(ev(round_ * 10 + 1, "use-device", "video-projector"))
        cm.end_activity(ctx.activity)
    report = cm.evolve(G, 0.6, 3)
    assert report.promotions == (("video-projector", 3),)
    assert "video-projector" in cm.ontology.generic_contexts[G].resources
    fresh = cm.begin_activity("self", DEMO)
    assert "video-projector" in fresh.resources


def test_record_touches_resource_attribute(workshop):
    cm = ContextManager(workshop)
    ctx = cm.begin_activity("self", DEMO)
    cm.handle(ev(1, "project-slides", "slides.ppt", resource="video-projector"))
    cm.handle(ev(2, "book-flight", "CBR-SYD"))
    assert cm.records[ctx.id].resources_touched == {"video-projector"}


pool = ["calendar", "email", "video-projector", "names", "funds-monitor"]


@given(st.lists(st.sets(st.sampled_from(pool)), max_size=8), st.floats(0, 1), st.integers(0, 6))
def test_evolve_oracle(touched, p, n):
    onto = Ontology.build(
        [ActivityClass("a", "a")],
        [GenericContext(G, "a", ("calendar",))],
        [Resource(r, "information", r) for r in pool],
    )
    report, new = evolve(onto, records(touched), G, p, n)
    m = len(touched)
    before = set(onto.generic_contexts[G].resources)
    after = new.generic_contexts[G].resources
    assert before <= set(after)
    assert len(after) == len(set(after))
    expected = set()
    if m >= n and m > 0:
        counts = {r: sum(r in t for t in touched) for r in pool}
        # only resources that were actually touched are candidates
        expected = {r for r, c in counts.items() if c and r not in before and c >= p * m - 1e-9}
    assert {r for r, _ in report.promotions} == expected
    assert set(after) == before | expected


# -- whole-loop properties -----------------------------------------------------

LOOP_TOKENS = [
    "book-flight", "book-hotel", "email-participant", "book-room", "post-job-ad", "schedule-interview",
    "browse-page", "initial-agenda", "post-job-ad", "new-activity", "end-activity", "return-focus",
]


@given(st.lists(st.tuples(st.sampled_from(["self", "peer"]), st.sampled_from(LOOP_TOKENS)), max_size=60),
       st.sampled_from(["first", "second", "timeout"]))
def test_loop_properties(steps, policy):
    from ctxcm import bundled
    from ctxcm.formats.ontology import parse_ontology
    from ctxcm.harness import confirm_policy

    onto = with_peer(parse_ontology(bundled("two_workshops.ctx")))
    cm = ContextManager(onto, confirm_policy=confirm_policy(policy))
    handled = [ev(t, action, agent=agent) for t, (agent, action) in enumerate(steps, 1)]
    for e in handled:
        cm.handle(e)

    # no event is attributed to two records
    owners: dict[int, str] = {}
    for rec in cm.records.values():
        for e in rec.events:
            assert id(e) not in owners, "event recorded twice"
            owners[id(e)] = rec.context
            assert e.agent in cm.cascade.contexts[rec.context].agents_involved
        # closed iff the context ended
        assert rec.closed == (cm.cascade.contexts[rec.context].state == "ended")

    # every focus change to a context publishes exactly once, and nothing else publishes
    recs = cm.log.records
    for i, r in enumerate(recs):
        if r["event"] == "focus-change":
            follow = recs[i + 1]
            expected = "publish" if r["detail"]["context"] is not None else "focus-cleared"
            assert follow["event"] == expected and follow["agent"] == r["agent"]
    changes = sum(r["event"] == "focus-change" and r["detail"]["context"] is not None for r in recs)
    assert cm.log.count("publish") == changes

    # identify, then publish, then record for the triggering event
    for i, r in enumerate(recs):
        if r["event"] == "identified":
            rest = recs[i:]
            pub = next(j for j, x in enumerate(rest) if x["event"] in ("publish", "focus-cleared"))
            first_record = next((j for j, x in enumerate(rest) if x["event"] == "record" and x["agent"] == r["agent"]), None)
            assert first_record is None or pub < first_record
