"""Static domain model: activity classes, generic contexts, resources, agents.

An :class:`Ontology` is treated as an immutable value once loaded. The only
sanctioned way to change one is to build a new version (see
``ctxcm.manager.evolve``).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

RESOURCE_KINDS = frozenset({"information", "application", "person", "device", "other"})
AGENT_KINDS = frozenset({"person", "group", "machine"})


class ModelError(Exception):
    """Raised when an operation on the domain model cannot be carried out."""


class UnknownIdError(ModelError, KeyError):
    def __init__(self, what: str, ident: str):
        super().__init__(f"unknown {what}: {ident!r}")
        self.what = what
        self.ident = ident

    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class PatternSignature:
    weighted_tokens: Mapping[str, float]
    min_score: float = 0.5

    @property
    def total_weight(self) -> float:
        return math.fsum(self.weighted_tokens.values())


@dataclass(frozen=True)
class Atomic:
    name: str


@dataclass(frozen=True)
class Conditional:
    condition: str
    negated: bool = False
    then_steps: tuple[Step, ...] = ()


Step = Union[Atomic, Conditional]


@dataclass(frozen=True)
class ProcessTemplate:
    steps: tuple[Step, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.steps)

    def atomic_steps(self) -> list[str]:
        """Names of the top-level atomic steps, in order.

        Conditional blocks are skipped because their conditions are opaque.
        """
        return [s.name for s in self.steps if isinstance(s, Atomic)]


@dataclass(frozen=True)
class Resource:
    id: str
    kind: str
    name: str
    attributes: Mapping[str, str] = field(default_factory=dict, hash=False)


@dataclass(frozen=True)
class Agent:
    id: str
    kind: str
    name: str


@dataclass(frozen=True)
class ActivityClass:
    id: str
    name: str
    parent_class: str | None = None
    signature: PatternSignature | None = None
    description: str = ""


@dataclass(frozen=True)
class GenericContext:
    id: str
    for_class: str
    resources: tuple[str, ...] = ()
    process: ProcessTemplate = ProcessTemplate()
    attributes: Mapping[str, str] = field(default_factory=dict, hash=False)


@dataclass(frozen=True)
class Ontology:
    activity_classes: Mapping[str, ActivityClass] = field(default_factory=dict)
    generic_contexts: Mapping[str, GenericContext] = field(default_factory=dict)
    resources: Mapping[str, Resource] = field(default_factory=dict)
    agents: Mapping[str, Agent] = field(default_factory=dict)
    version: int = field(default=1, compare=False)

    @classmethod
    def build(
        cls,
        classes: Iterable[ActivityClass] = (),
        contexts: Iterable[GenericContext] = (),
        resources: Iterable[Resource] = (),
        agents: Iterable[Agent] = (),
    ) -> Ontology:
        return cls(
            activity_classes={c.id: c for c in classes},
            generic_contexts={g.id: g for g in contexts},
            resources={r.id: r for r in resources},
            agents={a.id: a for a in agents},
        )

    def activity_class(self, class_id: str) -> ActivityClass:
        try:
            return self.activity_classes[class_id]
        except KeyError:
            raise UnknownIdError("activity class", class_id) from None

    def context_for(self, class_id: str) -> GenericContext | None:
        for g in self.generic_contexts.values():
            if g.for_class == class_id:
                return g
        return None

    def with_generic_context(self, g: GenericContext) -> Ontology:
        contexts = dict(self.generic_contexts)
        contexts[g.id] = g
        return dataclasses.replace(self, generic_contexts=contexts, version=self.version + 1)


@dataclass(frozen=True)
class Violation:
    rule: str
    subject: str
    message: str

    def __str__(self) -> str:
        return f"{self.rule}: {self.subject}: {self.message}"


def validate_ontology(o: Ontology) -> list[Violation]:
    """Check every cross-reference and structural rule; return the violations.

    An empty list means the ontology is valid.
    """
    out: list[Violation] = []

    for key, c in o.activity_classes.items():
        if key != c.id:
            out.append(Violation("id-mismatch", key, f"keyed as {key!r} but id is {c.id!r}"))
        if c.parent_class is not None and c.parent_class not in o.activity_classes:
            out.append(Violation("dangling-parent", c.id, f"parent {c.parent_class!r} is not defined"))
        sig = c.signature
        if sig is not None:
            if not sig.weighted_tokens:
                out.append(Violation("empty-signature", c.id, "signature has no tokens"))
            for tok, w in sig.weighted_tokens.items():
                if not tok:
                    out.append(Violation("bad-signature", c.id, "empty token"))
                if not w > 0:
                    out.append(Violation("bad-signature", c.id, f"weight of {tok!r} must be positive, got {w}"))
            if not 0.0 <= sig.min_score <= 1.0:
                out.append(Violation("bad-signature", c.id, f"min-score {sig.min_score} outside [0, 1]"))

    out.extend(_cycle_violations(o))

    owners: dict[str, str] = {}
    for key, g in o.generic_contexts.items():
        if key != g.id:
            out.append(Violation("id-mismatch", key, f"keyed as {key!r} but id is {g.id!r}"))
        if g.for_class not in o.activity_classes:
            out.append(Violation("dangling-class", g.id, f"context for undefined class {g.for_class!r}"))
        elif g.for_class in owners:
            out.append(
                Violation(
                    "duplicate-generic-context",
                    g.id,
                    f"class {g.for_class!r} already has generic context {owners[g.for_class]!r}",
                )
            )
        else:
            owners[g.for_class] = g.id
        for rid in g.resources:
            if rid not in o.resources:
                out.append(Violation("dangling-resource", g.id, f"resource {rid!r} is not defined"))
        for name in _step_names(g.process.steps):
            if not name:
                out.append(Violation("empty-step", g.id, "process step or condition with empty name"))

    for key, r in o.resources.items():
        if key != r.id:
            out.append(Violation("id-mismatch", key, f"keyed as {key!r} but id is {r.id!r}"))
        if r.kind not in RESOURCE_KINDS:
            out.append(Violation("bad-kind", r.id, f"resource kind {r.kind!r} not in {sorted(RESOURCE_KINDS)}"))

    for key, a in o.agents.items():
        if key != a.id:
            out.append(Violation("id-mismatch", key, f"keyed as {key!r} but id is {a.id!r}"))
        if a.kind not in AGENT_KINDS:
            out.append(Violation("bad-kind", a.id, f"agent kind {a.kind!r} not in {sorted(AGENT_KINDS)}"))

    return out


def _step_names(steps: Iterable[Step]) -> Iterable[str]:
    for s in steps:
        if isinstance(s, Atomic):
            yield s.name
        else:
            yield s.condition
            yield from _step_names(s.then_steps)


def _cycle_violations(o: Ontology) -> list[Violation]:
    # Each class has at most one parent, so cycles are disjoint rings.
    # Report each ring once, naming its smallest member.
    out = []
    done: set[str] = set()
    for start in sorted(o.activity_classes):
        path: list[str] = []
        on_path: dict[str, int] = {}
        cur: str | None = start
        while cur is not None and cur in o.activity_classes and cur not in done:
            if cur in on_path:
                ring = path[on_path[cur]:]
                lead = min(ring)
                members = " -> ".join(ring + [ring[0]])
                out.append(Violation("cycle", lead, f"parent chain loops: {members}"))
                break
            on_path[cur] = len(path)
            path.append(cur)
            cur = o.activity_classes[cur].parent_class
        done.update(path)
    return out


def class_lineage(class_id: str, o: Ontology) -> list[str]:
    """Return ``class_id`` followed by its ancestors, ending at the root."""
    o.activity_class(class_id)
    out = []
    seen = set()
    cur: str | None = class_id
    while cur is not None:
        if cur in seen:
            raise ModelError(f"class hierarchy cycle through {cur!r}")
        seen.add(cur)
        out.append(cur)
        cur = o.activity_class(cur).parent_class
    return out


def is_subclass(class_id: str, ancestor: str, o: Ontology) -> bool:
    return ancestor in class_lineage(class_id, o)


@dataclass(frozen=True)
class ContextOverrides:
    """Partial context payload applied on top of a generic context."""

    resources: tuple[Resource, ...] = ()
    attributes: Mapping[str, str] = field(default_factory=dict)
    process: ProcessTemplate | None = None


@dataclass
class ContextPayload:
    resources: dict[str, Resource]
    attributes: dict[str, str]
    process: ProcessTemplate
    generic_origin: str


def specialize(
    o: Ontology,
    generic_id: str,
    activity_class: str,
    overrides: ContextOverrides | None = None,
) -> ContextPayload:
    """Derive a concrete payload from a generic context.

    Overrides win per attribute key; override resources replace same-id
    entries and are otherwise appended. Wrapping the payload in a runtime
    context is the caller's job.
    """
    try:
        g = o.generic_contexts[generic_id]
    except KeyError:
        raise UnknownIdError("generic context", generic_id) from None
    if not is_subclass(activity_class, g.for_class, o):
        raise ModelError(
            f"activity class {activity_class!r} is not {g.for_class!r} or a descendant of it"
        )
    resources = {}
    for rid in g.resources:
        try:
            resources[rid] = o.resources[rid]
        except KeyError:
            raise UnknownIdError("resource", rid) from None
    attributes = dict(g.attributes)
    process = g.process
    if overrides is not None:
        for r in overrides.resources:
            resources[r.id] = r
        attributes.update(overrides.attributes)
        if overrides.process is not None:
            process = overrides.process
    return ContextPayload(resources, attributes, process, generic_id)
