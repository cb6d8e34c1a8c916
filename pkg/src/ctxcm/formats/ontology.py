"""Reader and writer for ``.ctx`` ontology documents.

The layout follows a frame (slot and filler) style::

    agent self { kind: person name: "Self" }
    resource calendar { kind: application name: "calendar" }
    activity "Organise Workshop" {
        parent: "Task"
        signature: [book-flight, book-hotel:2]
        min-score: 0.5
    }
    context "Workshop Context" for "Organise Workshop" {
        resources: [calendar]
        attributes: { supervisor: "J. Smith" }
        process {
            step "Initial Agenda"
            if not "Approval of Agenda" { step "Revise Agenda" }
        }
    }

The context label is optional; without one the context id is
``context for <activity name>``. Cross references are not checked here, see
:func:`ctxcm.model.validate_ontology`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from ..model import (
    ActivityClass,
    Agent,
    Atomic,
    Conditional,
    GenericContext,
    Ontology,
    PatternSignature,
    ProcessTemplate,
    Resource,
    Step,
)

MAX_NESTING = 64

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<word>[A-Za-z0-9_.+\-/@]+)
  | (?P<punct>[{}\[\]:,])
    """,
    re.VERBOSE,
)
_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\"}
_WORD = re.compile(r"[A-Za-z0-9_.+\-/@]+\Z")


def default_context_id(activity: str) -> str:
    return f"context for {activity}"


@dataclass(frozen=True)
class Diagnostic:
    line: int
    column: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}, column {self.column}: {self.message}"


class OntologySyntaxError(ValueError):
    def __init__(self, errors: list[Diagnostic]):
        self.errors = errors
        super().__init__("; ".join(str(e) for e in errors))


@dataclass
class _Tok:
    kind: str  # "string", "word", "punct" or "eof"
    value: str
    line: int
    column: int


class _Fail(Exception):
    pass


def _unescape(raw: str) -> str:
    out = []
    i = 0
    while i < len(raw):
        ch = raw[i]
        if ch == "\\":
            nxt = raw[i + 1]
            if nxt not in _ESCAPES:
                raise ValueError(f"unknown escape \\{nxt}")
            out.append(_ESCAPES[nxt])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            ch = text[pos]
            if ch == '"':
                raise _Fail(Diagnostic(line, col, "unterminated string"))
            raise _Fail(Diagnostic(line, col, f"unexpected character {ch!r}"))
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "string":
            try:
                value = _unescape(m.group()[1:-1])
            except ValueError as exc:
                raise _Fail(Diagnostic(line, col, str(exc))) from None
            toks.append(_Tok("string", value, line, col))
        elif kind in ("word", "punct"):
            toks.append(_Tok(kind, m.group(), line, col))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.i = 0
        self.dupes: list[Diagnostic] = []

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, expected: str) -> _Fail:
        t = self.tok
        found = "end of file" if t.kind == "eof" else repr(t.value)
        return _Fail(Diagnostic(t.line, t.column, f"expected {expected}, found {found}"))

    def advance(self) -> _Tok:
        t = self.tok
        self.i += 1
        return t

    def at(self, value: str) -> bool:
        return self.tok.kind in ("word", "punct") and self.tok.value == value

    def expect(self, value: str) -> _Tok:
        if not self.at(value):
            raise self.fail(repr(value))
        return self.advance()

    def string(self, what: str = "a quoted string") -> str:
        if self.tok.kind != "string":
            raise self.fail(what)
        return self.advance().value

    def word(self, what: str = "an identifier") -> str:
        if self.tok.kind != "word":
            raise self.fail(what)
        return self.advance().value

    def scalar(self, what: str = "a value") -> str:
        if self.tok.kind not in ("string", "word"):
            raise self.fail(what)
        return self.advance().value

    def number(self, what: str = "a number") -> float:
        t = self.tok
        if t.kind != "word":
            raise self.fail(what)
        try:
            value = float(t.value)
        except ValueError:
            raise self.fail(what) from None
        if not math.isfinite(value):
            raise _Fail(Diagnostic(t.line, t.column, f"{t.value!r} is not a finite number"))
        self.advance()
        return value

    def skip_comma(self) -> None:
        if self.at(","):
            self.advance()

    def slot(self, seen: set[str], allowed: tuple[str, ...]) -> str:
        t = self.tok
        if t.kind != "word" or t.value not in allowed:
            raise self.fail("one of " + ", ".join(allowed) + " or '}'")
        if t.value in seen:
            raise _Fail(Diagnostic(t.line, t.column, f"slot {t.value!r} given twice"))
        seen.add(t.value)
        return self.advance().value

    def document(self) -> Ontology:
        classes: dict[str, ActivityClass] = {}
        contexts: dict[str, GenericContext] = {}
        resources: dict[str, Resource] = {}
        agents: dict[str, Agent] = {}
        while self.tok.kind != "eof":
            t = self.tok
            if self.at("activity"):
                item = self.activity()
                table, what = classes, "activity"
            elif self.at("context"):
                item = self.context()
                table, what = contexts, "context"
            elif self.at("resource"):
                item = self.resource()
                table, what = resources, "resource"
            elif self.at("agent"):
                item = self.agent()
                table, what = agents, "agent"
            else:
                raise self.fail("'activity', 'context', 'resource' or 'agent'")
            if item.id in table:
                self.dupes.append(Diagnostic(t.line, t.column, f"duplicate {what} id {item.id!r}"))
            else:
                table[item.id] = item
        return Ontology(classes, contexts, resources, agents)

    def activity(self) -> ActivityClass:
        self.expect("activity")
        name = self.string("an activity name")
        self.expect("{")
        seen: set[str] = set()
        parent = None
        tokens: dict[str, float] | None = None
        min_score = 0.5
        description = ""
        while not self.at("}"):
            slot = self.slot(seen, ("parent", "signature", "min-score", "description"))
            self.expect(":")
            if slot == "parent":
                parent = self.string("a parent activity name")
            elif slot == "signature":
                tokens = self.signature()
            elif slot == "min-score":
                min_score = self.number()
            else:
                description = self.string()
        self.expect("}")
        sig = None
        if tokens is not None or "min-score" in seen:
            sig = PatternSignature(tokens or {}, min_score)
        return ActivityClass(name, name, parent, sig, description)

    def signature(self) -> dict[str, float]:
        self.expect("[")
        out: dict[str, float] = {}
        while not self.at("]"):
            t = self.tok
            tok = self.word("an action token")
            weight = 1.0
            if self.at(":"):
                self.advance()
                weight = self.number("a token weight")
            if tok in out:
                raise _Fail(Diagnostic(t.line, t.column, f"token {tok!r} repeated in signature"))
            out[tok] = weight
            self.skip_comma()
        self.expect("]")
        return out

    def context(self) -> GenericContext:
        self.expect("context")
        label = None
        if self.tok.kind == "string":
            label = self.advance().value
        self.expect("for")
        target = self.string("an activity name")
        self.expect("{")
        seen: set[str] = set()
        resources: list[str] = []
        attributes: dict[str, str] = {}
        process = ProcessTemplate()
        while not self.at("}"):
            slot = self.slot(seen, ("resources", "attributes", "process"))
            if slot == "resources":
                self.expect(":")
                self.expect("[")
                while not self.at("]"):
                    resources.append(self.word("a resource id"))
                    self.skip_comma()
                self.expect("]")
            elif slot == "attributes":
                self.expect(":")
                attributes = self.mapping()
            else:
                process = ProcessTemplate(self.block(0))
        self.expect("}")
        ident = label if label is not None else default_context_id(target)
        return GenericContext(ident, target, tuple(resources), process, attributes)

    def mapping(self) -> dict[str, str]:
        self.expect("{")
        out: dict[str, str] = {}
        while not self.at("}"):
            t = self.tok
            key = self.scalar("an attribute name")
            self.expect(":")
            if key in out:
                raise _Fail(Diagnostic(t.line, t.column, f"attribute {key!r} given twice"))
            out[key] = self.scalar("an attribute value")
            self.skip_comma()
        self.expect("}")
        return out

    def block(self, depth: int) -> tuple[Step, ...]:
        if depth >= MAX_NESTING:
            t = self.tok
            raise _Fail(Diagnostic(t.line, t.column, f"process nested deeper than {MAX_NESTING}"))
        self.expect("{")
        steps: list[Step] = []
        while not self.at("}"):
            if self.at("step"):
                self.advance()
                steps.append(Atomic(self.string("a step name")))
            elif self.at("if"):
                self.advance()
                negated = False
                if self.at("not"):
                    self.advance()
                    negated = True
                cond = self.string("a condition name")
                steps.append(Conditional(cond, negated, self.block(depth + 1)))
            else:
                raise self.fail("'step', 'if' or '}'")
        self.expect("}")
        return tuple(steps)

    def resource(self) -> Resource:
        self.expect("resource")
        ident = self.word("a resource id")
        self.expect("{")
        seen: set[str] = set()
        kind, name, attributes = "", "", {}
        while not self.at("}"):
            slot = self.slot(seen, ("kind", "name", "attributes"))
            self.expect(":")
            if slot == "kind":
                kind = self.word("a resource kind")
            elif slot == "name":
                name = self.string()
            else:
                attributes = self.mapping()
        self.expect("}")
        if "kind" not in seen:
            raise self.fail(f"'kind' slot for resource {ident!r}")
        return Resource(ident, kind, name, attributes)

    def agent(self) -> Agent:
        self.expect("agent")
        ident = self.word("an agent id")
        self.expect("{")
        seen: set[str] = set()
        kind, name = "", ""
        while not self.at("}"):
            slot = self.slot(seen, ("kind", "name"))
            self.expect(":")
            if slot == "kind":
                kind = self.word("an agent kind")
            else:
                name = self.string()
        self.expect("}")
        if "kind" not in seen:
            raise self.fail(f"'kind' slot for agent {ident!r}")
        return Agent(ident, kind, name)


def parse_ontology(text: str | bytes) -> Ontology:
    """Parse an ontology document.

    Raises :class:`OntologySyntaxError` carrying one or more located
    diagnostics. Duplicate ids are all reported; parsing stops at the first
    syntax error.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            line = text.count(b"\n", 0, exc.start) + 1
            col = exc.start - (text.rfind(b"\n", 0, exc.start) + 1) + 1
            raise OntologySyntaxError([Diagnostic(line, col, "invalid UTF-8")]) from None
    try:
        parser = _Parser(_tokenize(text))
        onto = parser.document()
    except _Fail as exc:
        raise OntologySyntaxError([exc.args[0]]) from None
    if parser.dupes:
        raise OntologySyntaxError(parser.dupes)
    return onto


def _quote(s: str) -> str:
    out = s.replace("\\", "\\\\").replace('"', '\\"')
    out = out.replace("\n", "\\n").replace("\t", "\\t").replace("\r", "\\r")
    return f'"{out}"'


def _scalar(s: str) -> str:
    if _WORD.match(s) and s not in ("{", "}"):
        return s
    return _quote(s)


def _word(s: str, what: str) -> str:
    if not _WORD.match(s):
        raise ValueError(f"{what} {s!r} cannot be written as a bare identifier")
    return s


def _mapping(m) -> str:
    return "{ " + ", ".join(f"{_scalar(k)}: {_scalar(v)}" for k, v in m.items()) + " }"


def _steps(steps, indent: str) -> list[str]:
    out = []
    for s in steps:
        if isinstance(s, Atomic):
            out.append(f"{indent}step {_quote(s.name)}")
        else:
            neg = "not " if s.negated else ""
            out.append(f"{indent}if {neg}{_quote(s.condition)} {{")
            out.extend(_steps(s.then_steps, indent + "    "))
            out.append(f"{indent}}}")
    return out


def serialize_ontology(o: Ontology) -> str:
    lines: list[str] = []
    for a in o.agents.values():
        lines.append(f"agent {_word(a.id, 'agent id')} {{ kind: {_word(a.kind, 'kind')} name: {_quote(a.name)} }}")
    for r in o.resources.values():
        attrs = f" attributes: {_mapping(r.attributes)}" if r.attributes else ""
        lines.append(
            f"resource {_word(r.id, 'resource id')} {{ kind: {_word(r.kind, 'kind')} "
            f"name: {_quote(r.name)}{attrs} }}"
        )
    for c in o.activity_classes.values():
        if c.id != c.name:
            raise ValueError(f"activity id {c.id!r} differs from its name {c.name!r}")
        lines.append("")
        lines.append(f"activity {_quote(c.name)} {{")
        if c.parent_class is not None:
            lines.append(f"    parent: {_quote(c.parent_class)}")
        if c.signature is not None:
            toks = ", ".join(
                _word(t, "token") if w == 1.0 else f"{_word(t, 'token')}:{w!r}"
                for t, w in c.signature.weighted_tokens.items()
            )
            lines.append(f"    signature: [{toks}]")
            if c.signature.min_score != 0.5:
                lines.append(f"    min-score: {c.signature.min_score!r}")
        if c.description:
            lines.append(f"    description: {_quote(c.description)}")
        lines.append("}")
    for g in o.generic_contexts.values():
        lines.append("")
        label = "" if g.id == default_context_id(g.for_class) else f"{_quote(g.id)} "
        lines.append(f"context {label}for {_quote(g.for_class)} {{")
        lines.append("    resources: [" + ", ".join(_word(r, "resource id") for r in g.resources) + "]")
        if g.attributes:
            lines.append(f"    attributes: {_mapping(g.attributes)}")
        if g.process.steps:
            lines.append("    process {")
            lines.extend(_steps(g.process.steps, "        "))
            lines.append("    }")
        lines.append("}")
    text = "\n".join(lines).lstrip("\n")
    return text + "\n" if text else ""
