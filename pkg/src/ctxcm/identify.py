"""Identify which activity class recent behaviour belongs to.

Scoring is weighted token coverage: the fraction of a signature's total weight
whose tokens appear at least once among the window's actions.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .model import ActivityClass, PatternSignature

DEFAULT_CAPACITY = 25
DEFAULT_MARGIN = 0.1
DEFAULT_DRIFT_THRESHOLD = 0.2
DEFAULT_DRIFT_K = 3

# Slack for threshold comparisons, so 0.6 - 0.5 counts as a margin of 0.1.
_EPS = 1e-9

IDENTIFIED, AMBIGUOUS, NO_MATCH = "identified", "ambiguous", "no-match"


@dataclass(frozen=True)
class ActionEvent:
    timestamp: int
    agent: str
    action: str
    target: str | None = None
    attributes: dict[str, str] = field(default_factory=dict, hash=False)


class EventWindow:
    """The most recent ``capacity`` events for one agent."""

    def __init__(self, agent: str, capacity: int = DEFAULT_CAPACITY, events: Iterable[ActionEvent] = ()):
        if capacity < 1:
            raise ValueError("window capacity must be positive")
        self.agent = agent
        self.capacity = capacity
        self.events: deque[ActionEvent] = deque(events, maxlen=capacity)

    def push(self, event: ActionEvent) -> None:
        self.events.append(event)

    def tokens(self) -> set[str]:
        return {e.action for e in self.events}

    def keep_last(self, n: int) -> None:
        while len(self.events) > n:
            self.events.popleft()

    def clear(self) -> None:
        self.events.clear()

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


@dataclass(frozen=True)
class IdentificationResult:
    ranking: tuple[tuple[str, float], ...]
    decision: str
    classes: tuple[str, ...] = ()  # the identified class, or the top two when ambiguous

    @property
    def identified(self) -> str | None:
        return self.classes[0] if self.decision == IDENTIFIED else None


@dataclass(frozen=True)
class ConfirmationRequest:
    agent: str | None
    candidates: tuple[tuple[str, float], ...]
    request_id: str = ""


def _tokens_of(window: EventWindow | Iterable[str]) -> set[str]:
    if isinstance(window, EventWindow):
        if not len(window):
            raise ValueError("cannot score an empty window")
        return window.tokens()
    tokens = set(window)
    if not tokens:
        raise ValueError("cannot score an empty window")
    return tokens


def score(window: EventWindow | Iterable[str], sig: PatternSignature) -> float:
    tokens = _tokens_of(window)
    total = sig.total_weight
    if total <= 0:
        return 0.0
    covered = math.fsum(w for tok, w in sig.weighted_tokens.items() if tok in tokens)
    return covered / total


def _rank_key(item: tuple[str, float]) -> tuple[float, str]:
    return (-item[1], item[0])


def identify(
    window: EventWindow | Iterable[str],
    candidates: Sequence[ActivityClass],
    margin: float = DEFAULT_MARGIN,
) -> IdentificationResult:
    """Rank ``candidates`` against the window and decide among them.

    Candidates are scored in one pass over the window's distinct tokens via
    an inverted index from token to (class, weight).
    """
    if not candidates:
        raise ValueError("no candidate activity classes")
    tokens = _tokens_of(window)

    index: dict[str, list[tuple[str, float]]] = {}
    totals: dict[str, float] = {}
    by_id: dict[str, ActivityClass] = {}
    for c in candidates:
        if c.signature is None:
            raise ValueError(f"activity class {c.id!r} has no signature")
        by_id[c.id] = c
        totals[c.id] = c.signature.total_weight
        for tok, w in c.signature.weighted_tokens.items():
            index.setdefault(tok, []).append((c.id, w))

    hits: dict[str, list[float]] = {cid: [] for cid in by_id}
    for tok in tokens:
        for cid, w in index.get(tok, ()):
            hits[cid].append(w)
    scores = {
        cid: (math.fsum(hits[cid]) / totals[cid] if totals[cid] > 0 else 0.0) for cid in by_id
    }
    ranking = tuple(sorted(scores.items(), key=_rank_key))
    return _decide(ranking, by_id, margin)


def _decide(
    ranking: tuple[tuple[str, float], ...], by_id: dict[str, ActivityClass], margin: float
) -> IdentificationResult:
    top_id, top = ranking[0]
    second = ranking[1][1] if len(ranking) > 1 else 0.0
    min_score = by_id[top_id].signature.min_score
    if top + _EPS < min_score:
        return IdentificationResult(ranking, NO_MATCH)
    if len(ranking) == 1 or top - second + _EPS >= margin:
        return IdentificationResult(ranking, IDENTIFIED, (top_id,))
    return IdentificationResult(ranking, AMBIGUOUS, (top_id, ranking[1][0]))


def drift_score(current: ActivityClass, window: EventWindow | Iterable[str]) -> float:
    if current.signature is None:
        raise ValueError(f"activity class {current.id!r} has no signature")
    return score(window, current.signature)


def detect_drift(history: Sequence[float], threshold: float = DEFAULT_DRIFT_THRESHOLD, k: int | None = None) -> bool:
    """True iff each of the ``k`` most recent scores is strictly below ``threshold``.

    ``k`` defaults to the length of ``history``. Fewer than ``k`` scores
    never count as drift.
    """
    if k is None:
        k = len(history)
    if k < 1 or len(history) < k:
        return False
    return all(s < threshold for s in list(history)[-k:])


def confirmation_request(
    result: IdentificationResult, agent: str | None = None, request_id: str = ""
) -> ConfirmationRequest | None:
    if result.decision != AMBIGUOUS:
        return None
    return ConfirmationRequest(agent, tuple(result.ranking[:2]), request_id)
