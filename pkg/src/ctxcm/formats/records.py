"""JSON-lines files for behaviour records and artifact snapshots."""

from __future__ import annotations

import json
from typing import Iterable

from ..manager import ArtifactRecord, BehaviorRecord
from ..payload import canonical_json, event_from_json, event_to_json


class RecordFormatError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


def record_to_json(r: BehaviorRecord) -> dict:
    return {
        "context": r.context,
        "generic_origin": r.generic_origin,
        "events": [event_to_json(e) for e in r.events],
        "resources_touched": sorted(r.resources_touched),
        "closed": r.closed,
    }


def record_from_json(d: dict) -> BehaviorRecord:
    return BehaviorRecord(
        d["context"],
        d["generic_origin"],
        [event_from_json(e) for e in d.get("events", [])],
        set(d.get("resources_touched", [])),
        bool(d.get("closed", False)),
    )


def artifact_to_json(a: ArtifactRecord) -> dict:
    return {
        "artifact_id": a.artifact_id,
        "name": a.name,
        "produced_at": a.produced_at,
        "produced_in": a.produced_in,
    }


def artifact_from_json(d: dict) -> ArtifactRecord:
    return ArtifactRecord(d["artifact_id"], d["name"], d["produced_at"], canonical_json(d["produced_in"]))


def _dump(items: Iterable[dict]) -> str:
    return "".join(canonical_json(d) + "\n" for d in items)


def _load(text: str, convert):
    out = []
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            continue
        try:
            out.append(convert(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
            raise RecordFormatError(lineno, f"bad record: {exc}") from None
    return out


def dump_records(records: Iterable[BehaviorRecord]) -> str:
    return _dump(record_to_json(r) for r in records)


def load_records(text: str) -> list[BehaviorRecord]:
    return _load(text, record_from_json)


def dump_artifacts(artifacts: Iterable[ArtifactRecord]) -> str:
    return _dump(artifact_to_json(a) for a in artifacts)


def load_artifacts(text: str) -> list[ArtifactRecord]:
    return _load(text, artifact_from_json)
