"""Ingest newline-delimited clinical resource records.

One JSON object per line; field names are fixed by docs/record_schema.md.
Parsing is a pure per-line function: a line either yields a validated
FhirResource or a counted rejection, never a silent drop. Attribute values
are kept verbatim per site; no terminology mapping happens here.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import IO, Iterable, Iterator, NamedTuple, Union

RESOURCE_TYPES = (
    "Patient",
    "Encounter",
    "Observation",
    "MedicationOrder",
    "Procedure",
    "Condition",
    "Note",
)

ATTRIBUTE_KINDS = ("categorical", "numeric", "text")

REJECT_PARSE = "parse"
REJECT_MISSING_FIELD = "missing_field"
REJECT_UNKNOWN_TYPE = "unknown_type"
REJECT_INVALID = "invalid"


class Attribute(NamedTuple):
    name: str
    value: Union[str, float]
    kind: str


@dataclass
class FhirResource:
    """One parsed clinical event: typed, patient-attributed, timestamped.

    event_time is UTC milliseconds since the epoch. It may be None only for
    Patient resources (static demographics); every other resource type must
    carry a timestamp because downstream ordering depends on it.
    """

    resource_type: str
    resource_id: str
    patient_id: str
    event_time: int | None
    attributes: list[Attribute]


@dataclass
class IngestReport:
    """Accept/reject accounting for one parse run. Merge is commutative."""

    resources_accepted: int = 0
    resources_rejected: int = 0
    rejection_reasons: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.resources_accepted + self.resources_rejected

    def count_accepted(self) -> None:
        self.resources_accepted += 1

    def count_rejected(self, reason: str) -> None:
        self.resources_rejected += 1
        self.rejection_reasons[reason] = self.rejection_reasons.get(reason, 0) + 1

    def to_dict(self) -> dict:
        return {
            "resources_accepted": self.resources_accepted,
            "resources_rejected": self.resources_rejected,
            "rejection_reasons": dict(sorted(self.rejection_reasons.items())),
        }


def merge_reports(a: IngestReport, b: IngestReport) -> IngestReport:
    """Combine shard reports; counting is commutative and associative."""
    reasons = dict(a.rejection_reasons)
    for reason, n in b.rejection_reasons.items():
        reasons[reason] = reasons.get(reason, 0) + n
    return IngestReport(
        resources_accepted=a.resources_accepted + b.resources_accepted,
        resources_rejected=a.resources_rejected + b.resources_rejected,
        rejection_reasons=reasons,
    )


def parse_event_time(raw: Union[int, float, str]) -> int:
    """Normalize a record timestamp to UTC milliseconds.

    Accepts epoch milliseconds (number), an ISO-8601 datetime string, or a
    bare YYYY-MM-DD date, which is assigned midnight UTC.
    """
    if isinstance(raw, bool):
        raise ValueError("boolean is not a timestamp")
    if isinstance(raw, (int, float)):
        if not math.isfinite(raw):
            raise ValueError("non-finite timestamp")
        return int(raw)
    if isinstance(raw, str):
        text = raw.strip()
        if not text:
            raise ValueError("empty timestamp")
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        dt = datetime.fromisoformat(text)
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return int(dt.timestamp() * 1000)
    raise ValueError(f"unsupported timestamp type {type(raw).__name__}")


def validate_resource(r: FhirResource) -> list[str]:
    """Return the list of invariant violations; empty means ok."""
    violations = []
    if r.resource_type not in RESOURCE_TYPES:
        violations.append(f"unknown resource_type {r.resource_type!r}")
    if not r.patient_id:
        violations.append("patient_id empty")
    if r.event_time is None and r.resource_type != "Patient":
        violations.append("event_time missing")
    if r.event_time is not None and not isinstance(r.event_time, int):
        violations.append("event_time not integer milliseconds")
    if not r.attributes:
        violations.append("attributes empty")
    for a in r.attributes:
        if not a.name:
            violations.append("attribute with empty name")
        if a.kind not in ATTRIBUTE_KINDS:
            violations.append(f"attribute {a.name!r} has unknown kind {a.kind!r}")
        elif a.kind == "numeric":
            if not isinstance(a.value, (int, float)) or isinstance(a.value, bool) or not math.isfinite(a.value):
                violations.append(f"non-finite numeric value for {a.name!r}")
    return violations


def _coerce_attribute(entry: object) -> Attribute:
    if not isinstance(entry, dict):
        raise ValueError("attribute entry is not an object")
    try:
        name, value, kind = entry["name"], entry["value"], entry["kind"]
    except KeyError as exc:
        raise ValueError(f"attribute missing key {exc}") from exc
    if not isinstance(name, str) or not name:
        raise ValueError("attribute name must be a non-empty string")
    if not isinstance(kind, str) or kind not in ATTRIBUTE_KINDS:
        raise ValueError(f"attribute kind {kind!r} not in {ATTRIBUTE_KINDS}")
    if kind == "numeric":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"numeric attribute {name!r} has non-numeric value")
        value = float(value)
    else:
        if value is None:
            raise ValueError(f"attribute {name!r} has null value")
        value = value if isinstance(value, str) else str(value)
    return Attribute(name, value, kind)


def parse_line(line: str) -> tuple[FhirResource | None, str | None]:
    """Parse one record line. Returns (resource, None) or (None, reason)."""
    try:
        obj = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError):
        return None, REJECT_PARSE
    if not isinstance(obj, dict):
        return None, REJECT_PARSE

    rtype = obj.get("resource_type")
    if rtype not in RESOURCE_TYPES:
        return None, REJECT_UNKNOWN_TYPE

    patient_id = obj.get("patient_id")
    if not isinstance(patient_id, str) or not patient_id:
        return None, REJECT_MISSING_FIELD

    raw_time = obj.get("event_time")
    if raw_time is None:
        if rtype != "Patient":
            return None, REJECT_MISSING_FIELD
        event_time = None
    else:
        try:
            event_time = parse_event_time(raw_time)
        except (ValueError, OverflowError, OSError):
            return None, REJECT_PARSE

    raw_attrs = obj.get("attributes")
    if not isinstance(raw_attrs, list):
        return None, REJECT_PARSE
    try:
        attributes = [_coerce_attribute(e) for e in raw_attrs]
    except ValueError:
        return None, REJECT_PARSE

    resource_id = obj.get("resource_id")
    resource = FhirResource(
        resource_type=rtype,
        resource_id=resource_id if isinstance(resource_id, str) else "",
        patient_id=patient_id,
        event_time=event_time,
        attributes=attributes,
    )
    if validate_resource(resource):
        return None, REJECT_INVALID
    return resource, None


def _iter_lines(source: Union[str, os.PathLike, IO, Iterable]) -> Iterator[str]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            for raw in fh:
                yield raw.decode("utf-8", errors="replace")
        return
    for raw in source:
        yield raw.decode("utf-8", errors="replace") if isinstance(raw, bytes) else raw


def stream_resources(
    source: Union[str, os.PathLike, IO, Iterable],
    report: IngestReport | None = None,
) -> Iterator[FhirResource]:
    """Yield accepted resources one line at a time, counting into `report`.

    Memory stays bounded by the largest single record; blank lines are not
    records and are not counted. Input order is preserved.
    """
    if report is None:
        report = IngestReport()
    for line in _iter_lines(source):
        if not line.strip():
            continue
        resource, reason = parse_line(line)
        if resource is None:
            report.count_rejected(reason)
        else:
            report.count_accepted()
            yield resource


def parse_resource_stream(
    source: Union[str, os.PathLike, IO, Iterable],
) -> tuple[list[FhirResource], IngestReport]:
    """Parse a full stream into memory. See stream_resources for semantics."""
    report = IngestReport()
    resources = list(stream_resources(source, report))
    return resources, report


def resource_to_dict(r: FhirResource) -> dict:
    return {
        "resource_type": r.resource_type,
        "resource_id": r.resource_id,
        "patient_id": r.patient_id,
        "event_time": r.event_time,
        "attributes": [{"name": a.name, "value": a.value, "kind": a.kind} for a in r.attributes],
    }


def resource_to_jsonline(r: FhirResource) -> str:
    return json.dumps(resource_to_dict(r), sort_keys=True, separators=(",", ":"))


def write_ndjson(path: Union[str, os.PathLike], resources: Iterable[FhirResource]) -> int:
    """Write resources one JSON object per line; returns the record count."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for r in resources:
            fh.write(resource_to_jsonline(r))
            fh.write("\n")
            n += 1
    return n
