"""Turn resources into discrete tokens on a per-patient time axis.

Token strings are "resource_type:attribute:value" for categorical attributes,
"resource_type:attribute:Qk" for decile-bucketed numeric attributes, and
"note:word" for words of text attributes. A patient's timeline is the single
time-ordered sequence of all their token occurrences; any model input is a
prefix of that sequence cut at a prediction time.

Timelines persist in a length-prefixed binary archive, layout documented in
docs/timeline_archive.md.
"""

from __future__ import annotations

import bisect
import json
import re
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .fhir_ingest import RESOURCE_TYPES, FhirResource

UNK_ID = 0
PAD_ID = 1
UNK_TOKEN = "<unk>"
PAD_TOKEN = "<pad>"

# Keys with fewer training observations than this quantize to the "Qx" sentinel.
MIN_QUANTIZER_OBSERVATIONS = 20

_WORD_SPLIT = re.compile(r"[^a-z0-9]+")


@dataclass
class Vocabulary:
    """Dense token-string to id mapping fitted on development-split data only.

    Ids 0 and 1 are reserved for <unk> and <pad>; real tokens start at 2 in
    order of first appearance in the training stream, which makes the
    assignment bit-identical for identical input order.
    """

    token_to_id: dict[str, int]
    min_count: int

    @property
    def size(self) -> int:
        return 2 + len(self.token_to_id)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_to_token(self) -> list[str]:
        inv = [UNK_TOKEN, PAD_TOKEN] + [""] * len(self.token_to_id)
        for tok, i in self.token_to_id.items():
            inv[i] = tok
        return inv

    def to_json(self) -> str:
        return json.dumps(
            {"min_count": self.min_count, "tokens": self.token_to_id},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        obj = json.loads(text)
        return cls(token_to_id={k: int(v) for k, v in obj["tokens"].items()}, min_count=int(obj["min_count"]))


@dataclass
class NumericQuantizer:
    """Per-attribute-key decile cut points fitted on development-split values.

    bucket_label maps any finite value to Q1..Q10; a value equal to a cut
    point lands in the upper bucket, so a key whose cut points are all equal
    sends its own value to Q10. Keys with too few training observations map
    everything to the "Qx" sentinel.
    """

    cut_points: dict[str, np.ndarray]
    counts: dict[str, int]
    min_observations: int = MIN_QUANTIZER_OBSERVATIONS

    def bucket_label(self, key: str, value: float) -> str:
        n = self.counts.get(key, 0)
        if n < self.min_observations:
            return "Qx"
        cuts = self.cut_points[key]
        return f"Q{1 + int(np.searchsorted(cuts, value, side='right'))}"

    def to_json(self) -> str:
        payload = {
            "min_observations": self.min_observations,
            "keys": {
                k: {"cuts": [float(c) for c in self.cut_points[k]], "count": self.counts[k]}
                for k in sorted(self.cut_points)
            },
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NumericQuantizer":
        obj = json.loads(text)
        cuts = {k: np.asarray(v["cuts"], dtype=float) for k, v in obj["keys"].items()}
        counts = {k: int(v["count"]) for k, v in obj["keys"].items()}
        return cls(cut_points=cuts, counts=counts, min_observations=int(obj["min_observations"]))


@dataclass
class TokenOccurrence:
    token_id: int
    time: int
    source_resource_type: str
    attribute_name: str
    raw_numeric_value: float | None = None


@dataclass
class PatientTimeline:
    """All token occurrences for one patient, ascending by time (stable)."""

    patient_id: str
    occurrences: list[TokenOccurrence] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.occurrences)


@dataclass
class TimelinePrefix:
    """A timeline cut at a prediction time: occurrences with time <= cutoff."""

    patient_id: str
    occurrences: list[TokenOccurrence]
    prediction_time: int

    def __len__(self) -> int:
        return len(self.occurrences)


def note_words(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs; empty words dropped."""
    return [w for w in _WORD_SPLIT.split(text.lower()) if w]


def quantizer_key(resource_type: str, attribute_name: str) -> str:
    return f"{resource_type}:{attribute_name}"


def emit_token_strings(
    r: FhirResource, quantizer: NumericQuantizer
) -> list[tuple[str, str, float | None]]:
    """Expand a resource into (token_string, attribute_name, raw_value) triples.

    One triple per categorical or numeric attribute, one per word of a text
    attribute; emission order follows the attribute list.
    """
    out: list[tuple[str, str, float | None]] = []
    for a in r.attributes:
        if a.kind == "categorical":
            out.append((f"{r.resource_type}:{a.name}:{a.value}", a.name, None))
        elif a.kind == "numeric":
            value = float(a.value)
            label = quantizer.bucket_label(quantizer_key(r.resource_type, a.name), value)
            out.append((f"{r.resource_type}:{a.name}:{label}", a.name, value))
        else:
            out.extend((f"note:{w}", a.name, None) for w in note_words(str(a.value)))
    return out


def collect_numeric_observations(resources: Iterable[FhirResource]) -> dict[str, list[float]]:
    """Gather per-key numeric values for quantizer fitting."""
    values: dict[str, list[float]] = defaultdict(list)
    for r in resources:
        for a in r.attributes:
            if a.kind == "numeric":
                values[quantizer_key(r.resource_type, a.name)].append(float(a.value))
    return dict(values)


def fit_quantizer(
    observations: Mapping[str, Sequence[float]],
    min_observations: int = MIN_QUANTIZER_OBSERVATIONS,
) -> NumericQuantizer:
    """Fit decile cut points (10%..90% linear-interpolation quantiles) per key."""
    cuts: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    probs = np.arange(1, 10) / 10.0
    for key, vals in observations.items():
        arr = np.asarray(list(vals), dtype=float)
        counts[key] = arr.size
        cuts[key] = np.quantile(arr, probs, method="linear") if arr.size else np.zeros(9)
    return NumericQuantizer(cut_points=cuts, counts=counts, min_observations=min_observations)


def build_vocabulary(
    resources: Iterable[FhirResource],
    min_count: int,
    quantizer: NumericQuantizer,
) -> Vocabulary:
    """Count token strings over the training stream and keep those with
    frequency >= min_count, assigning ids in first-appearance order."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    order: dict[str, None] = {}
    for r in resources:
        for token, _attr, _raw in emit_token_strings(r, quantizer):
            counts[token] += 1
            if token not in order:
                order[token] = None
    token_to_id = {}
    next_id = 2
    for token in order:
        if counts[token] >= min_count:
            token_to_id[token] = next_id
            next_id += 1
    return Vocabulary(token_to_id=token_to_id, min_count=min_count)


def tokenize_resource(
    r: FhirResource, vocab: Vocabulary, quantizer: NumericQuantizer
) -> list[TokenOccurrence]:
    """One occurrence per emitted token string, stamped with the resource time.

    Patient resources without a timestamp are stamped at 0 so that static
    demographics precede every dated event.
    """
    time = r.event_time if r.event_time is not None else 0
    return [
        TokenOccurrence(
            token_id=vocab.lookup(token),
            time=time,
            source_resource_type=r.resource_type,
            attribute_name=attr,
            raw_numeric_value=raw,
        )
        for token, attr, raw in emit_token_strings(r, quantizer)
    ]


def tokenize_note(text: str, time: int, vocab: Vocabulary) -> list[TokenOccurrence]:
    """Tokenize free text into note:word occurrences at the note's time."""
    return [
        TokenOccurrence(
            token_id=vocab.lookup(f"note:{w}"),
            time=time,
            source_resource_type="Note",
            attribute_name="text",
        )
        for w in note_words(text)
    ]


def assemble_timeline(
    tagged_occurrences: Iterable[tuple[str, TokenOccurrence]],
) -> PatientTimeline:
    """Build one patient's timeline from (patient_id, occurrence) pairs.

    Sort is stable: equal-time occurrences keep their input order.
    """
    pairs = list(tagged_occurrences)
    if not pairs:
        raise ValueError("no occurrences")
    patient_ids = {pid for pid, _ in pairs}
    if len(patient_ids) != 1:
        raise ValueError(f"mixed patient ids: {sorted(patient_ids)}")
    occurrences = sorted((o for _, o in pairs), key=lambda o: o.time)
    return PatientTimeline(patient_id=pairs[0][0], occurrences=occurrences)


def timelines_from_resources(
    resources: Iterable[FhirResource],
    vocab: Vocabulary,
    quantizer: NumericQuantizer,
) -> dict[str, PatientTimeline]:
    """Tokenize a resource stream and assemble one timeline per patient."""
    by_patient: dict[str, list[TokenOccurrence]] = defaultdict(list)
    for r in resources:
        by_patient[r.patient_id].extend(tokenize_resource(r, vocab, quantizer))
    return {
        pid: assemble_timeline((pid, o) for o in occs)
        for pid, occs in by_patient.items()
    }


def slice_at(timeline: PatientTimeline, prediction_time: int) -> TimelinePrefix:
    """Prefix of occurrences with time <= prediction_time, original order."""
    idx = bisect.bisect_right(timeline.occurrences, prediction_time, key=lambda o: o.time)
    return TimelinePrefix(
        patient_id=timeline.patient_id,
        occurrences=timeline.occurrences[:idx],
        prediction_time=prediction_time,
    )


# ---------------------------------------------------------------------------
# Binary timeline archive
#
#   file   := magic b"EHTL1\n" record*
#   record := u32 payload_len, payload
#   payload:= u16 pid_len, pid utf-8, u32 n_occ, occ*
#   occ    := u32 token_id, i64 time_ms, u8 resource_type_code,
#             u16 attr_len, attr utf-8, u8 has_raw, f64 raw if has_raw
#
# All integers little-endian; resource_type_code indexes RESOURCE_TYPES.
# ---------------------------------------------------------------------------

ARCHIVE_MAGIC = b"EHTL1\n"
_RT_CODE = {rt: i for i, rt in enumerate(RESOURCE_TYPES)}


def _pack_timeline(tl: PatientTimeline) -> bytes:
    parts = []
    pid = tl.patient_id.encode("utf-8")
    parts.append(struct.pack("<H", len(pid)))
    parts.append(pid)
    parts.append(struct.pack("<I", len(tl.occurrences)))
    for o in tl.occurrences:
        attr = o.attribute_name.encode("utf-8")
        parts.append(struct.pack("<IqBH", o.token_id, o.time, _RT_CODE[o.source_resource_type], len(attr)))
        parts.append(attr)
        if o.raw_numeric_value is None:
            parts.append(struct.pack("<B", 0))
        else:
            parts.append(struct.pack("<Bd", 1, o.raw_numeric_value))
    return b"".join(parts)


def write_timeline_archive(path, timelines: Iterable[PatientTimeline]) -> int:
    n = 0
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        for tl in timelines:
            payload = _pack_timeline(tl)
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)
            n += 1
    return n


def read_timeline_archive(path) -> Iterator[PatientTimeline]:
    with open(path, "rb") as fh:
        magic = fh.read(len(ARCHIVE_MAGIC))
        if magic != ARCHIVE_MAGIC:
            raise ValueError(f"not a timeline archive: {path}")
        while True:
            header = fh.read(4)
            if not header:
                return
            (payload_len,) = struct.unpack("<I", header)
            payload = fh.read(payload_len)
            if len(payload) != payload_len:
                raise ValueError("truncated timeline archive")
            yield _unpack_timeline(payload)


def _unpack_timeline(payload: bytes) -> PatientTimeline:
    off = 0
    (pid_len,) = struct.unpack_from("<H", payload, off)
    off += 2
    pid = payload[off : off + pid_len].decode("utf-8")
    off += pid_len
    (n_occ,) = struct.unpack_from("<I", payload, off)
    off += 4
    occurrences = []
    for _ in range(n_occ):
        token_id, time, rt_code, attr_len = struct.unpack_from("<IqBH", payload, off)
        off += struct.calcsize("<IqBH")
        attr = payload[off : off + attr_len].decode("utf-8")
        off += attr_len
        (has_raw,) = struct.unpack_from("<B", payload, off)
        off += 1
        raw = None
        if has_raw:
            (raw,) = struct.unpack_from("<d", payload, off)
            off += 8
        occurrences.append(
            TokenOccurrence(
                token_id=token_id,
                time=time,
                source_resource_type=RESOURCE_TYPES[rt_code],
                attribute_name=attr,
                raw_numeric_value=raw,
            )
        )
    return PatientTimeline(patient_id=pid, occurrences=occurrences)


def dump_text(timelines: Iterable[PatientTimeline]) -> Iterator[str]:
    """Tab-separated debug dump, one line per occurrence."""
    yield "patient_id\ttime_ms\ttoken_id\tresource_type\tattribute\traw_value"
    for tl in timelines:
        for o in tl.occurrences:
            raw = "" if o.raw_numeric_value is None else repr(o.raw_numeric_value)
            yield f"{tl.patient_id}\t{o.time}\t{o.token_id}\t{o.source_resource_type}\t{o.attribute_name}\t{raw}"
