"""Per-prediction attribution: which token occurrences drove a score.

Attention weights are the primary signal for the attention model; occlusion
(score with minus score without each occurrence) is the model-agnostic check
that works for every architecture. Reports are deterministic structured text
so a fixed model and prefix always render byte-identical output.
"""

from __future__ import annotations

import html
import json
import math
from dataclasses import dataclass

import numpy as np

from .cohort import EncounterRecord
from .models import predict as model_predict
from .models.tann import TannModel
from .timeline import UNK_TOKEN, TimelinePrefix, Vocabulary
from .timeunits import HOUR_MS

_SUMMARY_BUCKETS = (
    ("<=6h", 6.0),
    ("<=24h", 24.0),
    ("<=7d", 168.0),
    ("<=30d", 720.0),
    (">30d", math.inf),
)


@dataclass
class Attribution:
    occurrence_index: int
    token: str
    weight: float
    method: str  # "attention" | "occlusion"
    time: int
    resource_type: str
    attribute_name: str


def _token_name(inv: list[str], token_id: int, attribute_name: str) -> str:
    name = inv[token_id] if 0 <= token_id < len(inv) else UNK_TOKEN
    if name == UNK_TOKEN:
        return f"{UNK_TOKEN}({attribute_name})"
    return name


def attention_attribution(
    model: TannModel, prefix: TimelinePrefix, vocab: Vocabulary
) -> list[Attribution]:
    """Softmax attention weights over the prefix, ranked descending.

    The weights sum to 1 over the occurrences the model saw (the most recent
    max_tokens when the prefix is longer than the model's window).
    """
    if len(prefix.occurrences) == 0:
        return []
    _, alpha = model.forward_with_attention(prefix)
    offset = len(prefix.occurrences) - alpha.size
    inv = vocab.id_to_token()
    attributions = [
        Attribution(
            occurrence_index=offset + j,
            token=_token_name(inv, o.token_id, o.attribute_name),
            weight=float(alpha[j]),
            method="attention",
            time=o.time,
            resource_type=o.source_resource_type,
            attribute_name=o.attribute_name,
        )
        for j, o in enumerate(prefix.occurrences[offset:])
    ]
    attributions.sort(key=lambda a: (-a.weight, a.occurrence_index))
    return attributions


def occlusion_attribution(
    model,
    prefix: TimelinePrefix,
    top_k: int,
    vocab: Vocabulary,
    encounter: EncounterRecord | None = None,
) -> list[Attribution]:
    """weight = p(full prefix) - p(prefix without the occurrence).

    Candidates are the attention top-k when the model exposes attention,
    otherwise the k most recent occurrences.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    if len(prefix.occurrences) == 0:
        return []
    if isinstance(model, TannModel):
        ranked = attention_attribution(model, prefix, vocab)
        candidate_indices = [a.occurrence_index for a in ranked[:top_k]]
    else:
        n = len(prefix.occurrences)
        candidate_indices = list(range(max(0, n - top_k), n))[::-1]
    full = float(model_predict(model, prefix, encounter, vocab))
    inv = vocab.id_to_token()
    attributions = []
    for idx in candidate_indices:
        o = prefix.occurrences[idx]
        reduced = TimelinePrefix(
            patient_id=prefix.patient_id,
            occurrences=prefix.occurrences[:idx] + prefix.occurrences[idx + 1 :],
            prediction_time=prefix.prediction_time,
        )
        without = float(model_predict(model, reduced, encounter, vocab))
        attributions.append(
            Attribution(
                occurrence_index=idx,
                token=_token_name(inv, o.token_id, o.attribute_name),
                weight=full - without,
                method="occlusion",
                time=o.time,
                resource_type=o.source_resource_type,
                attribute_name=o.attribute_name,
            )
        )
    attributions.sort(key=lambda a: (-a.weight, a.occurrence_index))
    return attributions


def _note_context(prefix: TimelinePrefix, idx: int, vocab: Vocabulary) -> str:
    """Reconstruct the surrounding note text for a note-token attribution."""
    target = prefix.occurrences[idx]
    inv = vocab.id_to_token()
    words = []
    for j, o in enumerate(prefix.occurrences):
        if (
            o.source_resource_type == target.source_resource_type
            and o.attribute_name == target.attribute_name
            and o.time == target.time
        ):
            word = inv[o.token_id] if 0 <= o.token_id < len(inv) else UNK_TOKEN
            word = word.split(":", 1)[1] if word.startswith("note:") else word
            words.append(f"**{word}**" if j == idx else word)
    return " ".join(words)


def timeline_summary(prefix: TimelinePrefix) -> dict[str, dict[str, int]]:
    """Token counts per resource type per recency bucket."""
    summary: dict[str, dict[str, int]] = {}
    for o in prefix.occurrences:
        delta_h = (prefix.prediction_time - o.time) / HOUR_MS
        for label, bound in _SUMMARY_BUCKETS:
            if delta_h <= bound:
                bucket = label
                break
        per_type = summary.setdefault(o.source_resource_type, {})
        per_type[bucket] = per_type.get(bucket, 0) + 1
    return {rt: dict(sorted(b.items())) for rt, b in sorted(summary.items())}


def render_report(
    prediction: float,
    attributions: list[Attribution],
    e: EncounterRecord,
    prefix: TimelinePrefix,
    vocab: Vocabulary,
    task: str,
    time_tag: str,
    baseline_score: float | None = None,
    max_highlights: int = 20,
) -> dict:
    """Structured case-study report; serialize with report_to_json."""
    highlights = []
    for rank, a in enumerate(attributions[:max_highlights], start=1):
        entry = {
            "rank": rank,
            "token": a.token,
            "weight": a.weight,
            "method": a.method,
            "time_ms": a.time,
            "resource_type": a.resource_type,
            "attribute": a.attribute_name,
        }
        if a.token.startswith("note:") or a.resource_type == "Note":
            entry["note_context"] = _note_context(prefix, a.occurrence_index, vocab)
        highlights.append(entry)
    return {
        "header": {
            "task": task,
            "time_tag": time_tag,
            "model_score": prediction,
            "baseline_score": baseline_score,
            "encounter_id": e.encounter_id,
            "patient_id": e.patient_id,
            "prediction_time_ms": prefix.prediction_time,
            "n_tokens": len(prefix.occurrences),
        },
        "timeline_summary": timeline_summary(prefix),
        "highlights": highlights,
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)


def report_to_html(report: dict) -> str:
    """Static single-page rendering of the same report content."""
    head = report["header"]
    rows = []
    for h in report["highlights"]:
        context = html.escape(h.get("note_context", ""))
        rows.append(
            f"<tr><td>{h['rank']}</td><td>{html.escape(h['token'])}</td>"
            f"<td>{h['weight']:+.4f}</td><td>{html.escape(h['method'])}</td>"
            f"<td>{html.escape(h['resource_type'])}</td><td>{context}</td></tr>"
        )
    baseline = "" if head["baseline_score"] is None else f" | baseline {head['baseline_score']:.3f}"
    summary_rows = []
    for rt, buckets in report["timeline_summary"].items():
        cells = ", ".join(f"{b}: {n}" for b, n in buckets.items())
        summary_rows.append(f"<li><b>{html.escape(rt)}</b> &mdash; {cells}</li>")
    return (
        "<!DOCTYPE html><html><head><meta charset='utf-8'>"
        f"<title>{html.escape(head['task'])} report</title></head><body>"
        f"<h1>{html.escape(head['task'])} at {html.escape(head['time_tag'])}</h1>"
        f"<p>Encounter {html.escape(head['encounter_id'])}, patient {html.escape(head['patient_id'])}: "
        f"model score {head['model_score']:.3f}{baseline}; {head['n_tokens']} tokens considered.</p>"
        f"<h2>Timeline</h2><ul>{''.join(summary_rows)}</ul>"
        "<h2>Highlighted occurrences</h2>"
        "<table border='1' cellpadding='4'><tr><th>#</th><th>token</th><th>weight</th>"
        f"<th>method</th><th>source</th><th>context</th></tr>{''.join(rows)}</table>"
        "</body></html>"
    )
