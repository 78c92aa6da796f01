"""Cohort construction: inclusion rules, task labels, prediction timepoints,
and patient-level data splits.

Four tasks share one encounter universe so that every prediction timepoint of
a task evaluates exactly the same encounters. Readmission uses a greedy
forward pass in which each readmitting encounter is consumed by at most one
index stay but may itself index later stays.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .fhir_ingest import FhirResource
from .timeline import PatientTimeline, TimelinePrefix, slice_at
from .timeunits import DAY_MS, HOUR_MS

TASKS = ("mortality", "readmission", "long_los", "diagnoses")

MIN_AGE_YEARS = 18.0
MIN_STAY_MS = 24 * HOUR_MS
LONG_LOS_MS = 168 * HOUR_MS
READMIT_WINDOW_MS = 30 * DAY_MS

EXPIRED_DISPOSITION = "expired"

SPLIT_BINS = ("dev", "val", "test")

# Prediction timepoints per task, as tags resolved against admit/discharge.
TASK_TIME_TAGS = {
    "mortality": ("minus24h", "minus12h", "admit", "plus12h", "plus24h"),
    "readmission": ("admit", "plus24h", "discharge"),
    "long_los": ("admit", "plus24h"),
    "diagnoses": ("admit", "plus24h", "discharge"),
}

_TAG_OFFSET_MS = {
    "minus24h": -24 * HOUR_MS,
    "minus12h": -12 * HOUR_MS,
    "admit": 0,
    "plus12h": 12 * HOUR_MS,
    "plus24h": 24 * HOUR_MS,
}


class SplitLeakageError(RuntimeError):
    """Raised when test-split labels are requested outside final evaluation."""


@dataclass
class EncounterRecord:
    encounter_id: str
    patient_id: str
    institution_id: str
    admit_time: int
    discharge_time: int
    discharge_disposition: str
    hospital_service: str
    age_at_admit: float
    icd9_codes: frozenset[str] = frozenset()
    planned_flag: bool = False

    def __post_init__(self):
        if self.discharge_time <= self.admit_time:
            raise ValueError(f"encounter {self.encounter_id}: discharge_time must exceed admit_time")
        if self.age_at_admit < 0:
            raise ValueError(f"encounter {self.encounter_id}: negative age")


@dataclass
class LabelSet:
    mortality: bool
    readmit30: bool
    long_los: bool
    diagnoses: frozenset[str]
    diagnoses_eligible: bool


@dataclass
class PredictionPoint:
    encounter_id: str
    task: str
    time: int
    time_tag: str


@dataclass
class SplitAssignment:
    assignments: dict[str, str]
    seed: int

    def split_of(self, patient_id: str) -> str:
        return self.assignments[patient_id]

    def patients_in(self, bin_name: str) -> list[str]:
        return sorted(p for p, b in self.assignments.items() if b == bin_name)


def select_inclusions(encounters: Iterable[EncounterRecord]) -> list[EncounterRecord]:
    """Keep adult stays of at least 24 h; both thresholds are inclusive.

    Discharges against medical advice are deliberately kept: exclusion
    criteria that are unknown early in a stay would corrupt a real-time
    prediction cohort.
    """
    return [
        e
        for e in encounters
        if e.age_at_admit >= MIN_AGE_YEARS and (e.discharge_time - e.admit_time) >= MIN_STAY_MS
    ]


def label_mortality(e: EncounterRecord, expired_code: str = EXPIRED_DISPOSITION) -> bool:
    return e.discharge_disposition.strip().lower() == expired_code.lower()


def label_long_los(e: EncounterRecord) -> bool:
    return (e.discharge_time - e.admit_time) >= LONG_LOS_MS


def label_diagnoses(e: EncounterRecord) -> tuple[frozenset[str], bool]:
    """Full-length code strings, verbatim; empty set means ineligible for the
    diagnoses task (the encounter stays eligible for the other three)."""
    codes = frozenset(e.icd9_codes)
    return codes, bool(codes)


def label_readmissions(
    encounters: Sequence[EncounterRecord],
    eligible_ids: set[str] | None = None,
) -> dict[str, bool]:
    """Greedy forward pass over one patient's admissions, sorted by admit time.

    For each eligible index stay, the earliest later same-institution
    unplanned admission with admit <= discharge + 30 d that has not already
    been consumed marks the index positive and is consumed. A consumed
    admission may still serve as an index for later stays. The 30-day window
    is inclusive at exactly 30*24 h.
    """
    for a, b in zip(encounters, encounters[1:]):
        if a.admit_time > b.admit_time:
            raise ValueError("encounters must be sorted by admit_time")
    if len({e.patient_id for e in encounters}) > 1:
        raise ValueError("encounters must belong to one patient")

    consumed: set[str] = set()
    labels: dict[str, bool] = {}
    for i, index in enumerate(encounters):
        if eligible_ids is not None and index.encounter_id not in eligible_ids:
            continue
        window_end = index.discharge_time + READMIT_WINDOW_MS
        labels[index.encounter_id] = False
        for later in encounters[i + 1 :]:
            if later.admit_time > window_end:
                break
            if later.admit_time < index.discharge_time:
                continue
            if later.institution_id != index.institution_id:
                continue
            if later.planned_flag:
                continue
            if later.encounter_id in consumed:
                continue
            consumed.add(later.encounter_id)
            labels[index.encounter_id] = True
            break
    return labels


def build_label_sets(
    eligible: Sequence[EncounterRecord],
    all_encounters: Sequence[EncounterRecord],
) -> dict[str, LabelSet]:
    """Labels for each eligible encounter. Readmission candidates are drawn
    from the patient's full admission history, not just eligible stays."""
    eligible_ids = {e.encounter_id for e in eligible}
    by_patient: dict[str, list[EncounterRecord]] = {}
    for e in all_encounters:
        by_patient.setdefault(e.patient_id, []).append(e)

    readmit: dict[str, bool] = {}
    for encs in by_patient.values():
        encs.sort(key=lambda e: e.admit_time)
        readmit.update(label_readmissions(encs, eligible_ids=eligible_ids))

    out = {}
    for e in eligible:
        codes, code_eligible = label_diagnoses(e)
        out[e.encounter_id] = LabelSet(
            mortality=label_mortality(e),
            readmit30=readmit.get(e.encounter_id, False),
            long_los=label_long_los(e),
            diagnoses=codes,
            diagnoses_eligible=code_eligible,
        )
    return out


def prediction_grid(e: EncounterRecord, task: str) -> list[PredictionPoint]:
    """Timepoints at which the task is predicted for this encounter."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    points = []
    for tag in TASK_TIME_TAGS[task]:
        time = e.discharge_time if tag == "discharge" else e.admit_time + _TAG_OFFSET_MS[tag]
        points.append(PredictionPoint(encounter_id=e.encounter_id, task=task, time=time, time_tag=tag))
    return points


def resolve_time_tag(e: EncounterRecord, tag: str) -> int:
    if tag == "discharge":
        return e.discharge_time
    if tag not in _TAG_OFFSET_MS:
        raise ValueError(f"unknown time tag {tag!r}")
    return e.admit_time + _TAG_OFFSET_MS[tag]


def split_patients(patient_ids: Iterable[str], seed: int) -> SplitAssignment:
    """Deterministic 80/10/10 patient-level split; every hospitalization of a
    patient shares the patient's bin."""
    ids = sorted(set(patient_ids))
    rng = np.random.default_rng(seed)
    rng.shuffle(ids)
    n = len(ids)
    n_dev = int(round(0.8 * n))
    n_val = int(round(0.1 * n))
    assignments = {}
    for i, pid in enumerate(ids):
        if i < n_dev:
            assignments[pid] = "dev"
        elif i < n_dev + n_val:
            assignments[pid] = "val"
        else:
            assignments[pid] = "test"
    return SplitAssignment(assignments=assignments, seed=seed)


# ---------------------------------------------------------------------------
# Encounter extraction from the resource stream
# ---------------------------------------------------------------------------

DEFAULT_PLANNED_RULES = {
    "elective_admission_sources": ["elective"],
    "planned_procedure_categories": [],
}


def extract_encounters(
    resources: Iterable[FhirResource],
    planned_rules: Mapping | None = None,
) -> list[EncounterRecord]:
    """Assemble EncounterRecords from Encounter resources (admit- and
    discharge-phase attributes merged by encounter_id), ICD-9 codes from
    Condition resources stamped inside the stay window, and the planned flag
    from the configured rule set."""
    rules = dict(DEFAULT_PLANNED_RULES)
    if planned_rules:
        rules.update(planned_rules)
    elective = {s.lower() for s in rules["elective_admission_sources"]}
    planned_categories = {c.lower() for c in rules["planned_procedure_categories"]}

    merged: dict[str, dict] = {}
    conditions: dict[str, list[tuple[int, str]]] = {}
    procedures: dict[str, list[tuple[int, str]]] = {}
    for r in resources:
        if r.resource_type == "Encounter":
            attrs = {a.name: a.value for a in r.attributes}
            eid = attrs.get("encounter_id")
            if eid is None:
                continue
            rec = merged.setdefault(str(eid), {"patient_id": r.patient_id})
            rec.update(attrs)
        elif r.resource_type == "Condition":
            for a in r.attributes:
                if a.name == "icd9_code" and r.event_time is not None:
                    conditions.setdefault(r.patient_id, []).append((r.event_time, str(a.value)))
        elif r.resource_type == "Procedure":
            for a in r.attributes:
                if a.name == "cpt_category" and r.event_time is not None:
                    procedures.setdefault(r.patient_id, []).append((r.event_time, str(a.value).lower()))

    encounters = []
    for eid, rec in merged.items():
        required = ("admit_time", "discharge_time")
        if any(k not in rec for k in required):
            continue
        admit = int(float(rec["admit_time"]))
        discharge = int(float(rec["discharge_time"]))
        pid = rec["patient_id"]
        in_window_codes = frozenset(
            code for t, code in conditions.get(pid, []) if admit <= t <= discharge
        )
        source = str(rec.get("admission_source", "")).lower()
        planned = source in elective
        if not planned and planned_categories:
            planned = any(
                admit <= t <= discharge and cat in planned_categories
                for t, cat in procedures.get(pid, [])
            )
        encounters.append(
            EncounterRecord(
                encounter_id=eid,
                patient_id=pid,
                institution_id=str(rec.get("institution_id", "")),
                admit_time=admit,
                discharge_time=discharge,
                discharge_disposition=str(rec.get("discharge_disposition", "")),
                hospital_service=str(rec.get("hospital_service", "")),
                age_at_admit=float(rec.get("age_at_admit", 0.0)),
                icd9_codes=in_window_codes,
                planned_flag=planned,
            )
        )
    encounters.sort(key=lambda e: (e.patient_id, e.admit_time, e.encounter_id))
    return encounters


def strip_index_billing(prefix: TimelinePrefix, e: EncounterRecord) -> TimelinePrefix:
    """Drop Condition/Procedure occurrences stamped inside the index stay.

    Billing artifacts of the stay being predicted are generated after
    discharge in reality, so they are never legitimate inputs for the
    readmission or diagnoses tasks.
    """
    kept = [
        o
        for o in prefix.occurrences
        if not (
            o.source_resource_type in ("Condition", "Procedure")
            and e.admit_time <= o.time <= e.discharge_time
        )
    ]
    return TimelinePrefix(
        patient_id=prefix.patient_id,
        occurrences=kept,
        prediction_time=prefix.prediction_time,
    )


# ---------------------------------------------------------------------------
# Cohort manifest and supervised example assembly
# ---------------------------------------------------------------------------

MANIFEST_COLUMNS = (
    "encounter_id",
    "patient_id",
    "task",
    "time_tag",
    "time_ms",
    "label",
    "split",
)


@dataclass
class TaskExample:
    encounter_id: str
    prefix: TimelinePrefix
    label: bool | frozenset[str]
    encounter: EncounterRecord


def cohort_manifest_rows(
    eligible: Sequence[EncounterRecord],
    labels: Mapping[str, LabelSet],
    split: SplitAssignment,
) -> list[dict]:
    """One row per (encounter, task, prediction point); diagnoses rows carry
    the code set joined by commas and are emitted only for eligible code sets."""
    rows = []
    for e in eligible:
        ls = labels[e.encounter_id]
        for task in TASKS:
            if task == "diagnoses" and not ls.diagnoses_eligible:
                continue
            for p in prediction_grid(e, task):
                if task == "mortality":
                    label = str(int(ls.mortality))
                elif task == "readmission":
                    label = str(int(ls.readmit30))
                elif task == "long_los":
                    label = str(int(ls.long_los))
                else:
                    label = ",".join(sorted(ls.diagnoses))
                rows.append(
                    {
                        "encounter_id": e.encounter_id,
                        "patient_id": e.patient_id,
                        "task": task,
                        "time_tag": p.time_tag,
                        "time_ms": str(p.time),
                        "label": label,
                        "split": split.split_of(e.patient_id),
                    }
                )
    return rows


def write_cohort_manifest(path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS, delimiter="\t")
        writer.writeheader()
        writer.writerows(rows)


def read_cohort_manifest(path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


ENCOUNTER_COLUMNS = (
    "encounter_id",
    "patient_id",
    "institution_id",
    "admit_time",
    "discharge_time",
    "discharge_disposition",
    "hospital_service",
    "age_at_admit",
    "icd9_codes",
    "planned_flag",
)


def write_encounters(path, encounters: Iterable[EncounterRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(ENCOUNTER_COLUMNS)
        for e in encounters:
            writer.writerow(
                [
                    e.encounter_id,
                    e.patient_id,
                    e.institution_id,
                    e.admit_time,
                    e.discharge_time,
                    e.discharge_disposition,
                    e.hospital_service,
                    repr(e.age_at_admit),
                    ",".join(sorted(e.icd9_codes)),
                    int(e.planned_flag),
                ]
            )


def read_encounters(path) -> list[EncounterRecord]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            out.append(
                EncounterRecord(
                    encounter_id=row["encounter_id"],
                    patient_id=row["patient_id"],
                    institution_id=row["institution_id"],
                    admit_time=int(row["admit_time"]),
                    discharge_time=int(row["discharge_time"]),
                    discharge_disposition=row["discharge_disposition"],
                    hospital_service=row["hospital_service"],
                    age_at_admit=float(row["age_at_admit"]),
                    icd9_codes=frozenset(c for c in row["icd9_codes"].split(",") if c),
                    planned_flag=bool(int(row["planned_flag"])),
                )
            )
    return out


def build_task_examples(
    task: str,
    time_tag: str,
    splits: Sequence[str],
    purpose: str,
    timelines: Mapping[str, PatientTimeline],
    encounters: Mapping[str, EncounterRecord],
    labels: Mapping[str, LabelSet],
    split: SplitAssignment,
) -> list[TaskExample]:
    """Assemble (prefix, label) examples for one task at one timepoint.

    The test bin is readable only when purpose == "evaluate"; every other
    caller gets a SplitLeakageError, which is what keeps the test set hidden
    until final evaluation. Readmission and diagnoses prefixes are stripped
    of index-stay billing occurrences.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if "test" in splits and purpose != "evaluate":
        raise SplitLeakageError(f"test labels requested for purpose {purpose!r}")
    wanted = set(splits)
    examples = []
    for eid in sorted(encounters):
        e = encounters[eid]
        if split.split_of(e.patient_id) not in wanted:
            continue
        ls = labels[eid]
        if task == "diagnoses" and not ls.diagnoses_eligible:
            continue
        tl = timelines.get(e.patient_id)
        if tl is None:
            continue
        prefix = slice_at(tl, resolve_time_tag(e, time_tag))
        if task in ("readmission", "diagnoses"):
            prefix = strip_index_billing(prefix, e)
        if task == "mortality":
            label: bool | frozenset[str] = ls.mortality
        elif task == "readmission":
            label = ls.readmit30
        elif task == "long_los":
            label = ls.long_los
        else:
            label = ls.diagnoses
        examples.append(TaskExample(encounter_id=eid, prefix=prefix, label=label, encounter=e))
    return examples
