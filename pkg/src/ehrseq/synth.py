"""Synthetic resource-stream generator with an analytically known risk model.

Each encounter draws lab z-scores z and a note-signal indicator s, then labels
from logistic laws:

    base         = bias + sum_k w_k * z_k
    s            ~ Bernoulli(p_high if base is in the top quartile of its
                             analytic distribution else p_low)
    logit        = base + v * s
    label        ~ Bernoulli(sigmoid(logit))

The signal word appears in the encounter's note exactly when s = 1, so note
text carries risk information that the lab-only baselines cannot see.
Readmission and long-stay labels come from analogous logistic draws with
their own bias/scale, and are materialized consistently: a positive
readmission draw schedules a real unplanned admission inside the 30-day
window, a negative one guarantees the next admission falls outside it.
The manifest records every latent logit, which is what makes a Bayes-optimal
discrimination ceiling computable.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Iterable, Sequence

import numpy as np

from .fhir_ingest import Attribute, FhirResource
from .metrics import ScoredSet, auroc
from .timeunits import DAY_MS, HOUR_MS

# 75th percentile of the standard normal; the top-quartile threshold of the
# lab-driven logit is bias + Z75 * sqrt(sum w_k^2).
Z75 = 0.6744897501960817

DEFAULT_START_MS = 1325376000000  # 2012-01-01T00:00:00Z

DEFAULT_FILLER_WORDS = (
    "patient admitted stable alert oriented denies reports history presents "
    "exam unremarkable continue monitor plan follow labs reviewed tolerating "
    "diet ambulating pain controlled afebrile breathing comfortable family "
    "updated discussed care team progressing improved resting overnight "
    "morning evening medication administered scheduled pending consult "
    "physical therapy nursing assessment skin intact voiding appetite fair "
    "mood pleasant cooperative vitals within normal limits education provided"
).split()

DEFAULT_SERVICES = ("medicine", "surgery", "cardiology", "oncology", "neurology", "obstetrics")
DEFAULT_DISPOSITIONS = ("Home", "Skilled Nursing Facility", "Rehabilitation", "Another Facility", "Other")
DEFAULT_DRUGS = ("vancomycin", "piperacillin", "heparin", "insulin", "furosemide", "metoprolol", "morphine", "ondansetron")
DEFAULT_ROUTES = ("iv", "oral", "subcutaneous")
DEFAULT_CPT_CATEGORIES = ("imaging", "cardiac", "endoscopy", "vascular", "drainage")
DEFAULT_FILLER_CODES = ("401.9", "272.4", "530.81", "311", "285.9", "599.0", "486", "427.31", "244.9", "708.0")


@dataclass
class SynthConfig:
    n_patients: int
    seed: int
    encounters_per_patient: dict[int, float] = field(default_factory=lambda: {1: 0.7, 2: 0.2, 3: 0.1})
    labs: dict[str, tuple[float, float]] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)
    note_signal_weight: float = 0.0
    bias: float = -2.0
    p_high: float = 0.9
    p_low: float = 0.05
    signal_word: str = "empyema"
    readmission_bias: float = -2.0
    readmission_weight_scale: float = 0.6
    readmission_note_scale: float = 0.5
    long_los_bias: float = -1.1
    long_los_weight_scale: float = 0.5
    long_los_note_scale: float = 0.5
    planted_code_high: str = "428.0"
    planted_code_low: str = "V30.00"
    p_planted: float = 0.95
    filler_codes: tuple[str, ...] = DEFAULT_FILLER_CODES
    p_planned_followup: float = 0.05
    institutions: tuple[str, ...] = ("site_a", "site_b")
    note_filler_words: tuple[str, ...] = tuple(DEFAULT_FILLER_WORDS)
    start_ms: int = DEFAULT_START_MS
    max_encounters_per_patient: int = 8

    def __post_init__(self):
        for p in (self.p_high, self.p_low, self.p_planted, self.p_planned_followup):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        for key, (mean, sd) in self.labs.items():
            if sd <= 0:
                raise ValueError(f"lab {key!r} needs sd > 0")
        unknown = set(self.weights) - set(self.labs)
        if unknown:
            raise ValueError(f"weights reference unknown labs: {sorted(unknown)}")

    def to_json(self) -> str:
        obj = {
            "n_patients": self.n_patients,
            "seed": self.seed,
            "encounters_per_patient": {str(k): v for k, v in self.encounters_per_patient.items()},
            "labs": {k: list(v) for k, v in self.labs.items()},
            "weights": self.weights,
            "note_signal_weight": self.note_signal_weight,
            "bias": self.bias,
            "p_high": self.p_high,
            "p_low": self.p_low,
            "signal_word": self.signal_word,
            "readmission_bias": self.readmission_bias,
            "readmission_weight_scale": self.readmission_weight_scale,
            "readmission_note_scale": self.readmission_note_scale,
            "long_los_bias": self.long_los_bias,
            "long_los_weight_scale": self.long_los_weight_scale,
            "long_los_note_scale": self.long_los_note_scale,
            "planted_code_high": self.planted_code_high,
            "planted_code_low": self.planted_code_low,
            "p_planted": self.p_planted,
            "p_planned_followup": self.p_planned_followup,
        }
        return json.dumps(obj, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SynthConfig":
        obj = json.loads(text)
        kwargs = dict(obj)
        kwargs["encounters_per_patient"] = {int(k): float(v) for k, v in obj["encounters_per_patient"].items()}
        kwargs["labs"] = {k: (float(v[0]), float(v[1])) for k, v in obj["labs"].items()}
        return cls(**kwargs)


@dataclass
class SynthTruth:
    """Ground truth for one generated encounter."""

    patient_id: str
    encounter_id: str
    institution_id: str
    admit_ms: int
    discharge_ms: int
    planned: bool
    age: float
    s_signal: bool
    base_logit: float
    mortality_logit: float
    mortality_label: bool
    readmission_logit: float
    readmission_label: bool
    long_los_logit: float
    long_los_label: bool
    codes: frozenset[str]


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _quartile_threshold(cfg: SynthConfig) -> float:
    spread = math.sqrt(sum(w * w for w in cfg.weights.values()))
    return cfg.bias + Z75 * spread


def _draw_count(rng: np.random.Generator, dist: dict[int, float]) -> int:
    counts = sorted(dist)
    probs = np.array([dist[c] for c in counts], dtype=float)
    probs = probs / probs.sum()
    return int(rng.choice(counts, p=probs))


def _note_text(rng: np.random.Generator, cfg: SynthConfig, with_signal: bool) -> str:
    n_words = int(rng.integers(8, 15))
    words = [str(w) for w in rng.choice(np.array(cfg.note_filler_words), size=n_words)]
    if with_signal:
        words.insert(int(rng.integers(0, len(words) + 1)), cfg.signal_word)
    return " ".join(words)


def generate_patient(cfg: SynthConfig, patient_index: int) -> tuple[list[FhirResource], list[SynthTruth]]:
    """Generate one patient's resources and truth rows.

    The generator is seeded from (cfg.seed, patient_index), so per-patient
    output is identical whether patients are generated serially or in
    parallel.
    """
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, patient_index)))
    pid = f"p{patient_index:06d}"
    institution = str(rng.choice(np.array(cfg.institutions)))
    sex = str(rng.choice(np.array(["female", "male"])))
    smoker = str(rng.choice(np.array(["never", "former", "current"])))
    age = float(np.round(rng.uniform(18.0, 92.0), 1))
    threshold = _quartile_threshold(cfg)
    lab_keys = sorted(cfg.labs)
    has_lab_signal = any(cfg.weights.get(k, 0.0) != 0.0 for k in lab_keys)

    resources: list[FhirResource] = []
    truths: list[SynthTruth] = []

    n_base = _draw_count(rng, cfg.encounters_per_patient)
    admit = cfg.start_ms + int(rng.integers(0, 365)) * DAY_MS + int(rng.integers(0, 24)) * HOUR_MS
    resources.append(
        FhirResource(
            "Patient",
            f"{pid}-demo",
            pid,
            admit - 30 * DAY_MS,
            [Attribute("sex", sex, "categorical"), Attribute("smoker", smoker, "categorical")],
        )
    )

    k = 0
    planned_next = False
    while True:
        eid = f"{pid}-e{k}"
        z = {key: float(rng.standard_normal()) for key in lab_keys}
        base = cfg.bias + sum(cfg.weights.get(key, 0.0) * z[key] for key in lab_keys)
        in_top_quartile = has_lab_signal and base > threshold
        s = bool(rng.random() < (cfg.p_high if in_top_quartile else cfg.p_low))
        v = cfg.note_signal_weight
        logit_mort = base + v * s
        mort = bool(rng.random() < sigmoid(logit_mort))

        spread = base - cfg.bias
        logit_los = cfg.long_los_bias + cfg.long_los_weight_scale * spread + cfg.long_los_note_scale * v * s
        long_stay = bool(rng.random() < sigmoid(logit_los))
        if long_stay:
            los_ms = int(rng.uniform(168 * HOUR_MS, 21 * DAY_MS))
        else:
            los_ms = int(rng.uniform(24 * HOUR_MS, 167 * HOUR_MS))
        discharge = admit + los_ms

        logit_readmit = cfg.readmission_bias + cfg.readmission_weight_scale * spread + cfg.readmission_note_scale * v * s
        readmit_drawn = bool(rng.random() < sigmoid(logit_readmit))
        # a death ends the record, so its readmission label is forced negative
        budget_left = k + 1 < cfg.max_encounters_per_patient
        readmit = readmit_drawn and not mort and budget_left

        disposition = "Expired" if mort else str(rng.choice(np.array(DEFAULT_DISPOSITIONS)))
        service = str(rng.choice(np.array(DEFAULT_SERVICES)))
        source = "elective" if planned_next else str(rng.choice(np.array(["emergency", "transfer", "referral"])))

        resources.append(
            FhirResource(
                "Encounter",
                f"{eid}-admit",
                pid,
                admit,
                [
                    Attribute("encounter_id", eid, "categorical"),
                    Attribute("institution_id", institution, "categorical"),
                    Attribute("hospital_service", service, "categorical"),
                    Attribute("admission_source", source, "categorical"),
                    Attribute("age_at_admit", age, "numeric"),
                    Attribute("admit_time", float(admit), "numeric"),
                ],
            )
        )
        resources.append(
            FhirResource(
                "Observation",
                f"{eid}-outpt",
                pid,
                admit - int(rng.uniform(2 * DAY_MS, 10 * DAY_MS)),
                [Attribute("outpatient_visit_score", float(np.round(rng.normal(50.0, 10.0), 2)), "numeric")],
            )
        )
        for j, key in enumerate(lab_keys):
            mean, sd = cfg.labs[key]
            t = admit + int(rng.uniform(1 * HOUR_MS, 20 * HOUR_MS))
            resources.append(
                FhirResource(
                    "Observation",
                    f"{eid}-lab{j}",
                    pid,
                    t,
                    [Attribute(key, float(np.round(mean + sd * z[key], 4)), "numeric")],
                )
            )
        note_time = admit + int(rng.uniform(2 * HOUR_MS, 22 * HOUR_MS))
        resources.append(
            FhirResource(
                "Note",
                f"{eid}-note",
                pid,
                note_time,
                [Attribute("text", _note_text(rng, cfg, s), "text")],
            )
        )
        for j in range(int(rng.integers(0, 3))):
            resources.append(
                FhirResource(
                    "MedicationOrder",
                    f"{eid}-med{j}",
                    pid,
                    admit + int(rng.uniform(1 * HOUR_MS, 30 * HOUR_MS)),
                    [
                        Attribute("drug_name", str(rng.choice(np.array(DEFAULT_DRUGS))), "categorical"),
                        Attribute("route", str(rng.choice(np.array(DEFAULT_ROUTES))), "categorical"),
                    ],
                )
            )
        if rng.random() < 0.3:
            resources.append(
                FhirResource(
                    "Procedure",
                    f"{eid}-proc",
                    pid,
                    admit + int(rng.uniform(1 * HOUR_MS, min(48 * HOUR_MS, los_ms))),
                    [Attribute("cpt_category", str(rng.choice(np.array(DEFAULT_CPT_CATEGORIES))), "categorical")],
                )
            )

        codes = set()
        planted = cfg.planted_code_high if base > cfg.bias else cfg.planted_code_low
        if rng.random() >= cfg.p_planted:
            planted = cfg.planted_code_low if planted == cfg.planted_code_high else cfg.planted_code_high
        codes.add(planted)
        for code in rng.choice(np.array(cfg.filler_codes), size=int(rng.integers(1, 4)), replace=False):
            codes.add(str(code))
        for j, code in enumerate(sorted(codes)):
            resources.append(
                FhirResource(
                    "Condition",
                    f"{eid}-dx{j}",
                    pid,
                    discharge,
                    [Attribute("icd9_code", code, "categorical")],
                )
            )
        resources.append(
            FhirResource(
                "Encounter",
                f"{eid}-discharge",
                pid,
                discharge,
                [
                    Attribute("encounter_id", eid, "categorical"),
                    Attribute("discharge_time", float(discharge), "numeric"),
                    Attribute("discharge_disposition", disposition, "categorical"),
                ],
            )
        )

        truths.append(
            SynthTruth(
                patient_id=pid,
                encounter_id=eid,
                institution_id=institution,
                admit_ms=admit,
                discharge_ms=discharge,
                planned=planned_next,
                age=age,
                s_signal=s,
                base_logit=base,
                mortality_logit=logit_mort,
                mortality_label=mort,
                readmission_logit=logit_readmit,
                readmission_label=readmit,
                long_los_logit=logit_los,
                long_los_label=long_stay,
                codes=frozenset(codes),
            )
        )

        k += 1
        if mort or k >= cfg.max_encounters_per_patient:
            break
        if readmit:
            planned_next = False
            admit = discharge + int(rng.uniform(1 * DAY_MS, 29 * DAY_MS))
        elif k < n_base:
            # outside the 30-day window so the negative label stays truthful
            planned_next = bool(rng.random() < cfg.p_planned_followup)
            admit = discharge + int(rng.uniform(31 * DAY_MS, 120 * DAY_MS))
        else:
            break

    return resources, truths


def generate_cohort(
    cfg: SynthConfig, jobs: int = 1
) -> tuple[list[FhirResource], list[SynthTruth]]:
    """Generate the full cohort; identical output for any jobs >= 1."""
    if jobs <= 1:
        per_patient = [generate_patient(cfg, i) for i in range(cfg.n_patients)]
    else:
        with Pool(processes=jobs) as pool:
            per_patient = pool.starmap(generate_patient, [(cfg, i) for i in range(cfg.n_patients)])
    resources: list[FhirResource] = []
    truths: list[SynthTruth] = []
    for res, tru in per_patient:
        resources.extend(res)
        truths.extend(tru)
    return resources, truths


TRUTH_COLUMNS = (
    "patient_id",
    "encounter_id",
    "institution_id",
    "admit_ms",
    "discharge_ms",
    "planned",
    "age",
    "s_signal",
    "base_logit",
    "mortality_logit",
    "mortality_label",
    "readmission_logit",
    "readmission_label",
    "long_los_logit",
    "long_los_label",
    "codes",
)


def write_truth_manifest(path, truths: Iterable[SynthTruth]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(TRUTH_COLUMNS)
        for t in truths:
            writer.writerow(
                [
                    t.patient_id,
                    t.encounter_id,
                    t.institution_id,
                    t.admit_ms,
                    t.discharge_ms,
                    int(t.planned),
                    repr(t.age),
                    int(t.s_signal),
                    repr(t.base_logit),
                    repr(t.mortality_logit),
                    int(t.mortality_label),
                    repr(t.readmission_logit),
                    int(t.readmission_label),
                    repr(t.long_los_logit),
                    int(t.long_los_label),
                    ",".join(sorted(t.codes)),
                ]
            )


def read_truth_manifest(path) -> list[SynthTruth]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            out.append(
                SynthTruth(
                    patient_id=row["patient_id"],
                    encounter_id=row["encounter_id"],
                    institution_id=row["institution_id"],
                    admit_ms=int(row["admit_ms"]),
                    discharge_ms=int(row["discharge_ms"]),
                    planned=bool(int(row["planned"])),
                    age=float(row["age"]),
                    s_signal=bool(int(row["s_signal"])),
                    base_logit=float(row["base_logit"]),
                    mortality_logit=float(row["mortality_logit"]),
                    mortality_label=bool(int(row["mortality_label"])),
                    readmission_logit=float(row["readmission_logit"]),
                    readmission_label=bool(int(row["readmission_label"])),
                    long_los_logit=float(row["long_los_logit"]),
                    long_los_label=bool(int(row["long_los_label"])),
                    codes=frozenset(c for c in row["codes"].split(",") if c),
                )
            )
    return out


_TASK_FIELDS = {
    "mortality": ("mortality_logit", "mortality_label"),
    "readmission": ("readmission_logit", "readmission_label"),
    "long_los": ("long_los_logit", "long_los_label"),
}


def bayes_auroc(truths: Sequence[SynthTruth], task: str = "mortality") -> float:
    """Discrimination of the true latent logit against the drawn labels: the
    ceiling any model can reach in expectation."""
    if not truths:
        raise ValueError("empty manifest")
    logit_field, label_field = _TASK_FIELDS[task]
    scores = np.array([getattr(t, logit_field) for t in truths])
    labels = np.array([getattr(t, label_field) for t in truths])
    return auroc(ScoredSet(scores, labels))
