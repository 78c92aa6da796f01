import numpy as np
import pytest

from ehrseq.cohort import (
    EncounterRecord,
    SplitLeakageError,
    TASK_TIME_TAGS,
    build_label_sets,
    build_task_examples,
    cohort_manifest_rows,
    extract_encounters,
    label_diagnoses,
    label_long_los,
    label_mortality,
    label_readmissions,
    prediction_grid,
    read_cohort_manifest,
    read_encounters,
    select_inclusions,
    split_patients,
    strip_index_billing,
    write_cohort_manifest,
    write_encounters,
)
from ehrseq.fhir_ingest import Attribute, FhirResource
from ehrseq.timeline import TimelinePrefix, TokenOccurrence
from ehrseq.timeunits import DAY_MS, HOUR_MS

from oracles import declarative_readmission


def enc(eid="e1", pid="p1", admit=0, discharge=48 * HOUR_MS, age=50.0, inst="a",
        disposition="Home", planned=False, codes=(), service="medicine"):
    return EncounterRecord(
        encounter_id=eid,
        patient_id=pid,
        institution_id=inst,
        admit_time=admit,
        discharge_time=discharge,
        discharge_disposition=disposition,
        hospital_service=service,
        age_at_admit=age,
        icd9_codes=frozenset(codes),
        planned_flag=planned,
    )


class TestInclusions:
    def test_age_threshold_inclusive(self):
        assert select_inclusions([enc(age=17.9)]) == []
        assert len(select_inclusions([enc(age=18.0)])) == 1

    def test_stay_threshold_inclusive(self):
        just_under = enc(discharge=24 * HOUR_MS - 60_000)
        exactly = enc(discharge=24 * HOUR_MS)
        assert select_inclusions([just_under]) == []
        assert len(select_inclusions([exactly])) == 1

    def test_ama_discharge_included(self):
        ama = enc(disposition="Left Against Medical Advice", age=40.0)
        assert len(select_inclusions([ama])) == 1


class TestMortality:
    def test_expired_case_insensitive(self):
        assert label_mortality(enc(disposition="Expired"))
        assert label_mortality(enc(disposition="EXPIRED"))

    def test_home_and_empty(self):
        assert not label_mortality(enc(disposition="Home"))
        assert not label_mortality(enc(disposition=""))


class TestLongLos:
    def test_boundaries(self):
        assert not label_long_los(enc(discharge=int(167.9 * HOUR_MS)))
        assert label_long_los(enc(discharge=168 * HOUR_MS))
        assert label_long_los(enc(discharge=240 * HOUR_MS))


class TestDiagnoses:
    def test_full_length_codes_kept_verbatim(self):
        codes, eligible = label_diagnoses(enc(codes={"250.42"}))
        assert codes == frozenset({"250.42"}) and eligible
        assert "250.4" not in codes

    def test_empty_ineligible(self):
        codes, eligible = label_diagnoses(enc())
        assert codes == frozenset() and not eligible

    def test_large_code_set_intact(self):
        many = {f"{i:03d}.{i % 10}" for i in range(228)}
        codes, eligible = label_diagnoses(enc(codes=many))
        assert len(codes) == 228 and eligible


class TestReadmission:
    def test_within_window_day29(self):
        a = enc("a", admit=0, discharge=2 * DAY_MS)
        b = enc("b", admit=2 * DAY_MS + 29 * DAY_MS, discharge=2 * DAY_MS + 31 * DAY_MS)
        labels = label_readmissions([a, b])
        assert labels["a"] is True

    def test_window_boundary_inclusive_day30_exclusive_day31(self):
        a = enc("a", admit=0, discharge=2 * DAY_MS)
        at30 = enc("b", admit=2 * DAY_MS + 30 * DAY_MS, discharge=2 * DAY_MS + 32 * DAY_MS)
        assert label_readmissions([a, at30])["a"] is True
        at31 = enc("b", admit=2 * DAY_MS + 31 * DAY_MS, discharge=2 * DAY_MS + 33 * DAY_MS)
        assert label_readmissions([a, at31])["a"] is False

    def test_chain_consumed_readmission_still_indexes(self):
        # A -> B (day 10) -> C (day 20): B consumed by A, C consumed by B
        a = enc("a", admit=0, discharge=1 * DAY_MS)
        b = enc("b", admit=10 * DAY_MS, discharge=11 * DAY_MS)
        c = enc("c", admit=20 * DAY_MS, discharge=21 * DAY_MS)
        labels = label_readmissions([a, b, c])
        assert labels == {"a": True, "b": True, "c": False}

    def test_counted_once(self):
        # one readmission cannot mark two indexes positive
        a = enc("a", admit=0, discharge=1 * DAY_MS)
        b = enc("b", admit=2 * DAY_MS, discharge=3 * DAY_MS)
        c = enc("c", admit=5 * DAY_MS, discharge=6 * DAY_MS)
        labels = label_readmissions([a, b, c])
        # a consumes b; b consumes c; c has nothing
        assert labels == {"a": True, "b": True, "c": False}
        n_positive = sum(labels.values())
        assert n_positive <= 2  # two distinct consumed encounters

    def test_planned_never_counts(self):
        a = enc("a", admit=0, discharge=1 * DAY_MS)
        b = enc("b", admit=5 * DAY_MS, discharge=6 * DAY_MS, planned=True)
        assert label_readmissions([a, b])["a"] is False

    def test_same_institution_only(self):
        a = enc("a", admit=0, discharge=1 * DAY_MS, inst="x")
        b = enc("b", admit=5 * DAY_MS, discharge=6 * DAY_MS, inst="y")
        assert label_readmissions([a, b])["a"] is False

    def test_unsorted_rejected(self):
        a = enc("a", admit=5 * DAY_MS, discharge=6 * DAY_MS)
        b = enc("b", admit=0, discharge=1 * DAY_MS)
        with pytest.raises(ValueError, match="sorted"):
            label_readmissions([a, b])

    def test_matches_declarative_oracle_on_random_sequences(self):
        rng = np.random.default_rng(17)
        for _ in range(300):
            n = int(rng.integers(1, 7))
            t = 0
            encounters = []
            for i in range(n):
                admit = t + int(rng.integers(0, 40)) * DAY_MS
                discharge = admit + int(rng.integers(1, 10)) * DAY_MS
                encounters.append(
                    enc(
                        f"e{i}", admit=admit, discharge=discharge,
                        inst=str(rng.choice(["a", "b"])),
                        planned=bool(rng.random() < 0.2),
                        age=float(rng.choice([15.0, 40.0])),
                    )
                )
                t = discharge
            eligible_ids = {e.encounter_id for e in select_inclusions(encounters)}
            got = label_readmissions(encounters, eligible_ids=eligible_ids)
            oracle = declarative_readmission(
                [
                    {
                        "eid": e.encounter_id,
                        "admit": e.admit_time,
                        "discharge": e.discharge_time,
                        "institution": e.institution_id,
                        "planned": e.planned_flag,
                        "eligible": e.encounter_id in eligible_ids,
                    }
                    for e in encounters
                ]
            )
            assert got == oracle


class TestPredictionGrid:
    def test_mortality_five_points(self):
        points = prediction_grid(enc(admit=100 * HOUR_MS, discharge=200 * HOUR_MS), "mortality")
        assert [p.time_tag for p in points] == ["minus24h", "minus12h", "admit", "plus12h", "plus24h"]
        assert points[0].time == 76 * HOUR_MS
        assert points[-1].time == 124 * HOUR_MS

    def test_long_los_two_points(self):
        assert len(prediction_grid(enc(), "long_los")) == 2

    def test_readmission_ends_at_discharge(self):
        e = enc(admit=0, discharge=90 * HOUR_MS)
        points = prediction_grid(e, "readmission")
        assert points[-1].time_tag == "discharge"
        assert points[-1].time == e.discharge_time

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            prediction_grid(enc(), "weather")


class TestSplit:
    def test_ten_patients_8_1_1(self):
        split = split_patients([f"p{i}" for i in range(10)], seed=3)
        counts = {b: sum(1 for v in split.assignments.values() if v == b) for b in ("dev", "val", "test")}
        assert counts == {"dev": 8, "val": 1, "test": 1}

    def test_deterministic(self):
        ids = [f"p{i}" for i in range(57)]
        assert split_patients(ids, 9).assignments == split_patients(ids, 9).assignments

    def test_proportions_within_one(self):
        n = 137
        split = split_patients([f"p{i}" for i in range(n)], seed=1)
        counts = {b: sum(1 for v in split.assignments.values() if v == b) for b in ("dev", "val", "test")}
        assert abs(counts["dev"] - 0.8 * n) <= 1
        assert abs(counts["val"] - 0.1 * n) <= 1
        assert abs(counts["test"] - 0.1 * n) <= 1

    def test_order_insensitive(self):
        ids = [f"p{i}" for i in range(30)]
        assert split_patients(ids, 5).assignments == split_patients(ids[::-1], 5).assignments


class TestExtractEncounters:
    def _resources(self):
        admit, discharge = 0, 50 * HOUR_MS
        return [
            FhirResource("Encounter", "e1a", "p1", admit, [
                Attribute("encounter_id", "e1", "categorical"),
                Attribute("institution_id", "site_a", "categorical"),
                Attribute("hospital_service", "medicine", "categorical"),
                Attribute("admission_source", "elective", "categorical"),
                Attribute("age_at_admit", 61.0, "numeric"),
                Attribute("admit_time", float(admit), "numeric"),
            ]),
            FhirResource("Condition", "c1", "p1", discharge, [Attribute("icd9_code", "428.0", "categorical")]),
            FhirResource("Condition", "c2", "p1", discharge + DAY_MS, [Attribute("icd9_code", "999.9", "categorical")]),
            FhirResource("Encounter", "e1b", "p1", discharge, [
                Attribute("encounter_id", "e1", "categorical"),
                Attribute("discharge_time", float(discharge), "numeric"),
                Attribute("discharge_disposition", "Home", "categorical"),
            ]),
        ]

    def test_phases_merged_and_codes_windowed(self):
        encounters = extract_encounters(self._resources())
        assert len(encounters) == 1
        e = encounters[0]
        assert e.encounter_id == "e1"
        assert e.admit_time == 0 and e.discharge_time == 50 * HOUR_MS
        assert e.icd9_codes == frozenset({"428.0"})  # the day-after code is outside the stay
        assert e.discharge_disposition == "Home"

    def test_planned_from_elective_source(self):
        e = extract_encounters(self._resources())[0]
        assert e.planned_flag is True

    def test_planned_from_procedure_category(self):
        resources = self._resources()
        resources[0].attributes[3] = Attribute("admission_source", "emergency", "categorical")
        resources.append(
            FhirResource("Procedure", "pr", "p1", 2 * HOUR_MS, [Attribute("cpt_category", "endoscopy", "categorical")])
        )
        rules = {"elective_admission_sources": ["elective"], "planned_procedure_categories": ["endoscopy"]}
        e = extract_encounters(resources, rules)[0]
        assert e.planned_flag is True

    def test_incomplete_encounter_skipped(self):
        resources = self._resources()[:1]  # admit phase only
        assert extract_encounters(resources) == []


class TestStripIndexBilling:
    def test_in_window_conditions_dropped_prior_kept(self):
        e = enc(admit=100 * DAY_MS, discharge=103 * DAY_MS)
        occs = [
            TokenOccurrence(2, 50 * DAY_MS, "Condition", "icd9_code"),
            TokenOccurrence(3, 101 * DAY_MS, "Condition", "icd9_code"),
            TokenOccurrence(4, 101 * DAY_MS, "Procedure", "cpt_category"),
            TokenOccurrence(5, 101 * DAY_MS, "Observation", "lactate", 2.0),
        ]
        prefix = TimelinePrefix("p1", occs, 103 * DAY_MS)
        stripped = strip_index_billing(prefix, e)
        kept = [(o.token_id, o.source_resource_type) for o in stripped.occurrences]
        assert kept == [(2, "Condition"), (5, "Observation")]


class TestManifestAndExamples:
    def _tiny_cohort(self):
        e1 = enc("e1", "p1", admit=0, discharge=30 * HOUR_MS, codes={"428.0"})
        e2 = enc("e2", "p2", admit=0, discharge=200 * HOUR_MS, disposition="Expired")
        eligible = [e1, e2]
        labels = build_label_sets(eligible, eligible)
        split = split_patients(["p1", "p2"], seed=0)
        return eligible, labels, split

    def test_manifest_round_trip(self, tmp_path):
        eligible, labels, split = self._tiny_cohort()
        rows = cohort_manifest_rows(eligible, labels, split)
        path = tmp_path / "cohort.tsv"
        write_cohort_manifest(path, rows)
        assert read_cohort_manifest(path) == rows

    def test_identical_cohort_across_timepoints(self):
        eligible, labels, split = self._tiny_cohort()
        rows = cohort_manifest_rows(eligible, labels, split)
        for task, tags in TASK_TIME_TAGS.items():
            per_tag = {}
            for tag in tags:
                per_tag[tag] = {r["encounter_id"] for r in rows if r["task"] == task and r["time_tag"] == tag}
            sets = list(per_tag.values())
            assert all(s == sets[0] for s in sets)

    def test_diagnoses_rows_only_for_eligible(self):
        eligible, labels, split = self._tiny_cohort()
        rows = cohort_manifest_rows(eligible, labels, split)
        dx_rows = [r for r in rows if r["task"] == "diagnoses"]
        assert {r["encounter_id"] for r in dx_rows} == {"e1"}

    def test_encounters_round_trip(self, tmp_path):
        eligible, _, _ = self._tiny_cohort()
        path = tmp_path / "enc.tsv"
        write_encounters(path, eligible)
        assert read_encounters(path) == eligible

    def test_split_leakage_guard(self):
        eligible, labels, split = self._tiny_cohort()
        with pytest.raises(SplitLeakageError):
            build_task_examples(
                "mortality", "admit", ("dev", "test"), "train", {}, {e.encounter_id: e for e in eligible}, labels, split
            )
        # evaluate purpose may read test labels
        build_task_examples(
            "mortality", "admit", ("test",), "evaluate", {}, {e.encounter_id: e for e in eligible}, labels, split
        )


class TestPipelineLabelConsistency:
    def test_labels_match_generator_truth(self, sig_pipeline):
        for e in sig_pipeline.eligible:
            truth = sig_pipeline.truth_map[e.encounter_id]
            ls = sig_pipeline.labels[e.encounter_id]
            assert ls.mortality == truth.mortality_label
            assert ls.readmit30 == truth.readmission_label
            assert ls.long_los == truth.long_los_label
            assert ls.diagnoses == truth.codes

    def test_no_prefix_exceeds_cutoff(self, sig_pipeline):
        examples = sig_pipeline.examples("mortality", "admit", ("dev",), "train")
        for ex in examples[:50]:
            assert all(o.time <= ex.prefix.prediction_time for o in ex.prefix.occurrences)

    def test_readmission_inputs_exclude_index_billing(self, sig_pipeline):
        examples = sig_pipeline.examples("readmission", "discharge", ("dev",), "train")
        assert examples
        for ex in examples:
            e = ex.encounter
            for o in ex.prefix.occurrences:
                if o.source_resource_type in ("Condition", "Procedure"):
                    assert not (e.admit_time <= o.time <= e.discharge_time)
