"""Shared synthetic cohorts and trained models for the test suite.

The heavyweight fixtures are session-scoped: two generated cohorts (one with
note-token signal, one lab-only) pushed through the real pipeline, plus the
models trained on them. Individual tests slice what they need.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import pytest
from hypothesis import settings

from ehrseq import cohort as cohort_mod
from ehrseq import timeline as timeline_mod
from ehrseq.models.baselines import (
    BaselineModel,
    featurize_matrix,
    feature_names,
    load_baseline_config,
    train_logistic,
)
from ehrseq.models.lstm import LstmHyperparams, train_lstm
from ehrseq.models.stumps import StumpHyperparams, train_stumps
from ehrseq.models.tann import TannHyperparams, train_tann
from ehrseq.synth import SynthConfig, SynthTruth, generate_cohort

settings.register_profile("suite", deadline=None, max_examples=50, derandomize=True)
settings.load_profile("suite")

SYNTH_LABS = {
    "lactate": (1.6, 0.9),
    "creatinine": (1.1, 0.5),
    "wbc": (8.5, 3.0),
    "sodium": (139.0, 4.0),
    "hemoglobin": (12.5, 2.0),
    "albumin": (3.8, 0.6),
    "heart_rate": (84.0, 14.0),
    "respiratory_rate": (18.0, 4.0),
    "systolic_bp": (122.0, 18.0),
    "temperature": (37.0, 0.6),
}

SIGNAL_WEIGHTS = {"lactate": 0.7, "creatinine": 0.5, "wbc": 0.5, "albumin": -0.5}

SIGNAL_CONFIG = SynthConfig(
    n_patients=1800,
    seed=11,
    labs=SYNTH_LABS,
    weights=SIGNAL_WEIGHTS,
    note_signal_weight=2.8,
    bias=-2.1,
    p_high=0.8,
    p_low=0.3,
)

LAB_ONLY_CONFIG = SynthConfig(
    n_patients=4400,
    seed=29,
    encounters_per_patient={1: 1.0},
    labs=SYNTH_LABS,
    weights={"lactate": 0.9, "creatinine": 0.7, "wbc": 0.6, "albumin": -0.6},
    note_signal_weight=0.0,
    bias=-1.6,
)


@dataclass
class PipelineResult:
    config: SynthConfig
    resources: list
    truths: list[SynthTruth]
    all_encounters: list
    eligible: list
    labels: dict
    split: cohort_mod.SplitAssignment
    vocab: timeline_mod.Vocabulary
    quantizer: timeline_mod.NumericQuantizer
    timelines: dict
    encounter_map: dict = field(default_factory=dict)
    truth_map: dict = field(default_factory=dict)
    build_seconds: float = 0.0

    def examples(self, task: str, tag: str, splits, purpose: str):
        return cohort_mod.build_task_examples(
            task, tag, splits, purpose, self.timelines, self.encounter_map, self.labels, self.split
        )


def run_pipeline(config: SynthConfig, split_seed: int = 7) -> PipelineResult:
    started = time.monotonic()
    resources, truths = generate_cohort(config)
    all_encounters = cohort_mod.extract_encounters(resources)
    eligible = cohort_mod.select_inclusions(all_encounters)
    labels = cohort_mod.build_label_sets(eligible, all_encounters)
    split = cohort_mod.split_patients([e.patient_id for e in eligible], split_seed)
    dev_patients = {p for p, b in split.assignments.items() if b == "dev"}
    dev_resources = [r for r in resources if r.patient_id in dev_patients]
    quantizer = timeline_mod.fit_quantizer(timeline_mod.collect_numeric_observations(dev_resources))
    vocab = timeline_mod.build_vocabulary(dev_resources, 5, quantizer)
    timelines = timeline_mod.timelines_from_resources(resources, vocab, quantizer)
    return PipelineResult(
        config=config,
        resources=resources,
        truths=truths,
        all_encounters=all_encounters,
        eligible=eligible,
        labels=labels,
        split=split,
        vocab=vocab,
        quantizer=quantizer,
        timelines=timelines,
        encounter_map={e.encounter_id: e for e in eligible},
        truth_map={t.encounter_id: t for t in truths},
        build_seconds=time.monotonic() - started,
    )


@pytest.fixture(scope="session")
def sig_pipeline() -> PipelineResult:
    return run_pipeline(SIGNAL_CONFIG)


@pytest.fixture(scope="session")
def v0_pipeline() -> PipelineResult:
    return run_pipeline(LAB_ONLY_CONFIG)


@dataclass
class TrainedModels:
    tann: object
    lstm: object
    stumps: object
    aews: BaselineModel
    dev: list
    test: list
    y_dev: np.ndarray
    y_test: np.ndarray
    baseline_config: dict
    train_seconds: float = 0.0


@pytest.fixture(scope="session")
def sig_models(sig_pipeline: PipelineResult) -> TrainedModels:
    """Mortality-at-plus24h models trained on the signal cohort's dev split."""
    started = time.monotonic()
    dev = sig_pipeline.examples("mortality", "plus24h", ("dev",), "train")
    test = sig_pipeline.examples("mortality", "plus24h", ("test",), "evaluate")
    y_dev = np.array([ex.label for ex in dev])
    y_test = np.array([ex.label for ex in test])
    prefixes = [ex.prefix for ex in dev]
    vocab = sig_pipeline.vocab
    tann, _ = train_tann(prefixes, y_dev, vocab.size, TannHyperparams(epochs=25, seed=0))
    lstm, _ = train_lstm(prefixes, y_dev, vocab.size, LstmHyperparams(epochs=25, lr=0.15, seed=0))
    stumps = train_stumps(prefixes, y_dev, StumpHyperparams(rounds=40))
    config = load_baseline_config()
    X = featurize_matrix("aews", dev, vocab, config)
    logistic, _ = train_logistic(X, y_dev, epochs=2000, feature_names_=feature_names("aews", config))
    aews = BaselineModel(kind="aews", logistic=logistic, config=config)
    return TrainedModels(
        tann=tann,
        lstm=lstm,
        stumps=stumps,
        aews=aews,
        dev=dev,
        test=test,
        y_dev=y_dev,
        y_test=y_test,
        baseline_config=config,
        train_seconds=time.monotonic() - started,
    )


@pytest.fixture(scope="session")
def v0_logistic(v0_pipeline: PipelineResult):
    """Well-specified lab-only mortality baseline with its test examples."""
    dev = v0_pipeline.examples("mortality", "plus24h", ("dev",), "train")
    test = v0_pipeline.examples("mortality", "plus24h", ("test",), "evaluate")
    y_dev = np.array([ex.label for ex in dev])
    config = load_baseline_config()
    X = featurize_matrix("aews", dev, v0_pipeline.vocab, config)
    logistic, losses = train_logistic(X, y_dev, epochs=2000, feature_names_=feature_names("aews", config))
    model = BaselineModel(kind="aews", logistic=logistic, config=config)
    return model, dev, test, losses
