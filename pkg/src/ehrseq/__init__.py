"""ehrseq: EHR resource streams to token timelines, risk models, and reports.

The pipeline: parse newline-delimited clinical resources, tokenize them into
per-patient time-ordered sequences, build labeled prediction cohorts, train
sequence models and clinical logistic baselines, and evaluate with bootstrap
confidence intervals, calibration curves, alert-burden ratios, and
per-prediction attribution reports. A synthetic generator with an
analytically known risk model provides the verification oracle.
"""

from .cohort import (
    EncounterRecord,
    LabelSet,
    PredictionPoint,
    SplitAssignment,
    build_task_examples,
    extract_encounters,
    label_long_los,
    label_mortality,
    label_readmissions,
    prediction_grid,
    select_inclusions,
    split_patients,
)
from .fhir_ingest import (
    Attribute,
    FhirResource,
    IngestReport,
    parse_resource_stream,
    stream_resources,
    validate_resource,
)
from .metrics import (
    MetricsReport,
    ScoredSet,
    auroc,
    bootstrap_ci,
    calibration_curve,
    choose_threshold,
    earliness_curve,
    micro_f1,
    nne_at_sensitivity,
    weighted_auroc,
)
from .synth import SynthConfig, bayes_auroc, generate_cohort
from .timeline import (
    NumericQuantizer,
    PatientTimeline,
    TimelinePrefix,
    TokenOccurrence,
    Vocabulary,
    assemble_timeline,
    build_vocabulary,
    fit_quantizer,
    slice_at,
    tokenize_note,
    tokenize_resource,
)

__version__ = "0.1.0"
