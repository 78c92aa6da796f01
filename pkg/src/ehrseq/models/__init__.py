"""Model families: clinical logistic baselines, the attention network, the
bag LSTM, boosted time-based stumps, and their mean-probability ensemble."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..cohort import EncounterRecord
from ..timeline import TimelinePrefix, Vocabulary
from .baselines import (
    BASELINE_KINDS,
    BaselineFeatureVector,
    BaselineModel,
    LogisticModel,
    featurize_baseline,
    featurize_matrix,
    feature_names,
    load_baseline_config,
    train_logistic,
)
from .checkpoint import load_model, save_model
from .gradcheck import gradient_check
from .lstm import LstmHyperparams, LstmModel, train_lstm
from .stumps import StumpEnsemble, StumpHyperparams, StumpPredicate, train_stumps
from .tann import (
    PerModalityTann,
    TannHyperparams,
    TannModel,
    train_diagnoses_head,
    train_per_modality,
    train_tann,
)

__all__ = [
    "BASELINE_KINDS",
    "BaselineFeatureVector",
    "BaselineModel",
    "EnsembleModel",
    "LogisticModel",
    "LstmHyperparams",
    "LstmModel",
    "PerModalityTann",
    "StumpEnsemble",
    "StumpHyperparams",
    "StumpPredicate",
    "TannHyperparams",
    "TannModel",
    "ensemble_predict",
    "featurize_baseline",
    "featurize_matrix",
    "feature_names",
    "gradient_check",
    "load_baseline_config",
    "load_model",
    "predict",
    "save_model",
    "train_diagnoses_head",
    "train_logistic",
    "train_lstm",
    "train_per_modality",
    "train_stumps",
    "train_tann",
]


def ensemble_predict(member_probabilities: Sequence[float | np.ndarray]) -> float | np.ndarray:
    """Coordinate-wise arithmetic mean of member probabilities."""
    if len(member_probabilities) == 0:
        raise ValueError("empty member list")
    stacked = np.asarray(member_probabilities, dtype=float)
    mean = stacked.mean(axis=0)
    return float(mean) if mean.ndim == 0 else mean


@dataclass
class EnsembleModel:
    members: list

    def __post_init__(self):
        if not self.members:
            raise ValueError("empty member list")


def predict(
    model,
    prefix: TimelinePrefix,
    encounter: EncounterRecord | None = None,
    vocab: Vocabulary | None = None,
) -> float | np.ndarray:
    """Score a timeline prefix with any trained model.

    Pure and deterministic: identical (model, prefix) pairs give identical
    probabilities, and nothing after the prefix cutoff can influence the
    output.
    """
    if isinstance(model, EnsembleModel):
        return ensemble_predict([predict(m, prefix, encounter, vocab) for m in model.members])
    if isinstance(model, BaselineModel):
        if encounter is None or vocab is None:
            raise ValueError("baseline models need the encounter and vocabulary")
        return model.predict(prefix, encounter, vocab)
    return model.predict(prefix)
