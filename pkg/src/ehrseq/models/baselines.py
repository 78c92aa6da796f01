"""Clinical logistic baselines over curated features.

Three feature recipes: an early-warning-style mortality scorer built on the
most recent vitals plus 24 common labs ("aews"), a readmission scorer built
on sodium, hemoglobin, service, procedures, prior stays and current length of
stay ("mhospital"), and a long-stay scorer built on demographics, diagnosis
burden and the same labs ("mliu"). "Most recent" always means the occurrence
with the greatest time not after the prediction cutoff; absent measurements
contribute a zero value with an explicit mask bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from ..cohort import EncounterRecord
from ..timeline import UNK_ID, TimelinePrefix, Vocabulary
from ..timeunits import HOUR_MS

BASELINE_KINDS = ("aews", "mhospital", "mliu")


def load_baseline_config(path=None) -> dict:
    """Feature key lists; the default ships with the package."""
    if path is None:
        text = resources.files("ehrseq.configs").joinpath("baseline_features.json").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    return json.loads(text)


@dataclass
class BaselineFeatureVector:
    values: np.ndarray
    index_map: dict[str, int]

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.index_map[name]])


def _most_recent_numeric(prefix: TimelinePrefix, key: str) -> float | None:
    for o in reversed(prefix.occurrences):
        if (
            o.source_resource_type == "Observation"
            and o.attribute_name == key
            and o.raw_numeric_value is not None
        ):
            return o.raw_numeric_value
    return None


def _last_numeric_values(prefix: TimelinePrefix, keys) -> dict[str, float]:
    """Most recent Observation value per key in one reverse scan."""
    wanted = set(keys)
    found: dict[str, float] = {}
    for o in reversed(prefix.occurrences):
        if not wanted:
            break
        if (
            o.source_resource_type == "Observation"
            and o.raw_numeric_value is not None
            and o.attribute_name in wanted
        ):
            found[o.attribute_name] = o.raw_numeric_value
            wanted.discard(o.attribute_name)
    return found


def _most_recent_token(prefix: TimelinePrefix, resource_type: str, attribute: str) -> int | None:
    for o in reversed(prefix.occurrences):
        if o.source_resource_type == resource_type and o.attribute_name == attribute:
            return o.token_id
    return None


def _one_hot(names: list[str], values: list[float], label: str, choices: Sequence[str], hit_id: int | None, vocab: Vocabulary, token_pattern: str) -> None:
    for choice in choices:
        tid = vocab.lookup(token_pattern.format(choice))
        match = hit_id is not None and tid != UNK_ID and hit_id == tid
        names.append(f"{label}:{choice}")
        values.append(1.0 if match else 0.0)


def feature_names(kind: str, config: Mapping) -> list[str]:
    names: list[str] = []
    if kind == "aews":
        for key in list(config["vitals"]) + list(config["labs"]):
            names.append(key)
            names.append(f"mask:{key}")
    elif kind == "mhospital":
        for key in ("sodium", "hemoglobin"):
            names.append(key)
            names.append(f"mask:{key}")
        names.extend(f"service:{s}" for s in config["hospital_services"])
        names.extend(["any_procedure", "n_prior_hospitalizations", "current_los_hours"])
    elif kind == "mliu":
        names.append("age")
        names.extend(f"sex:{s}" for s in config["sex_values"])
        names.append("n_prior_diagnoses")
        names.extend(f"source:{s}" for s in config["admission_sources"])
        names.extend(f"service:{s}" for s in config["hospital_services"])
        for key in config["labs"]:
            names.append(key)
            names.append(f"mask:{key}")
    else:
        raise ValueError(f"unknown baseline kind {kind!r}")
    return names


def featurize_baseline(
    kind: str,
    prefix: TimelinePrefix,
    e: EncounterRecord,
    vocab: Vocabulary,
    config: Mapping,
) -> BaselineFeatureVector:
    names: list[str] = []
    values: list[float] = []

    if kind == "aews":
        numeric_keys = list(config["vitals"]) + list(config["labs"])
    elif kind == "mhospital":
        numeric_keys = ["sodium", "hemoglobin"]
    elif kind == "mliu":
        numeric_keys = list(config["labs"])
    else:
        raise ValueError(f"unknown baseline kind {kind!r}")
    latest = _last_numeric_values(prefix, numeric_keys)

    def add_numeric(key: str) -> None:
        v = latest.get(key)
        names.append(key)
        values.append(0.0 if v is None else v)
        names.append(f"mask:{key}")
        values.append(0.0 if v is None else 1.0)

    if kind == "aews":
        for key in numeric_keys:
            add_numeric(key)
    elif kind == "mhospital":
        add_numeric("sodium")
        add_numeric("hemoglobin")
        for s in config["hospital_services"]:
            names.append(f"service:{s}")
            values.append(1.0 if e.hospital_service == s else 0.0)
        any_proc = any(o.source_resource_type == "Procedure" for o in prefix.occurrences)
        names.append("any_procedure")
        values.append(1.0 if any_proc else 0.0)
        n_prior = sum(
            1
            for o in prefix.occurrences
            if o.source_resource_type == "Encounter"
            and o.attribute_name == "hospital_service"
            and o.time < e.admit_time
        )
        names.append("n_prior_hospitalizations")
        values.append(float(n_prior))
        names.append("current_los_hours")
        values.append(max(0.0, (prefix.prediction_time - e.admit_time) / HOUR_MS))
    elif kind == "mliu":
        names.append("age")
        values.append(e.age_at_admit)
        sex_id = _most_recent_token(prefix, "Patient", "sex")
        _one_hot(names, values, "sex", config["sex_values"], sex_id, vocab, "Patient:sex:{}")
        prior_dx = {
            o.token_id
            for o in prefix.occurrences
            if o.source_resource_type == "Condition"
            and o.attribute_name == "icd9_code"
            and o.token_id != UNK_ID
        }
        names.append("n_prior_diagnoses")
        values.append(float(len(prior_dx)))
        source_id = _most_recent_token(prefix, "Encounter", "admission_source")
        _one_hot(names, values, "source", config["admission_sources"], source_id, vocab, "Encounter:admission_source:{}")
        for s in config["hospital_services"]:
            names.append(f"service:{s}")
            values.append(1.0 if e.hospital_service == s else 0.0)
        for key in numeric_keys:
            add_numeric(key)

    return BaselineFeatureVector(
        values=np.asarray(values, dtype=float),
        index_map={n: i for i, n in enumerate(names)},
    )


def featurize_matrix(
    kind: str,
    examples: Sequence,
    vocab: Vocabulary,
    config: Mapping,
) -> np.ndarray:
    rows = [featurize_baseline(kind, ex.prefix, ex.encounter, vocab, config).values for ex in examples]
    return np.vstack(rows) if rows else np.zeros((0, len(feature_names(kind, config))))


# ---------------------------------------------------------------------------
# L2-regularized logistic regression by full-batch gradient descent
# ---------------------------------------------------------------------------


@dataclass
class LogisticModel:
    """Weights over standardized features; standardization statistics are
    learned on the training matrix and frozen into the model."""

    weights: np.ndarray
    bias: float
    l2: float
    mu: np.ndarray
    sd: np.ndarray
    feature_names_: list[str] = field(default_factory=list)

    def _standardize(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mu) / self.sd

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        z = self._standardize(np.atleast_2d(X)) @ self.weights + self.bias
        return _sigmoid(z)

    # gradient-check interface: example is (x_row, y)
    def _gc_params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self._bias_arr}

    @property
    def _bias_arr(self) -> np.ndarray:
        if not hasattr(self, "_bias_box"):
            self._bias_box = np.array([self.bias], dtype=float)
        return self._bias_box

    def _sync_bias(self) -> None:
        if hasattr(self, "_bias_box"):
            self.bias = float(self._bias_box[0])

    def _gc_loss(self, example) -> float:
        x, y = example
        self._sync_bias()
        p = float(self.predict_proba(np.atleast_2d(x))[0])
        return _bce(p, float(y)) + 0.5 * self.l2 * float(self.weights @ self.weights)

    def _gc_grads(self, example) -> dict[str, np.ndarray]:
        x, y = example
        self._sync_bias()
        xs = self._standardize(np.atleast_2d(x))[0]
        p = float(self.predict_proba(np.atleast_2d(x))[0])
        g = p - float(y)
        return {"weights": g * xs + self.l2 * self.weights, "bias": np.array([g])}


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bce(p: float, y: float) -> float:
    eps = 1e-12
    return -(y * np.log(max(p, eps)) + (1 - y) * np.log(max(1 - p, eps)))


def train_logistic(
    X: np.ndarray,
    y: np.ndarray,
    l2: float = 1e-4,
    lr: float = 0.1,
    epochs: int = 400,
    seed: int = 0,
    feature_names_: list[str] | None = None,
) -> tuple[LogisticModel, list[float]]:
    """Minimize L2-regularized cross-entropy; deterministic, loss
    non-increasing under the default step size on standardized features."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.min() == y.max():
        raise ValueError("degenerate labels")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Xs = (X - mu) / sd
    n, d = Xs.shape
    w = np.zeros(d)
    b = 0.0
    losses = []
    for _ in range(epochs):
        z = Xs @ w + b
        p = _sigmoid(z)
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))
        losses.append(loss)
        gw = Xs.T @ (p - y) / n + l2 * w
        gb = float(np.mean(p - y))
        w -= lr * gw
        b -= lr * gb
    model = LogisticModel(
        weights=w, bias=b, l2=l2, mu=mu, sd=sd, feature_names_=feature_names_ or []
    )
    return model, losses


@dataclass
class BaselineModel:
    """A featurizer recipe bound to a trained logistic scorer."""

    kind: str
    logistic: LogisticModel
    config: dict

    def predict(self, prefix: TimelinePrefix, e: EncounterRecord, vocab: Vocabulary) -> float:
        fv = featurize_baseline(self.kind, prefix, e, vocab, self.config)
        return float(self.logistic.predict_proba(fv.values)[0])
