"""Gradient boosting of time-based decision stumps with logistic loss.

A stump is a single binary predicate over a prefix: either "token v occurred
within the last B hours" or "the max of numeric key k within the last B hours
is >= theta", with theta drawn from the decile grid of the training
aggregates. Each round scans every candidate predicate, Newton-optimizes its
step weight on the covered examples, and keeps the stump whose optimized
exact loss is smallest; ties break toward the lower predicate id. The
additive score starts from the log-odds intercept, so training loss is
non-increasing by construction (a zero step is always available).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..timeline import TimelinePrefix
from ..timeunits import HOUR_MS

DEFAULT_BUCKET_HOURS = (6.0, 24.0, 168.0, 720.0, math.inf)


@dataclass(frozen=True)
class StumpPredicate:
    kind: str  # "token" | "numeric"
    bucket_hours: float
    token_id: int = -1
    key: str = ""
    threshold: float = 0.0

    def describe(self) -> str:
        window = "ever" if math.isinf(self.bucket_hours) else f"{self.bucket_hours:g}h"
        if self.kind == "token":
            return f"token {self.token_id} within {window}"
        return f"max({self.key}) >= {self.threshold:g} within {window}"


@dataclass
class Stump:
    predicate: StumpPredicate
    alpha: float


@dataclass
class StumpEnsemble:
    stumps: list[Stump]
    intercept: float
    bucket_hours: tuple[float, ...] = DEFAULT_BUCKET_HOURS
    train_losses: list[float] = field(default_factory=list)

    def decision_value(self, prefix: TimelinePrefix) -> float:
        score = self.intercept
        for s in self.stumps:
            if evaluate_predicate(s.predicate, prefix):
                score += s.alpha
        return score

    def predict(self, prefix: TimelinePrefix) -> float:
        return _sigmoid_scalar(self.decision_value(prefix))


@dataclass
class StumpHyperparams:
    rounds: int = 40
    bucket_hours: tuple[float, ...] = DEFAULT_BUCKET_HOURS
    min_support: int = 5
    seed: int = 0


def _sigmoid_scalar(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def evaluate_predicate(pred: StumpPredicate, prefix: TimelinePrefix) -> bool:
    horizon = pred.bucket_hours * HOUR_MS
    if pred.kind == "token":
        for o in prefix.occurrences:
            if o.token_id == pred.token_id and (prefix.prediction_time - o.time) <= horizon:
                return True
        return False
    best = None
    for o in prefix.occurrences:
        if (
            o.attribute_name == pred.key
            and o.raw_numeric_value is not None
            and (prefix.prediction_time - o.time) <= horizon
        ):
            if best is None or o.raw_numeric_value > best:
                best = o.raw_numeric_value
    return best is not None and best >= pred.threshold


def enumerate_candidates(
    prefixes: list[TimelinePrefix],
    bucket_hours: tuple[float, ...],
    min_support: int,
) -> tuple[list[StumpPredicate], np.ndarray]:
    """Canonical candidate list and its (n, n_candidates) coverage matrix.

    Candidate order is (token_id, bucket) for token predicates followed by
    (key, bucket, threshold) for numeric predicates; predicate ids are
    positions in this list, which is the deterministic tie-break order.
    """
    n = len(prefixes)
    token_ids = sorted({o.token_id for p in prefixes for o in p.occurrences})
    numeric_keys = sorted(
        {o.attribute_name for p in prefixes for o in p.occurrences if o.raw_numeric_value is not None}
    )

    token_cols: dict[tuple[int, float], np.ndarray] = {}
    agg: dict[tuple[str, float], np.ndarray] = {}
    tid_index = {t: i for i, t in enumerate(token_ids)}
    key_index = {k: i for i, k in enumerate(numeric_keys)}
    presence = {b: np.zeros((n, len(token_ids)), dtype=bool) for b in bucket_hours}
    aggregates = {b: np.full((n, len(numeric_keys)), -np.inf) for b in bucket_hours}
    for row, p in enumerate(prefixes):
        for o in p.occurrences:
            delta_h = (p.prediction_time - o.time) / HOUR_MS
            for b in bucket_hours:
                if delta_h <= b:
                    presence[b][row, tid_index[o.token_id]] = True
                    if o.raw_numeric_value is not None:
                        j = key_index[o.attribute_name]
                        if o.raw_numeric_value > aggregates[b][row, j]:
                            aggregates[b][row, j] = o.raw_numeric_value

    candidates: list[StumpPredicate] = []
    columns: list[np.ndarray] = []
    for t in token_ids:
        for b in bucket_hours:
            col = presence[b][:, tid_index[t]]
            support = int(col.sum())
            if min_support <= support <= n - 1:
                candidates.append(StumpPredicate(kind="token", bucket_hours=b, token_id=t))
                columns.append(col)
    probs = np.arange(1, 10) / 10.0
    for key in numeric_keys:
        for b in bucket_hours:
            vals = aggregates[b][:, key_index[key]]
            observed = vals[np.isfinite(vals)]
            if observed.size == 0:
                continue
            for theta in np.unique(np.quantile(observed, probs, method="linear")):
                col = vals >= theta
                support = int(col.sum())
                if min_support <= support <= n - 1:
                    candidates.append(
                        StumpPredicate(kind="numeric", bucket_hours=b, key=key, threshold=float(theta))
                    )
                    columns.append(col)
    matrix = np.column_stack(columns) if columns else np.zeros((n, 0), dtype=bool)
    return candidates, matrix


def _logistic_loss(F: np.ndarray, y: np.ndarray) -> float:
    # log(1 + exp(-sign * F)) with sign = +1 for positives, -1 for negatives
    return float(np.sum(np.logaddexp(0.0, np.where(y > 0.5, -F, F))))


def _newton_alphas(F: np.ndarray, y: np.ndarray, B: np.ndarray, steps: int = 3) -> np.ndarray:
    """Vectorized per-candidate Newton iterations for the covered-set step
    weight, started at zero."""
    Bf = B.astype(float)
    alphas = np.zeros(B.shape[1])
    for _ in range(steps):
        Z = F[:, None] + alphas[None, :]
        P = 1.0 / (1.0 + np.exp(-np.clip(Z, -60, 60)))
        G = ((P - y[:, None]) * Bf).sum(axis=0)
        H = (P * (1.0 - P) * Bf).sum(axis=0)
        alphas -= G / np.maximum(H, 1e-12)
        np.clip(alphas, -10.0, 10.0, out=alphas)
    return alphas


def _exact_deltas(F: np.ndarray, y: np.ndarray, B: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """Loss change of adding alpha_c on candidate c's covered set."""
    sign = np.where(y > 0.5, -1.0, 1.0)
    base = np.logaddexp(0.0, sign * F)
    shifted = np.logaddexp(0.0, sign[:, None] * (F[:, None] + alphas[None, :]))
    return ((shifted - base[:, None]) * B).sum(axis=0)


def _line_search(F_cov: np.ndarray, y_cov: np.ndarray, alpha0: float) -> float:
    """Scalar Newton refinement to convergence on the chosen candidate."""
    alpha = alpha0
    for _ in range(30):
        z = np.clip(F_cov + alpha, -60, 60)
        p = 1.0 / (1.0 + np.exp(-z))
        g = float((p - y_cov).sum())
        h = float((p * (1 - p)).sum())
        step = g / max(h, 1e-12)
        alpha -= step
        alpha = float(np.clip(alpha, -10.0, 10.0))
        if abs(step) < 1e-10:
            break
    return alpha


def train_stumps(
    prefixes: list[TimelinePrefix],
    labels: np.ndarray,
    hp: StumpHyperparams | None = None,
) -> StumpEnsemble:
    hp = hp or StumpHyperparams()
    if hp.rounds < 1:
        raise ValueError("rounds must be >= 1")
    y = np.asarray(labels, dtype=float)
    if y.min() == y.max():
        raise ValueError("degenerate labels")
    n = len(prefixes)
    candidates, B = enumerate_candidates(prefixes, hp.bucket_hours, hp.min_support)
    rate = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    intercept = math.log(rate / (1 - rate))
    F = np.full(n, intercept)
    ensemble = StumpEnsemble(stumps=[], intercept=intercept, bucket_hours=hp.bucket_hours)
    ensemble.train_losses.append(_logistic_loss(F, y) / n)
    if B.shape[1] == 0:
        return ensemble
    for _round in range(hp.rounds):
        alphas = _newton_alphas(F, y, B)
        deltas = _exact_deltas(F, y, B, alphas)
        best = float(deltas.min())
        chosen = int(np.flatnonzero(deltas <= best + 1e-12)[0])
        covered = B[:, chosen]
        alpha = _line_search(F[covered], y[covered], float(alphas[chosen]))
        loss_before = _logistic_loss(F[covered], y[covered])
        loss_after = _logistic_loss(F[covered] + alpha, y[covered])
        if loss_after > loss_before:
            alpha = 0.0
        F[covered] += alpha
        ensemble.stumps.append(Stump(predicate=candidates[chosen], alpha=alpha))
        ensemble.train_losses.append(_logistic_loss(F, y) / n)
    return ensemble
