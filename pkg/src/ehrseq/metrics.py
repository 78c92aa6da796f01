"""Evaluation protocol: discrimination, calibration, alert burden, and the
multi-label diagnoses metrics, with percentile bootstrap intervals.

AUROC is rank-based with half credit for ties, so it matches a pairwise
positive-vs-negative comparison exactly. The work-up-to-detection ratio
(number needed to evaluate) is reported at 80% sensitivity. Hosmer-Lemeshow
is deliberately not computed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

DEFAULT_BOOTSTRAP_RESAMPLES = 1000
DEFAULT_SENSITIVITY = 0.80
THRESHOLD_GRID_STEP = 0.01


class DegenerateLabelsError(ValueError):
    """Raised when a metric needs both classes but got only one."""


@dataclass
class ScoredSet:
    """Parallel scores/labels/ids for one task at one prediction timepoint."""

    scores: np.ndarray
    labels: np.ndarray
    encounter_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels must have equal length")
        if self.encounter_ids and len(self.encounter_ids) != self.scores.size:
            raise ValueError("encounter_ids length mismatch")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    def __len__(self) -> int:
        return int(self.scores.size)

    def take(self, idx: np.ndarray) -> "ScoredSet":
        ids = [self.encounter_ids[i] for i in idx] if self.encounter_ids else []
        return ScoredSet(self.scores[idx], self.labels[idx], ids)


class CalibrationBin(NamedTuple):
    mean_pred: float
    empirical_rate: float
    count: int


def auroc(s: ScoredSet) -> float:
    """Probability a random positive outscores a random negative, ties 0.5.

    Computed from average ranks (Mann-Whitney U), which is exactly the
    pairwise definition.
    """
    pos = int(s.labels.sum())
    neg = len(s) - pos
    if pos == 0 or neg == 0:
        raise DegenerateLabelsError("degenerate labels")
    order = np.argsort(s.scores, kind="mergesort")
    ranks = np.empty(len(s), dtype=float)
    sorted_scores = s.scores[order]
    # average rank within each tie group, 1-based
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[s.labels].sum()
    u = rank_sum - pos * (pos + 1) / 2.0
    return float(u / (pos * neg))


class BootstrapResult(NamedTuple):
    low: float
    high: float
    values: np.ndarray
    n_redrawn: int


def bootstrap_distribution(
    s: ScoredSet,
    metric: Callable[[ScoredSet], float],
    n_resamples: int = DEFAULT_BOOTSTRAP_RESAMPLES,
    seed: int = 0,
    max_redraws_per_resample: int = 100,
) -> BootstrapResult:
    """Encounter-level resampling with replacement; percentile 95% interval.

    Each resample uses its own generator seeded by (seed, index), so results
    are identical whether resamples run serially or in parallel. Resamples on
    which the metric is degenerate are redrawn, counted, and capped.
    """
    n = len(s)
    if n == 0:
        raise DegenerateLabelsError("degenerate labels")
    values = np.empty(n_resamples, dtype=float)
    n_redrawn = 0
    for i in range(n_resamples):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        for attempt in range(max_redraws_per_resample + 1):
            idx = rng.integers(0, n, size=n)
            try:
                values[i] = metric(s.take(idx))
                break
            except DegenerateLabelsError:
                n_redrawn += 1
        else:
            raise DegenerateLabelsError(
                f"resample {i} stayed degenerate after {max_redraws_per_resample} redraws"
            )
    low, high = np.quantile(values, [0.025, 0.975], method="linear")
    return BootstrapResult(float(low), float(high), values, n_redrawn)


def bootstrap_ci(
    s: ScoredSet,
    metric: Callable[[ScoredSet], float] = auroc,
    n_resamples: int = DEFAULT_BOOTSTRAP_RESAMPLES,
    seed: int = 0,
) -> tuple[float, float]:
    result = bootstrap_distribution(s, metric, n_resamples=n_resamples, seed=seed)
    return result.low, result.high


def calibration_curve(s: ScoredSet, n_bins: int = 10) -> list[CalibrationBin]:
    """Equal-width bins on [0, 1]; empty bins are omitted."""
    if len(s) == 0:
        return []
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    which = np.clip(np.digitize(s.scores, edges[1:-1], right=False), 0, n_bins - 1)
    bins = []
    for b in range(n_bins):
        mask = which == b
        count = int(mask.sum())
        if count == 0:
            continue
        bins.append(
            CalibrationBin(
                mean_pred=float(s.scores[mask].mean()),
                empirical_rate=float(s.labels[mask].mean()),
                count=count,
            )
        )
    return bins


def nne_at_sensitivity(s: ScoredSet, target: float = DEFAULT_SENSITIVITY) -> float:
    """Work-up-to-detection ratio at the highest threshold reaching the
    target sensitivity: alerts fired per true positive."""
    pos = int(s.labels.sum())
    neg = len(s) - pos
    if pos == 0 or neg == 0:
        raise DegenerateLabelsError("degenerate labels")
    best = None
    for threshold in np.unique(s.scores)[::-1]:
        flagged = s.scores >= threshold
        tp = int((flagged & s.labels).sum())
        if tp / pos >= target:
            best = (int(flagged.sum()), tp)
            break
    if best is None:
        # every score flagged still misses the target only if target > 1
        raise ValueError(f"sensitivity target {target} unreachable")
    flagged_n, tp = best
    return flagged_n / tp


def micro_f1(
    scores: np.ndarray,
    labels: np.ndarray,
    threshold: float,
) -> float:
    """Pooled-decision F1 over all (example, class) cells at one threshold."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal shape")
    if not labels.any():
        raise DegenerateLabelsError("no positive labels")
    predicted = scores >= threshold
    tp = int((predicted & labels).sum())
    fp = int((predicted & ~labels).sum())
    fn = int((~predicted & labels).sum())
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def choose_threshold(scores: np.ndarray, labels: np.ndarray) -> float:
    """Single global threshold maximizing validation micro-F1 over a 0.01
    grid; ties break toward the lower threshold."""
    grid = np.round(np.arange(0.0, 1.0 + THRESHOLD_GRID_STEP / 2, THRESHOLD_GRID_STEP), 2)
    best_t, best_f1 = grid[0], -1.0
    for t in grid:
        f1 = micro_f1(scores, labels, t)
        if f1 > best_f1:
            best_t, best_f1 = t, f1
    return float(best_t)


def weighted_auroc(per_code: dict[str, ScoredSet]) -> tuple[float, list[str]]:
    """Positive-frequency-weighted mean of per-class AUROCs.

    Codes lacking both classes are excluded and returned for reporting.
    """
    total_weight = 0.0
    acc = 0.0
    excluded = []
    for code in sorted(per_code):
        s = per_code[code]
        try:
            a = auroc(s)
        except DegenerateLabelsError:
            excluded.append(code)
            continue
        freq = float(s.labels.sum())
        acc += freq * a
        total_weight += freq
    if total_weight == 0:
        raise DegenerateLabelsError("no code with both classes")
    return acc / total_weight, excluded


@dataclass
class MetricsReport:
    """Results for one task at one prediction timepoint."""

    task: str
    time_tag: str
    auroc: float
    ci_low: float | None
    ci_high: float | None
    calibration: list[CalibrationBin]
    nne_at_80: float | None
    n: int
    seed: int

    def __post_init__(self):
        if self.ci_low is not None and self.ci_high is not None and self.ci_low > self.ci_high:
            raise ValueError("ci_low must not exceed ci_high")

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "time_tag": self.time_tag,
            "auroc": self.auroc,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "calibration": [
                {"mean_pred": b.mean_pred, "empirical_rate": b.empirical_rate, "count": b.count}
                for b in self.calibration
            ],
            "nne_at_80": self.nne_at_80,
            "n": self.n,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def evaluate_scored_set(
    s: ScoredSet,
    task: str,
    time_tag: str,
    seed: int,
    n_resamples: int = DEFAULT_BOOTSTRAP_RESAMPLES,
    with_ci: bool = True,
) -> MetricsReport:
    ci_low = ci_high = None
    if with_ci:
        ci_low, ci_high = bootstrap_ci(s, auroc, n_resamples=n_resamples, seed=seed)
    return MetricsReport(
        task=task,
        time_tag=time_tag,
        auroc=auroc(s),
        ci_low=ci_low,
        ci_high=ci_high,
        calibration=calibration_curve(s),
        nne_at_80=nne_at_sensitivity(s),
        n=len(s),
        seed=seed,
    )


def earliness_curve(
    scored_by_tag: dict[str, ScoredSet],
    task: str,
    seed: int,
    n_resamples: int = DEFAULT_BOOTSTRAP_RESAMPLES,
    tag_order: Sequence[str] | None = None,
) -> list[dict]:
    """Discrimination as a function of prediction time: one plot-ready row per
    grid point, in grid order."""
    tags = list(tag_order) if tag_order is not None else list(scored_by_tag)
    rows = []
    for tag in tags:
        s = scored_by_tag[tag]
        low, high = bootstrap_ci(s, auroc, n_resamples=n_resamples, seed=seed)
        rows.append(
            {
                "task": task,
                "time_tag": tag,
                "auroc": auroc(s),
                "ci_low": low,
                "ci_high": high,
                "n": len(s),
            }
        )
    return rows
