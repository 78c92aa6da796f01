"""Independent oracle implementations the tests check the library against.

Everything here is deliberately brute force (pairwise scans, exhaustive
sweeps, declarative re-statements of labeling rules) and shares no code with
the implementations under test.
"""

from __future__ import annotations

import math

import numpy as np


def pairwise_auroc(scores, labels) -> float:
    """O(P*N) comparison of every positive against every negative."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    pos = scores[labels]
    neg = scores[~labels]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def sweep_nne(scores, labels, target=0.80) -> float:
    """Exhaustive threshold sweep for the work-up-to-detection ratio."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    best = None
    for t in sorted(set(scores), reverse=True):
        flagged = scores >= t
        tp = int((flagged & labels).sum())
        if tp / n_pos >= target:
            best = flagged.sum() / tp
            break
    return best


def sort_and_index_quantiles(values, probs) -> list[float]:
    """Linear-interpolation quantiles computed directly from sorted values."""
    xs = sorted(values)
    n = len(xs)
    out = []
    for q in probs:
        pos = (n - 1) * q
        lo = math.floor(pos)
        hi = math.ceil(pos)
        frac = pos - lo
        out.append(xs[lo] + frac * (xs[hi] - xs[lo]))
    return out


def declarative_readmission(encounters) -> dict[str, bool]:
    """Re-statement of the readmission rules on (eid, pid, inst, admit,
    discharge, planned, eligible) tuples: for each eligible index in admit
    order, consume the earliest qualifying unconsumed admission within
    [discharge, discharge + 30d]; planned admissions never qualify."""
    window = 30 * 24 * 3600 * 1000
    ordered = sorted(encounters, key=lambda e: e["admit"])
    consumed = set()
    labels = {}
    for idx, e in enumerate(ordered):
        if not e["eligible"]:
            continue
        candidates = [
            c
            for c in ordered[idx + 1 :]
            if c["institution"] == e["institution"]
            and not c["planned"]
            and c["eid"] not in consumed
            and e["discharge"] <= c["admit"] <= e["discharge"] + window
        ]
        if candidates:
            winner = min(candidates, key=lambda c: (c["admit"], c["eid"]))
            consumed.add(winner["eid"])
            labels[e["eid"]] = True
        else:
            labels[e["eid"]] = False
    return labels


def exhaustive_stump_scan(F, y, columns):
    """Per-candidate scalar loss minimization by dense grid plus refinement;
    returns (best_index, best_alpha, best_loss)."""
    F = np.asarray(F, dtype=float)
    y = np.asarray(y, dtype=float)
    sign = np.where(y > 0.5, -1.0, 1.0)

    def total_loss(alpha, col):
        z = F + alpha * col
        return float(np.sum(np.logaddexp(0.0, sign * z)))

    best = None
    for j, col in enumerate(columns):
        colf = col.astype(float)
        grid = np.linspace(-8.0, 8.0, 1601)
        losses = [total_loss(a, colf) for a in grid]
        k = int(np.argmin(losses))
        lo = grid[max(0, k - 1)]
        hi = grid[min(len(grid) - 1, k + 1)]
        fine = np.linspace(lo, hi, 201)
        fine_losses = [total_loss(a, colf) for a in fine]
        kk = int(np.argmin(fine_losses))
        cand = (fine_losses[kk], j, fine[kk])
        if best is None or cand[0] < best[0] - 1e-9:
            best = cand
    return best[1], best[2], best[0]


def spearman(a, b) -> float:
    """Rank correlation via Pearson correlation of average ranks."""

    def ranks(x):
        x = np.asarray(x, dtype=float)
        order = np.argsort(x, kind="mergesort")
        r = np.empty(len(x))
        i = 0
        sx = x[order]
        while i < len(x):
            j = i
            while j + 1 < len(x) and sx[j + 1] == sx[i]:
                j += 1
            r[order[i : j + 1]] = 0.5 * (i + j) + 1.0
            i = j + 1
        return r

    ra, rb = ranks(a), ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if denom == 0:
        return 0.0
    return float(ra @ rb) / denom
