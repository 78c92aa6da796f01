"""Matplotlib figure rendering for the report path.

Figures are written next to the delimited outputs; rendering strips volatile
PNG metadata so reruns stay byte-comparable.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_SAVE_KWARGS = {"dpi": 120, "metadata": {"Software": None}}


def save_calibration_figure(bins, path, title: str = "Calibration") -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=1)
    if bins:
        xs = [b.mean_pred for b in bins]
        ys = [b.empirical_rate for b in bins]
        sizes = [max(20, min(200, b.count)) for b in bins]
        ax.scatter(xs, ys, s=sizes, alpha=0.8)
        ax.plot(xs, ys, linewidth=1)
    ax.set_xlabel("mean predicted probability")
    ax.set_ylabel("empirical event rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_earliness_figure(rows, path, title: str = "Discrimination vs prediction time") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = range(len(rows))
    aurocs = [r["auroc"] for r in rows]
    err_low = [r["auroc"] - r["ci_low"] for r in rows]
    err_high = [r["ci_high"] - r["auroc"] for r in rows]
    ax.errorbar(xs, aurocs, yerr=[err_low, err_high], fmt="o-", capsize=4)
    ax.set_xticks(list(xs))
    ax.set_xticklabels([r["time_tag"] for r in rows])
    ax.set_xlabel("prediction time")
    ax.set_ylabel("AUROC")
    ax.set_ylim(0.4, 1.0)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_attribution_figure(report: dict, path) -> None:
    highlights = report["highlights"]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 5))

    top = highlights[:15][::-1]
    labels = [h["token"][:40] for h in top]
    weights = [h["weight"] for h in top]
    colors = ["firebrick" if w >= 0 else "steelblue" for w in weights]
    ax1.barh(range(len(top)), weights, color=colors)
    ax1.set_yticks(range(len(top)))
    ax1.set_yticklabels(labels, fontsize=8)
    ax1.set_xlabel("attribution weight")
    ax1.set_title("highlighted occurrences")

    summary = report["timeline_summary"]
    buckets = ["<=6h", "<=24h", "<=7d", "<=30d", ">30d"]
    bottoms = [0.0] * len(buckets)
    for rt in sorted(summary):
        heights = [summary[rt].get(b, 0) for b in buckets]
        ax2.bar(buckets, heights, bottom=bottoms, label=rt)
        bottoms = [b + h for b, h in zip(bottoms, heights)]
    ax2.set_ylabel("token count")
    ax2.set_xlabel("recency at prediction")
    ax2.set_title("timeline contents")
    ax2.legend(fontsize=7)

    head = report["header"]
    fig.suptitle(f"{head['task']} at {head['time_tag']}: score {head['model_score']:.3f}")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
