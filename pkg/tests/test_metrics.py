import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ehrseq.metrics import (
    DegenerateLabelsError,
    MetricsReport,
    ScoredSet,
    auroc,
    bootstrap_ci,
    bootstrap_distribution,
    calibration_curve,
    choose_threshold,
    earliness_curve,
    micro_f1,
    nne_at_sensitivity,
    weighted_auroc,
)

from oracles import pairwise_auroc, sweep_nne


def scored(scores, labels):
    return ScoredSet(np.asarray(scores, float), np.asarray(labels, bool))


class TestAuroc:
    def test_worked_example(self):
        s = scored([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        assert auroc(s) == pytest.approx(pairwise_auroc(s.scores, s.labels))
        assert auroc(s) == pytest.approx(0.75)

    def test_perfect_separation(self):
        assert auroc(scored([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])) == 1.0

    def test_all_ties(self):
        assert auroc(scored([0.5] * 6, [0, 1, 0, 1, 0, 1])) == 0.5

    def test_degenerate(self):
        with pytest.raises(DegenerateLabelsError):
            auroc(scored([0.1, 0.2], [1, 1]))

    def test_matches_pairwise_oracle_randomized(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(2, 50))
            labels = rng.random(n) < 0.5
            if labels.all() or not labels.any():
                labels[0] = ~labels[0]
            scores = np.round(rng.random(n), 2)  # rounding forces ties
            s = scored(scores, labels)
            assert abs(auroc(s) - pairwise_auroc(scores, labels)) < 1e-12

    def test_label_complement(self):
        rng = np.random.default_rng(1)
        scores = rng.random(40)
        labels = rng.random(40) < 0.4
        labels[0], labels[1] = True, False
        a = auroc(scored(scores, labels))
        b = auroc(scored(scores, ~labels))
        assert a + b == pytest.approx(1.0)

    @given(st.integers(2, 30), st.integers(0, 10_000))
    def test_rank_invariance(self, n, seed):
        rng = np.random.default_rng(seed)
        scores = rng.random(n)
        labels = rng.random(n) < 0.5
        if labels.all() or not labels.any():
            labels[0] = ~labels[0]
        base = scored(scores, labels)
        squashed = scored(1 / (1 + np.exp(-(3 * scores - 1))), labels)  # strictly monotone
        assert auroc(base) == pytest.approx(auroc(squashed))
        assert nne_at_sensitivity(base) == pytest.approx(nne_at_sensitivity(squashed))


class TestBootstrap:
    def test_single_resample_collapses(self):
        s = scored([0.9, 0.8, 0.2, 0.3], [1, 1, 0, 0])
        low, high = bootstrap_ci(s, auroc, n_resamples=1, seed=0)
        assert low == high

    def test_seed_determinism(self):
        s = scored(np.linspace(0, 1, 30), np.arange(30) % 2 == 0)
        assert bootstrap_ci(s, auroc, seed=5) == bootstrap_ci(s, auroc, seed=5)

    def test_default_protocol_exactly_1000_percentile(self):
        s = scored(np.linspace(0, 1, 40), np.arange(40) % 3 == 0)
        result = bootstrap_distribution(s, auroc, seed=2)
        assert result.values.size == 1000
        lo, hi = np.quantile(result.values, [0.025, 0.975], method="linear")
        assert (result.low, result.high) == (pytest.approx(lo), pytest.approx(hi))
        assert result.low <= result.high

    def test_degenerate_resamples_redrawn_and_counted(self):
        # one positive in eight: all-negative resamples are common and must be redrawn
        s = scored([0.9, 0.1, 0.2, 0.3, 0.1, 0.2, 0.3, 0.4], [1, 0, 0, 0, 0, 0, 0, 0])
        result = bootstrap_distribution(s, auroc, n_resamples=200, seed=3)
        assert result.n_redrawn > 0
        assert np.isfinite(result.values).all()

    def test_degenerate_base_set(self):
        with pytest.raises(DegenerateLabelsError):
            bootstrap_ci(scored([], []), auroc)

    def test_coverage_on_synthetic_sets(self):
        # the full-set AUROC should fall inside the interval in >= 90/100 trials
        hits = 0
        for trial in range(100):
            rng = np.random.default_rng(1000 + trial)
            logits = rng.normal(0, 1.5, size=200)
            labels = rng.random(200) < 1 / (1 + np.exp(-logits))
            if labels.all() or not labels.any():
                labels[0] = ~labels[0]
            s = scored(1 / (1 + np.exp(-logits)), labels)
            point = auroc(s)
            low, high = bootstrap_ci(s, auroc, n_resamples=200, seed=trial)
            hits += low <= point <= high
        assert hits >= 90


class TestCalibration:
    def test_constant_predictor_single_bin(self):
        labels = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
        bins = calibration_curve(scored([0.3] * 10, labels))
        assert len(bins) == 1
        assert bins[0].mean_pred == pytest.approx(0.3)
        assert bins[0].empirical_rate == pytest.approx(0.3)
        assert bins[0].count == 10

    def test_empty_input(self):
        assert calibration_curve(scored([], [])) == []

    def test_counts_sum_to_n(self):
        rng = np.random.default_rng(9)
        s = scored(rng.random(500), rng.random(500) < 0.5)
        bins = calibration_curve(s)
        assert sum(b.count for b in bins) == 500

    def test_well_calibrated_scores(self):
        rng = np.random.default_rng(11)
        p = rng.random(20000)
        y = rng.random(20000) < p
        bins = calibration_curve(scored(p, y))
        for b in bins:
            assert abs(b.mean_pred - b.empirical_rate) < 0.05

    def test_score_one_in_top_bin(self):
        bins = calibration_curve(scored([1.0, 0.0], [1, 0]))
        assert sum(b.count for b in bins) == 2


class TestNne:
    def test_worked_example(self):
        s = scored([0.9, 0.8, 0.6, 0.7, 0.5], [1, 1, 1, 0, 0])
        assert nne_at_sensitivity(s) == pytest.approx(4 / 3)
        assert nne_at_sensitivity(s) == pytest.approx(sweep_nne(s.scores, s.labels))

    def test_perfect_separator(self):
        s = scored([0.9, 0.8, 0.85, 0.95, 0.7, 0.1, 0.2, 0.3], [1, 1, 1, 1, 1, 0, 0, 0])
        assert nne_at_sensitivity(s) == 1.0

    def test_random_scores_approach_inverse_prevalence(self):
        rng = np.random.default_rng(3)
        n, prev = 20000, 0.25
        labels = rng.random(n) < prev
        scores = rng.random(n)
        got = nne_at_sensitivity(scored(scores, labels))
        assert abs(got - 1 / prev) < 0.35

    def test_matches_sweep_oracle_randomized(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(3, 50))
            labels = rng.random(n) < 0.4
            if labels.all() or not labels.any():
                labels[0] = ~labels[0]
            scores = np.round(rng.random(n), 2)
            s = scored(scores, labels)
            assert nne_at_sensitivity(s) == pytest.approx(sweep_nne(scores, labels))

    def test_degenerate(self):
        with pytest.raises(DegenerateLabelsError):
            nne_at_sensitivity(scored([0.5, 0.6], [0, 0]))


class TestMicroF1:
    def test_perfect(self):
        scores = np.array([[0.9, 0.1], [0.2, 0.8]])
        labels = np.array([[True, False], [False, True]])
        assert micro_f1(scores, labels, 0.5) == 1.0

    def test_predict_nothing_is_zero(self):
        scores = np.array([[0.1, 0.1], [0.2, 0.2]])
        labels = np.array([[True, False], [False, True]])
        assert micro_f1(scores, labels, 0.5) == 0.0

    def test_confusion_matrix_hand_count(self):
        # TP=2, FP=1, FN=1 -> F1 = 2/3
        scores = np.array([[0.9, 0.9], [0.9, 0.1]])
        labels = np.array([[True, False], [True, True]])
        assert micro_f1(scores, labels, 0.5) == pytest.approx(2 / 3)

    def test_no_positives_error(self):
        with pytest.raises(DegenerateLabelsError):
            micro_f1(np.array([[0.5]]), np.array([[False]]), 0.5)


class TestChooseThreshold:
    def test_optimal_by_construction(self):
        # perfect F1 exactly on (0.49, 0.55]; the lowest such grid point is 0.50
        scores = np.array([[0.9, 0.55, 0.49, 0.1]])
        labels = np.array([[True, True, False, False]])
        assert choose_threshold(scores, labels) == pytest.approx(0.5)

    def test_all_positive_goes_to_grid_minimum(self):
        scores = np.array([[0.4, 0.9]])
        labels = np.array([[True, True]])
        assert choose_threshold(scores, labels) == 0.0

    def test_tie_breaks_low(self):
        scores = np.array([[0.35, 0.8]])
        labels = np.array([[False, True]])
        # any threshold in (0.35, 0.8] is perfect; the grid tie-break picks 0.36
        t = choose_threshold(scores, labels)
        assert t == pytest.approx(0.36)

    def test_exhaustive_rescan_confirms_argmax(self):
        rng = np.random.default_rng(8)
        scores = rng.random((30, 4))
        labels = rng.random((30, 4)) < 0.3
        labels[0, 0] = True
        t = choose_threshold(scores, labels)
        best = micro_f1(scores, labels, t)
        for g in np.round(np.arange(0, 1.001, 0.01), 2):
            assert best >= micro_f1(scores, labels, g) - 1e-12


class TestWeightedAuroc:
    def test_frequency_weighted_fixture(self):
        per_code = {
            "a": scored([0.9, 0.8, 0.7, 0.1, 0.2], [1, 1, 1, 0, 0]),  # freq 3, auroc 1.0
            "b": scored([0.5, 0.5], [1, 0]),  # freq 1, auroc 0.5
        }
        value, excluded = weighted_auroc(per_code)
        assert value == pytest.approx(0.875)
        assert excluded == []

    def test_single_code_identity(self):
        s = scored([0.9, 0.1, 0.6], [1, 0, 0])
        value, _ = weighted_auroc({"only": s})
        assert value == pytest.approx(auroc(s))

    def test_equal_aurocs_convexity(self):
        s1 = scored([0.9, 0.1], [1, 0])
        s2 = scored([0.8, 0.7, 0.2, 0.1], [1, 1, 0, 0])
        value, _ = weighted_auroc({"a": s1, "b": s2})
        assert value == pytest.approx(1.0)

    def test_degenerate_codes_excluded_and_reported(self):
        per_code = {
            "good": scored([0.9, 0.1], [1, 0]),
            "allpos": scored([0.9, 0.8], [1, 1]),
        }
        value, excluded = weighted_auroc(per_code)
        assert excluded == ["allpos"]
        assert value == 1.0

    def test_no_valid_codes(self):
        with pytest.raises(DegenerateLabelsError):
            weighted_auroc({"bad": scored([0.5], [1])})


class TestEnsembleAndReport:
    def test_report_rejects_inverted_ci(self):
        with pytest.raises(ValueError):
            MetricsReport("mortality", "admit", 0.9, 0.95, 0.91, [], 2.0, 10, 0)

    def test_report_json_stable(self):
        r = MetricsReport("mortality", "admit", 0.9, 0.85, 0.95, [], 2.0, 10, 7)
        assert r.to_json() == r.to_json()
        assert '"task": "mortality"' in r.to_json()


class TestEarliness:
    def test_constant_score_flat_at_half(self):
        rng = np.random.default_rng(2)
        labels = rng.random(60) < 0.4
        labels[0] = True
        labels[1] = False
        by_tag = {tag: scored([0.5] * 60, labels) for tag in ("minus24h", "admit", "plus24h")}
        rows = earliness_curve(by_tag, "mortality", seed=0, n_resamples=50, tag_order=("minus24h", "admit", "plus24h"))
        assert [r["time_tag"] for r in rows] == ["minus24h", "admit", "plus24h"]
        assert all(r["auroc"] == 0.5 for r in rows)
