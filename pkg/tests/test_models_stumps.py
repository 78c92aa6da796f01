import math

import numpy as np
import pytest

from ehrseq.models import EnsembleModel, ensemble_predict, load_model, predict, save_model
from ehrseq.models.gradcheck import gradient_check
from ehrseq.models.stumps import (
    StumpHyperparams,
    StumpPredicate,
    enumerate_candidates,
    evaluate_predicate,
    train_stumps,
)
from ehrseq.timeline import TimelinePrefix, TokenOccurrence
from ehrseq.timeunits import HOUR_MS

from oracles import exhaustive_stump_scan


def prefix_at_hours(token_hours, numeric=None, cutoff=10**10):
    occs = [TokenOccurrence(t, int(cutoff - h * HOUR_MS), "Note", "text") for t, h in token_hours]
    for key, value, h in numeric or []:
        occs.append(TokenOccurrence(0, int(cutoff - h * HOUR_MS), "Observation", key, float(value)))
    occs.sort(key=lambda o: o.time)
    return TimelinePrefix("p", occs, cutoff)


class TestPredicates:
    def test_token_window(self):
        prefix = prefix_at_hours([(5, 25.0)])
        assert not evaluate_predicate(StumpPredicate("token", 24.0, token_id=5), prefix)
        assert evaluate_predicate(StumpPredicate("token", 168.0, token_id=5), prefix)

    def test_numeric_max_aggregate(self):
        prefix = prefix_at_hours([], numeric=[("lactate", 2.0, 3.0), ("lactate", 4.5, 20.0)])
        # max within 24 h is 4.5 even though the recent value is lower
        assert evaluate_predicate(StumpPredicate("numeric", 24.0, key="lactate", threshold=4.0), prefix)
        assert not evaluate_predicate(StumpPredicate("numeric", 6.0, key="lactate", threshold=4.0), prefix)

    def test_missing_measurement_is_false(self):
        prefix = prefix_at_hours([(3, 1.0)])
        assert not evaluate_predicate(StumpPredicate("numeric", math.inf, key="sodium", threshold=-99.0), prefix)


class TestTraining:
    def _planted(self, n=80, seed=0):
        rng = np.random.default_rng(seed)
        prefixes, labels = [], []
        for i in range(n):
            y = i % 2
            token_hours = [(int(t), float(h)) for t, h in zip(rng.integers(2, 10, size=4), rng.uniform(0, 30, size=4))]
            if y:
                token_hours.append((15, 2.0))
            prefixes.append(prefix_at_hours(token_hours))
            labels.append(y)
        return prefixes, np.array(labels, dtype=float)

    def test_perfect_token_chosen_first_round(self):
        prefixes, labels = self._planted()
        ens = train_stumps(prefixes, labels, StumpHyperparams(rounds=3))
        first = ens.stumps[0].predicate
        assert first.kind == "token" and first.token_id == 15
        assert ens.train_losses[1] < ens.train_losses[0]

    def test_loss_non_increasing(self):
        prefixes, labels = self._planted(n=120, seed=1)
        ens = train_stumps(prefixes, labels, StumpHyperparams(rounds=15))
        assert all(a >= b - 1e-9 for a, b in zip(ens.train_losses, ens.train_losses[1:]))

    def test_independent_labels_stay_near_intercept(self):
        # with no real signal, step weights stay at chance-level magnitude
        rng = np.random.default_rng(2)
        n = 1000
        prefixes = [
            prefix_at_hours([(int(t), float(h)) for t, h in zip(rng.integers(2, 10, size=5), rng.uniform(0, 30, size=5))])
            for _ in range(n)
        ]
        labels = (rng.random(n) < 0.4).astype(float)
        ens = train_stumps(prefixes, labels, StumpHyperparams(rounds=10))
        scores = np.array([ens.decision_value(p) for p in prefixes])
        assert np.abs(scores - ens.intercept).max() < 1.0
        assert max(abs(s.alpha) for s in ens.stumps) < 0.3

    def test_round_one_matches_exhaustive_oracle(self):
        # imperfect planted token so the optimal step weight is finite
        rng = np.random.default_rng(3)
        prefixes, labels = [], []
        for i in range(50):
            y = i % 2
            token_hours = [(int(t), float(h)) for t, h in zip(rng.integers(2, 10, size=4), rng.uniform(0, 30, size=4))]
            if y or rng.random() < 0.2:
                token_hours.append((15, 2.0))
            prefixes.append(prefix_at_hours(token_hours))
            labels.append(y)
        labels = np.array(labels, dtype=float)
        hp = StumpHyperparams(rounds=1)
        candidates, matrix = enumerate_candidates(prefixes, hp.bucket_hours, hp.min_support)
        F0 = math.log(labels.mean() / (1 - labels.mean()))
        oracle_idx, oracle_alpha, _ = exhaustive_stump_scan(
            np.full(len(prefixes), F0), labels, [matrix[:, j] for j in range(matrix.shape[1])]
        )
        ens = train_stumps(prefixes, labels, hp)
        assert ens.stumps[0].predicate == candidates[oracle_idx]
        assert ens.stumps[0].alpha == pytest.approx(oracle_alpha, abs=1e-2)

    def test_rounds_below_one_rejected(self):
        with pytest.raises(ValueError):
            train_stumps([prefix_at_hours([(2, 1.0)])], np.array([0.0, 1.0]), StumpHyperparams(rounds=0))

    def test_degenerate_labels_refused(self):
        prefixes, _ = self._planted(10)
        with pytest.raises(ValueError, match="degenerate"):
            train_stumps(prefixes, np.ones(10), StumpHyperparams(rounds=1))

    def test_not_differentiable(self):
        prefixes, labels = self._planted(20)
        ens = train_stumps(prefixes, labels, StumpHyperparams(rounds=1))
        with pytest.raises(TypeError, match="unsupported"):
            gradient_check(ens, None)

    def test_deterministic(self):
        prefixes, labels = self._planted(60, seed=4)
        hp = StumpHyperparams(rounds=5)
        a = train_stumps(prefixes, labels, hp)
        b = train_stumps(prefixes, labels, hp)
        assert [(s.predicate, s.alpha) for s in a.stumps] == [(s.predicate, s.alpha) for s in b.stumps]

    def test_numeric_thresholds_learned(self):
        rng = np.random.default_rng(5)
        prefixes, labels = [], []
        for i in range(150):
            y = i % 2
            value = rng.normal(4.0 if y else 1.5, 0.4)
            prefixes.append(prefix_at_hours([(2, 1.0)], numeric=[("lactate", value, 2.0)]))
            labels.append(y)
        ens = train_stumps(prefixes, np.array(labels, float), StumpHyperparams(rounds=5))
        kinds = {s.predicate.kind for s in ens.stumps if abs(s.alpha) > 0.1}
        assert "numeric" in kinds


class TestEnsemble:
    def test_mean(self):
        assert ensemble_predict([0.2, 0.4, 0.6]) == pytest.approx(0.4)

    def test_identity(self):
        assert ensemble_predict([0.73]) == pytest.approx(0.73)

    def test_permutation_symmetry(self):
        assert ensemble_predict([0.1, 0.5, 0.9]) == ensemble_predict([0.9, 0.1, 0.5])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ensemble_predict([])
        with pytest.raises(ValueError):
            EnsembleModel(members=[])

    def test_bounds(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            members = rng.random(int(rng.integers(1, 6)))
            e = ensemble_predict(list(members))
            assert members.min() <= e <= members.max()

    def test_vector_members(self):
        out = ensemble_predict([np.array([0.2, 0.8]), np.array([0.4, 0.6])])
        assert np.allclose(out, [0.3, 0.7])

    def test_ensemble_model_predict(self, sig_models, sig_pipeline):
        ens = EnsembleModel(members=[sig_models.tann, sig_models.stumps])
        ex = sig_models.test[0]
        got = predict(ens, ex.prefix, ex.encounter, sig_pipeline.vocab)
        a = predict(sig_models.tann, ex.prefix)
        b = predict(sig_models.stumps, ex.prefix)
        assert got == pytest.approx((a + b) / 2)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        prefixes, labels = [], []
        for i in range(40):
            y = i % 2
            hours = [(int(t), float(h)) for t, h in zip(rng.integers(2, 8, size=3), rng.uniform(0, 20, size=3))]
            if y:
                hours.append((9, 1.0))
            prefixes.append(prefix_at_hours(hours, numeric=[("wbc", rng.normal(9, 3), 2.0)]))
            labels.append(y)
        ens = train_stumps(prefixes, np.array(labels, float), StumpHyperparams(rounds=6))
        path = tmp_path / "stumps.npz"
        save_model(ens, path)
        loaded = load_model(path)
        for p in prefixes[:5]:
            assert loaded.predict(p) == ens.predict(p)
