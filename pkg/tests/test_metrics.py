"""Metric tests including brute-force oracle equivalence."""

import numpy as np
import pytest

from mmtp import metrics as M
from mmtp.scene import PredictionSet


def make_pred(endpoint_dists, t_f=30, probs=None):
    """Straight-line trajectories whose endpoints sit at given distances."""
    k = len(endpoint_dists)
    trajs = np.zeros((k, t_f, 2))
    for j, d in enumerate(endpoint_dists):
        trajs[j, :, 0] = np.linspace(d / t_f, d, t_f)
    probs = np.full(k, 1.0 / k) if probs is None else np.asarray(probs, dtype=float)
    return PredictionSet(trajs, probs)


def brute_force_metrics(pred, gt):
    """Definition-level re-implementation used as the oracle."""
    fdes = [float(np.linalg.norm(pred.trajectories[j][-1] - gt[-1]))
            for j in range(len(pred.probs))]
    best = fdes.index(min(fdes))
    ade = float(np.mean([np.linalg.norm(pred.trajectories[best][t] - gt[t])
                         for t in range(gt.shape[0])]))
    brier = fdes[best] + (1.0 - float(pred.probs[best])) ** 2
    return ade, fdes[best], best, brier


class TestMinFDE:
    def test_exact_hit(self):
        gt = np.zeros((30, 2))
        value, _ = M.min_fde(make_pred([0.0, 3.0]), gt)
        assert value == 0.0

    def test_linear_scan_oracle(self):
        gt = np.zeros((30, 2))
        value, idx = M.min_fde(make_pred([2.5, 0.8, 3.1, 4.0, 5.0, 6.0]), gt)
        assert idx == 1
        assert abs(value - 0.8) < 1e-12

    def test_single_mode(self):
        gt = np.zeros((30, 2))
        value, idx = M.min_fde(make_pred([1.7]), gt)
        assert (value, idx) == (pytest.approx(1.7), 0)


class TestMinADE:
    def test_exact_match(self):
        gt = np.zeros((30, 2))
        assert M.min_ade(make_pred([0.0]), gt) == 0.0

    def test_selection_is_by_endpoint_not_by_mean(self):
        # A: endpoint error 0.5 but mean error 2.0; B: endpoint 1.0, mean 0.1
        t_f = 30
        gt = np.zeros((t_f, 2))
        a = np.full((t_f, 2), 2.0 / np.sqrt(2))
        a[-1] = [0.5, 0.0]
        b = np.full((t_f, 2), 0.1 / np.sqrt(2))
        b[-1] = [1.0, 0.0]
        pred = PredictionSet(np.stack([a, b]), np.array([0.5, 0.5]))
        mean_a = float(np.mean(np.linalg.norm(a - gt, axis=-1)))
        assert M.min_ade(pred, gt) == pytest.approx(mean_a)
        assert M.min_ade(pred, gt) > 1.9  # the min-of-ADEs convention would give ~0.13

    def test_constant_offset(self):
        gt = np.zeros((30, 2))
        trajs = np.zeros((1, 30, 2))
        trajs[0, :, 0] = 1.0
        assert M.min_ade(PredictionSet(trajs, np.ones(1)), gt) == pytest.approx(1.0)


class TestBrier:
    def test_certain_best_equals_min_fde(self):
        gt = np.zeros((30, 2))
        pred = make_pred([0.7, 5.0], probs=[1.0, 0.0])
        assert M.brier_min_fde(pred, gt) == pytest.approx(0.7)

    def test_half_probability(self):
        gt = np.zeros((30, 2))
        pred = make_pred([1.0, 5.0], probs=[0.5, 0.5])
        assert M.brier_min_fde(pred, gt) == pytest.approx(1.25)

    def test_vanishing_probability_limit(self):
        gt = np.zeros((30, 2))
        pred = make_pred([1.0, 5.0], probs=[0.0, 1.0])
        assert M.brier_min_fde(pred, gt) == pytest.approx(2.0)


class TestMissRate:
    def test_exact_hit_is_not_a_miss(self):
        gt = np.zeros((30, 2))
        assert M.miss_rate([(make_pred([0.0]), gt)]) == 0.0

    def test_boundary_two_meters_is_within(self):
        gt = np.zeros((30, 2))
        assert M.miss_rate([(make_pred([2.0]), gt)]) == 0.0

    def test_count_oracle(self):
        gt = np.zeros((30, 2))
        pairs = [(make_pred([d]), gt) for d in (1.0, 3.0, 2.5, 0.5)]
        assert M.miss_rate(pairs) == pytest.approx(0.5)


class TestInvariances:
    def random_pair(self, rng, k=6):
        trajs = rng.standard_normal((k, 30, 2)) * 3
        logits = rng.standard_normal(k)
        probs = np.exp(logits) / np.exp(logits).sum()
        gt = rng.standard_normal((30, 2)) * 3
        return PredictionSet(trajs, probs), gt

    def test_permutation_invariance(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            pred, gt = self.random_pair(rng)
            perm = rng.permutation(len(pred.probs))
            shuffled = PredictionSet(pred.trajectories[perm], pred.probs[perm])
            assert M.min_ade(pred, gt) == pytest.approx(M.min_ade(shuffled, gt), abs=1e-12)
            assert M.min_fde(pred, gt)[0] == pytest.approx(M.min_fde(shuffled, gt)[0], abs=1e-12)
            assert M.brier_min_fde(pred, gt) == pytest.approx(M.brier_min_fde(shuffled, gt), abs=1e-12)

    def test_translation_invariance(self):
        rng = np.random.default_rng(9)
        pred, gt = self.random_pair(rng)
        shift = np.array([13.0, -4.0])
        moved = PredictionSet(pred.trajectories + shift, pred.probs)
        assert M.min_ade(moved, gt + shift) == pytest.approx(M.min_ade(pred, gt), abs=1e-9)
        assert M.min_fde(moved, gt + shift)[0] == pytest.approx(M.min_fde(pred, gt)[0], abs=1e-9)

    def test_bounds(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            pred, gt = self.random_pair(rng)
            fde, _ = M.min_fde(pred, gt)
            all_fdes = np.linalg.norm(pred.trajectories[:, -1] - gt[-1], axis=-1)
            assert fde <= all_fdes.min() + 1e-12
            assert fde <= M.brier_min_fde(pred, gt) <= fde + 1.0

    def test_against_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            pred, gt = self.random_pair(rng)
            ade, fde, best, brier = brute_force_metrics(pred, gt)
            assert M.min_ade(pred, gt) == pytest.approx(ade, abs=1e-9)
            got_fde, got_best = M.min_fde(pred, gt)
            assert (got_fde, got_best) == (pytest.approx(fde, abs=1e-9), best)
            assert M.brier_min_fde(pred, gt) == pytest.approx(brier, abs=1e-9)


class TestReport:
    def test_report_formats(self):
        gt = np.zeros((30, 2))
        report = M.evaluate([(make_pred([1.0, 3.0]), gt), (make_pred([2.5]), gt)])
        assert report.n_scenes == 2
        assert "minADE" in report.to_json()
        table = report.to_table()
        assert "minFDE" in table and "miss rate" in table

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            M.evaluate([])
