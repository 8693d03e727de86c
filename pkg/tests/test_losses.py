"""Objective function tests against hand-computed values."""

import math

import numpy as np
import pytest

from mmtp import engine as E
from mmtp import losses as L


def traj_tensor(arr):
    return E.Tensor(np.asarray(arr, dtype=np.float64))


class TestWinnerIndex:
    def test_exact_match_wins(self):
        gt = np.zeros((1, 30, 2))
        trajs = np.ones((1, 4, 30, 2))
        trajs[0, 2] = 0.0
        assert L.winner_index(trajs, gt)[0] == 2

    def test_linear_scan_oracle(self):
        dists = [3.0, 1.0, 2.0, 5.0, 4.0, 6.0]
        gt = np.zeros((1, 30, 2))
        trajs = np.zeros((1, 6, 30, 2))
        for j, d in enumerate(dists):
            trajs[0, j, -1, 0] = d
        # oracle: first index of the smallest endpoint distance
        expect = min(range(6), key=lambda j: dists[j])
        assert expect == 1
        assert L.winner_index(trajs, gt)[0] == expect

    def test_tie_breaks_to_lowest_index(self):
        gt = np.zeros((1, 30, 2))
        trajs = np.ones((1, 6, 30, 2))
        assert L.winner_index(trajs, gt)[0] == 0


class TestTrajectoryLoss:
    def test_perfect_prediction_is_zero(self):
        gt = np.random.default_rng(0).standard_normal((2, 30, 2))
        trajs = np.stack([gt, gt + 5.0], axis=1)
        winners = L.winner_index(trajs, gt)
        loss = L.trajectory_loss(traj_tensor(trajs), gt, winners)
        assert loss.item() == 0.0

    def test_quadratic_branch_value(self):
        # per-coordinate error 0.5 -> 0.5 * 0.25 each; 30 steps * 2 coords
        gt = np.zeros((1, 30, 2))
        trajs = np.full((1, 1, 30, 2), 0.5)
        loss = L.trajectory_loss(traj_tensor(trajs), gt, np.array([0]))
        assert abs(loss.item() - 7.5) < 1e-6

    def test_linear_branch_value(self):
        # per-coordinate error 2.0 -> 2.0 - 0.5 each
        gt = np.zeros((1, 30, 2))
        trajs = np.full((1, 1, 30, 2), 2.0)
        loss = L.trajectory_loss(traj_tensor(trajs), gt, np.array([0]))
        assert abs(loss.item() - 90.0) < 1e-6

    def test_only_winner_receives_gradient(self):
        rng = np.random.default_rng(1)
        gt = rng.standard_normal((1, 30, 2))
        with E.Tape() as tape:
            trajs = E.Tensor(rng.standard_normal((1, 3, 30, 2)), requires_grad=True)
            winners = L.winner_index(trajs.numpy(), gt)
            loss = L.trajectory_loss(trajs, gt, winners)
            E.backward(tape, loss)
        g = trajs.grad
        for j in range(3):
            if j == winners[0]:
                assert np.abs(g[0, j]).max() > 0
            else:
                assert (g[0, j] == 0).all()


class TestScoreLoss:
    def test_equidistant_targets_are_uniform(self):
        gt = np.zeros((1, 30, 2))
        trajs = np.zeros((1, 4, 30, 2))
        trajs[0, :, -1, 0] = [1, -1, 0, 0]
        trajs[0, :, -1, 1] = [0, 0, 1, -1]
        target = L.score_target(trajs, gt)
        np.testing.assert_allclose(target[0], 0.25, atol=1e-9)

    def test_two_mode_softmax_value(self):
        # distances [0, 1] -> [1/(1+e^-1), e^-1/(1+e^-1)]
        gt = np.zeros((1, 30, 2))
        trajs = np.zeros((1, 2, 30, 2))
        trajs[0, 1, -1, 0] = 1.0
        target = L.score_target(trajs, gt)
        expect0 = 1.0 / (1.0 + math.exp(-1.0))
        np.testing.assert_allclose(target[0], [expect0, 1.0 - expect0], atol=1e-9)
        np.testing.assert_allclose(target[0], [0.7311, 0.2689], atol=1e-4)

    def test_matching_probs_give_entropy(self):
        gt = np.zeros((1, 30, 2))
        rng = np.random.default_rng(2)
        trajs = rng.standard_normal((1, 5, 30, 2))
        target = L.score_target(trajs, gt)
        probs = E.Tensor(target)
        loss = L.score_loss(probs, trajs, gt)
        entropy = -(target * np.log(target)).sum(axis=1).mean()
        assert abs(loss.item() - entropy) < 1e-6

    def test_target_is_detached_from_tape(self):
        gt = np.zeros((1, 30, 2))
        rng = np.random.default_rng(3)
        with E.Tape() as tape:
            trajs = E.Tensor(rng.standard_normal((1, 3, 30, 2)), requires_grad=True)
            probs = E.softmax_masked(E.Tensor(rng.standard_normal((1, 3)), requires_grad=True))
            loss = L.score_loss(probs, trajs.numpy(), gt)
            E.backward(tape, loss)
        assert trajs.grad is None  # endpoints only shape the constant target


class TestTotalLoss:
    def make_outputs(self, rng, b=2, k=3):
        trajs = E.Tensor(rng.standard_normal((b, k, 30, 2)))
        logits = E.Tensor(rng.standard_normal((b, k)))
        return {"trajectories": trajs, "probs": E.softmax_masked(logits)}

    def test_zero_traj_component(self):
        gt = np.random.default_rng(4).standard_normal((1, 30, 2))
        trajs = np.stack([gt], axis=1)
        outputs = {"trajectories": traj_tensor(trajs),
                   "probs": E.softmax_masked(E.Tensor(np.zeros((1, 1))))}
        total, parts = L.total_loss(outputs, gt)
        assert parts.traj_loss == 0.0
        assert abs(parts.total - parts.score_loss) < 1e-9

    def test_weighting_identity(self):
        rng = np.random.default_rng(5)
        outputs = self.make_outputs(rng)
        gt = rng.standard_normal((2, 30, 2))
        total, parts = L.total_loss(outputs, gt)
        assert abs(parts.total - (parts.score_loss + 0.5 * parts.traj_loss)) < 1e-6

    def test_alpha_weighting(self):
        rng = np.random.default_rng(6)
        outputs = self.make_outputs(rng)
        gt = rng.standard_normal((2, 30, 2))
        _, parts = L.total_loss(outputs, gt, alpha=2.0)
        assert abs(parts.total - (parts.score_loss + 2.0 * parts.traj_loss)) < 1e-6

    def test_batch_mean_reduction(self):
        rng = np.random.default_rng(7)
        b = 4
        trajs = rng.standard_normal((b, 2, 30, 2))
        gt = rng.standard_normal((b, 30, 2))
        probs_all = np.full((b, 2), 0.5)
        outputs = {"trajectories": traj_tensor(trajs), "probs": E.Tensor(probs_all)}
        _, parts = L.total_loss(outputs, gt)
        singles = []
        for i in range(b):
            single = {"trajectories": traj_tensor(trajs[i:i + 1]),
                      "probs": E.Tensor(probs_all[i:i + 1])}
            _, p = L.total_loss(single, gt[i:i + 1])
            singles.append(p.total)
        assert abs(parts.total - np.mean(singles)) < 1e-6
