"""Training objectives: winner-take-all regression and score cross entropy.

The regression loss touches only the trajectory whose endpoint is
closest to the ground truth, so its gradient reaches only that mode's
attention head. The score target is a softmax over negative endpoint
distances and is treated as a constant (no gradient flows into the
labels through the predicted endpoints).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mmtp import engine as E

TRAJ_WEIGHT = 0.5   # weight of the regression term in the total
LOG_FLOOR = 1e-12   # clamp for log of predicted probabilities


@dataclass
class LossBreakdown:
    traj_loss: float
    score_loss: float
    total: float
    winner_index: np.ndarray  # (B,) per-scene winning mode


def winner_index(trajectories: np.ndarray, gt_future: np.ndarray) -> np.ndarray:
    """Per scene, the mode whose endpoint is nearest the ground-truth endpoint.

    trajectories (B, K, T, 2), gt_future (B, T, 2). Ties go to the
    lowest index (argmin's first hit).
    """
    end_pred = trajectories[:, :, -1, :]
    end_gt = gt_future[:, None, -1, :]
    dist = np.linalg.norm(end_pred - end_gt, axis=-1)
    return dist.argmin(axis=1)


def trajectory_loss(trajectories, gt_future, winners) -> E.Tensor:
    """Smooth-L1 between the winning trajectory and the ground truth.

    Summed over coordinates and timesteps per scene, averaged over the
    batch. ``trajectories`` is a Tensor (B, K, T, 2); the others are
    arrays.
    """
    winner_traj = E.take_rows(trajectories, winners)          # (B, T, 2)
    residual = E.sub(winner_traj, E.as_tensor(gt_future))
    per_scene = E.sum_(E.huber(residual), axis=(1, 2))        # (B,)
    return E.mean(per_scene)


def score_target(trajectories: np.ndarray, gt_future: np.ndarray) -> np.ndarray:
    """Ground-truth mode distribution: softmax of negative endpoint distance."""
    end_pred = trajectories[:, :, -1, :]
    end_gt = gt_future[:, None, -1, :]
    dist = np.linalg.norm(end_pred - end_gt, axis=-1)         # (B, K)
    z = -dist
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def score_loss(probs, trajectories_data: np.ndarray, gt_future: np.ndarray) -> E.Tensor:
    """Cross entropy from the detached distance-based target to the predicted probs."""
    target = score_target(trajectories_data, gt_future)
    log_p = E.log(probs, floor=LOG_FLOOR)
    per_scene = E.scale(E.sum_(E.mul(log_p, E.Tensor(target)), axis=1), -1.0)
    return E.mean(per_scene)


def total_loss(outputs: dict, gt_future: np.ndarray, alpha: float = TRAJ_WEIGHT,
               include_score: bool = True):
    """Combined objective for one forward pass.

    Returns (scalar loss Tensor, LossBreakdown). ``include_score=False``
    isolates the winner-take-all regression path (used by routing checks).
    """
    trajectories = outputs["trajectories"]
    traj_data = trajectories.numpy()
    winners = winner_index(traj_data, gt_future)
    traj = trajectory_loss(trajectories, gt_future, winners)
    # the logged total is the float64 identity over the logged components;
    # the tensor sum below only drives backward
    if include_score:
        score = score_loss(outputs["probs"], traj_data, gt_future)
        total = E.add(score, E.scale(traj, alpha))
        breakdown = LossBreakdown(traj.item(), score.item(),
                                  score.item() + alpha * traj.item(), winners)
    else:
        total = E.scale(traj, alpha)
        breakdown = LossBreakdown(traj.item(), 0.0, alpha * traj.item(), winners)
    return total, breakdown
