"""Motion forecasting metrics over sets of (prediction, ground truth) pairs.

The best trajectory is always chosen by endpoint error; minADE averages
the per-step error of that same trajectory (not the minimum of per-mode
ADEs, which is a different and easily-confused quantity). A scene is a
miss when no endpoint is within 2.0 m of the ground truth (inclusive
boundary: exactly 2.0 m is not a miss).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

MISS_THRESHOLD_M = 2.0


@dataclass
class MetricReport:
    min_ade: float
    min_fde: float
    brier_min_fde: float
    miss_rate: float
    n_scenes: int

    def to_json(self) -> str:
        return json.dumps({
            "minADE": self.min_ade,
            "minFDE": self.min_fde,
            "brier-minFDE": self.brier_min_fde,
            "miss_rate": self.miss_rate,
            "n_scenes": self.n_scenes,
        }, indent=2)

    def to_table(self) -> str:
        rows = [("minADE (m)", self.min_ade), ("minFDE (m)", self.min_fde),
                ("brier-minFDE", self.brier_min_fde), ("miss rate", self.miss_rate)]
        width = max(len(r[0]) for r in rows)
        lines = [f"{name:<{width}}  {value:10.4f}" for name, value in rows]
        lines.append(f"{'scenes':<{width}}  {self.n_scenes:10d}")
        return "\n".join(lines)


def min_fde(pred, gt_future) -> tuple:
    """(endpoint error of the best mode, its index); ties to the lowest index."""
    gt_future = np.asarray(gt_future, dtype=np.float64)
    dists = np.linalg.norm(pred.trajectories[:, -1, :] - gt_future[-1], axis=-1)
    best = int(dists.argmin())
    return float(dists[best]), best


def min_ade(pred, gt_future) -> float:
    """Mean per-step error of the best-by-endpoint trajectory."""
    gt_future = np.asarray(gt_future, dtype=np.float64)
    _, best = min_fde(pred, gt_future)
    steps = np.linalg.norm(pred.trajectories[best] - gt_future, axis=-1)
    return float(steps.mean())


def brier_min_fde(pred, gt_future) -> float:
    """minFDE plus (1 - p)^2 for the best trajectory's probability."""
    value, best = min_fde(pred, gt_future)
    return value + (1.0 - float(pred.probs[best])) ** 2


def miss_rate(pairs) -> float:
    """Fraction of scenes whose best endpoint is strictly beyond the threshold."""
    if not pairs:
        raise ValueError("miss_rate needs a nonempty batch")
    misses = sum(1 for pred, gt in pairs if min_fde(pred, gt)[0] > MISS_THRESHOLD_M)
    return misses / len(pairs)


def evaluate(pairs) -> MetricReport:
    """Aggregate all four metrics over (PredictionSet, gt_future) pairs."""
    if not pairs:
        raise ValueError("evaluate needs a nonempty batch")
    ades = [min_ade(pred, gt) for pred, gt in pairs]
    fdes = [min_fde(pred, gt)[0] for pred, gt in pairs]
    briers = [brier_min_fde(pred, gt) for pred, gt in pairs]
    return MetricReport(
        min_ade=float(np.mean(ades)),
        min_fde=float(np.mean(fdes)),
        brier_min_fde=float(np.mean(briers)),
        miss_rate=miss_rate(pairs),
        n_scenes=len(pairs),
    )
