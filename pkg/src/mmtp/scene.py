"""Scene domain model: agents, lanes, target-centric normalization, slotting.

All geometry here is float64 numpy; tensors only appear once scenes are
batched for the model. A Scene is immutable by convention after
construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from mmtp.errors import InvalidSceneError

HISTORY_STEPS = 20           # 2 s at 10 Hz, current step included
FUTURE_STEPS = 30            # 3 s at 10 Hz
STATE_DIM = 5                # x, y, vx, vy, heading
MAX_NEIGHBORS = 10
NEIGHBOR_RADIUS_M = 30.0
MAX_LANES = 40
WAYPOINTS_PER_LANE = 10
LANE_ATTR_DIM = 7            # one-hot turn (3) + intersection (2) + control (2)

TURN_KINDS = ("none", "left", "right")


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.isscalar(a) or np.ndim(a) == 0 else w


@dataclass(frozen=True)
class Pose:
    """Position and heading of a frame origin in world coordinates."""

    x: float
    y: float
    heading: float

    def is_finite(self) -> bool:
        return all(map(math.isfinite, (self.x, self.y, self.heading)))


@dataclass
class AgentHistory:
    """Fixed-length state track, oldest first; invalid steps hold zeros."""

    states: np.ndarray  # (HISTORY_STEPS, STATE_DIM)
    valid: np.ndarray   # (HISTORY_STEPS,) bool

    @staticmethod
    def empty() -> "AgentHistory":
        return AgentHistory(np.zeros((HISTORY_STEPS, STATE_DIM)),
                            np.zeros(HISTORY_STEPS, dtype=bool))

    def last_valid_position(self) -> np.ndarray | None:
        idx = np.flatnonzero(self.valid)
        if idx.size == 0:
            return None
        return self.states[idx[-1], :2].copy()

    def copy(self) -> "AgentHistory":
        return AgentHistory(self.states.copy(), self.valid.copy())


@dataclass
class Lane:
    """Ten waypoints (x, y, direction) plus lane-level attributes."""

    waypoints: np.ndarray  # (WAYPOINTS_PER_LANE, 3)
    turn: str = "none"
    in_intersection: bool = False
    traffic_control: bool = False
    valid: bool = True

    @staticmethod
    def empty() -> "Lane":
        return Lane(np.zeros((WAYPOINTS_PER_LANE, 3)), valid=False)

    def copy(self) -> "Lane":
        return Lane(self.waypoints.copy(), self.turn, self.in_intersection,
                    self.traffic_control, self.valid)

    def attr_one_hot(self) -> np.ndarray:
        if not self.valid:
            return np.zeros(LANE_ATTR_DIM)
        turn = np.zeros(3)
        turn[TURN_KINDS.index(self.turn)] = 1.0
        inter = np.array([0.0, 1.0]) if self.in_intersection else np.array([1.0, 0.0])
        ctrl = np.array([0.0, 1.0]) if self.traffic_control else np.array([1.0, 0.0])
        return np.concatenate([turn, inter, ctrl])


@dataclass
class Scene:
    """One prediction sample with fixed neighbor and lane slot counts.

    ``frame`` is the world pose of the target at the current step once
    the scene has been normalized (and None while still in world
    coordinates); denormalization restores the original frame.
    """

    id: str
    target: AgentHistory
    neighbors: list = field(default_factory=list)       # MAX_NEIGHBORS AgentHistory
    neighbor_valid: np.ndarray = None                   # (MAX_NEIGHBORS,) bool
    lanes: list = field(default_factory=list)           # MAX_LANES Lane
    future: np.ndarray | None = None                    # (FUTURE_STEPS, 2)
    frame: Pose | None = None

    def __post_init__(self):
        if self.neighbor_valid is None:
            self.neighbor_valid = np.zeros(MAX_NEIGHBORS, dtype=bool)
        while len(self.neighbors) < MAX_NEIGHBORS:
            self.neighbors.append(AgentHistory.empty())
        while len(self.lanes) < MAX_LANES:
            self.lanes.append(Lane.empty())

    def valid_lane_count(self) -> int:
        return sum(1 for l in self.lanes if l.valid)


@dataclass
class PredictionSet:
    """K predicted futures with a probability each."""

    trajectories: np.ndarray  # (K, FUTURE_STEPS, 2)
    probs: np.ndarray         # (K,)

    def validate(self, tol: float = 1e-5) -> None:
        if not np.isfinite(self.trajectories).all() or not np.isfinite(self.probs).all():
            raise ValueError("prediction set contains non-finite values")
        if (self.probs < 0).any() or abs(float(self.probs.sum()) - 1.0) > tol:
            raise ValueError(f"probabilities must form a simplex, got {self.probs}")


@dataclass
class ModelConfig:
    """Network and scene-layout hyperparameters (defaults: full-size model)."""

    d_model: int = 256
    n_heads: int = 6
    modes: int = 6
    history_steps: int = HISTORY_STEPS
    future_steps: int = FUTURE_STEPS
    max_neighbors: int = MAX_NEIGHBORS
    neighbor_radius_m: float = NEIGHBOR_RADIUS_M
    max_lanes: int = MAX_LANES
    waypoints_per_lane: int = WAYPOINTS_PER_LANE
    ffn_dim: int = 1024
    dropout_rate: float = 0.1
    map_mode: str = "waypoint"          # or "lane"
    multimodal_mode: str = "attention"  # or "ensemble"

    def validate(self) -> None:
        for name in ("d_model", "n_heads", "modes", "history_steps", "future_steps",
                     "max_neighbors", "max_lanes", "waypoints_per_lane", "ffn_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.map_mode not in ("waypoint", "lane"):
            raise ValueError(f"map_mode must be waypoint|lane, got {self.map_mode!r}")
        if self.multimodal_mode not in ("attention", "ensemble"):
            raise ValueError(f"multimodal_mode must be attention|ensemble, got {self.multimodal_mode!r}")
        if self.multimodal_mode == "attention" and self.modes != self.n_heads:
            raise ValueError("attention mode ties the mode count to the head count")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")


# ---------------------------------------------------------------------------
# frame normalization
# ---------------------------------------------------------------------------

def _transform_history(hist: AgentHistory, pose: Pose, inverse: bool) -> AgentHistory:
    out = hist.copy()
    if not hist.valid.any():
        return out
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    v = hist.valid
    xy = hist.states[v, 0:2]
    vel = hist.states[v, 2:4]
    head = hist.states[v, 4]
    if inverse:
        rot = np.array([[c, -s], [s, c]])
        out.states[v, 0:2] = xy @ rot.T + np.array([pose.x, pose.y])
        out.states[v, 2:4] = vel @ rot.T
        out.states[v, 4] = wrap_angle(head + pose.heading)
    else:
        rot = np.array([[c, s], [-s, c]])
        out.states[v, 0:2] = (xy - np.array([pose.x, pose.y])) @ rot.T
        out.states[v, 2:4] = vel @ rot.T
        out.states[v, 4] = wrap_angle(head - pose.heading)
    return out


def _transform_lane(lane: Lane, pose: Pose, inverse: bool) -> Lane:
    out = lane.copy()
    if not lane.valid:
        return out
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    xy = lane.waypoints[:, 0:2]
    psi = lane.waypoints[:, 2]
    if inverse:
        rot = np.array([[c, -s], [s, c]])
        out.waypoints[:, 0:2] = xy @ rot.T + np.array([pose.x, pose.y])
        out.waypoints[:, 2] = wrap_angle(psi + pose.heading)
    else:
        rot = np.array([[c, s], [-s, c]])
        out.waypoints[:, 0:2] = (xy - np.array([pose.x, pose.y])) @ rot.T
        out.waypoints[:, 2] = wrap_angle(psi - pose.heading)
    return out


def _transform_points(points: np.ndarray, pose: Pose, inverse: bool) -> np.ndarray:
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    if inverse:
        rot = np.array([[c, -s], [s, c]])
        return points @ rot.T + np.array([pose.x, pose.y])
    rot = np.array([[c, s], [-s, c]])
    return (points - np.array([pose.x, pose.y])) @ rot.T


def normalize_scene(scene: Scene) -> Scene:
    """Move a world-frame scene into the target-centric frame.

    Translates so the target's current position is the origin, then
    rotates so its current heading lies along +x. Velocities rotate
    only; invalid slots stay zeroed. The world pose is kept in
    ``frame`` for the inverse transform.
    """
    if scene.frame is not None:
        raise InvalidSceneError(f"scene {scene.id} is already normalized")
    if not scene.target.valid[-1]:
        raise InvalidSceneError(f"scene {scene.id}: target has no state at the current step")
    x, y, _, _, heading = scene.target.states[-1]
    pose = Pose(float(x), float(y), float(heading))
    if not pose.is_finite():
        raise InvalidSceneError(f"scene {scene.id}: target pose is not finite")
    return Scene(
        id=scene.id,
        target=_transform_history(scene.target, pose, inverse=False),
        neighbors=[_transform_history(n, pose, inverse=False) for n in scene.neighbors],
        neighbor_valid=scene.neighbor_valid.copy(),
        lanes=[_transform_lane(l, pose, inverse=False) for l in scene.lanes],
        future=None if scene.future is None else _transform_points(scene.future, pose, False),
        frame=pose,
    )


def denormalize_scene(scene: Scene) -> Scene:
    """Undo normalize_scene using the stored frame pose."""
    if scene.frame is None:
        raise InvalidSceneError(f"scene {scene.id} carries no frame to invert")
    pose = scene.frame
    return Scene(
        id=scene.id,
        target=_transform_history(scene.target, pose, inverse=True),
        neighbors=[_transform_history(n, pose, inverse=True) for n in scene.neighbors],
        neighbor_valid=scene.neighbor_valid.copy(),
        lanes=[_transform_lane(l, pose, inverse=True) for l in scene.lanes],
        future=None if scene.future is None else _transform_points(scene.future, pose, True),
        frame=None,
    )


def denormalize_points(points: np.ndarray, frame: Pose) -> np.ndarray:
    """Map target-frame coordinates back to the world frame."""
    return _transform_points(np.asarray(points, dtype=np.float64), frame, inverse=True)


# ---------------------------------------------------------------------------
# slot selection
# ---------------------------------------------------------------------------

def select_neighbors(candidates, target_position, radius_m: float = NEIGHBOR_RADIUS_M,
                     slots: int = MAX_NEIGHBORS):
    """Keep the nearest in-radius candidates, padded to a fixed slot count.

    Distance is measured from each candidate's latest valid position to
    the target's current position; ties keep input order. Returns
    (histories, valid flags).
    """
    target_position = np.asarray(target_position, dtype=np.float64)
    ranked = []
    for idx, hist in enumerate(candidates):
        pos = hist.last_valid_position()
        if pos is None:
            continue
        if not np.isfinite(pos).all():
            raise InvalidSceneError(f"neighbor candidate {idx} has non-finite position")
        dist = float(np.linalg.norm(pos - target_position))
        if dist <= radius_m:
            ranked.append((dist, idx, hist))
    ranked.sort(key=lambda r: (r[0], r[1]))
    kept = [h.copy() for _, _, h in ranked[:slots]]
    valid = np.zeros(slots, dtype=bool)
    valid[:len(kept)] = True
    while len(kept) < slots:
        kept.append(AgentHistory.empty())
    return kept, valid


def select_lanes(candidates, target_position, slots: int = MAX_LANES):
    """Keep the lanes whose closest waypoint is nearest the target.

    Ties keep input order. A scene needs at least one lane; zero
    candidates is an error.
    """
    target_position = np.asarray(target_position, dtype=np.float64)
    ranked = []
    for idx, lane in enumerate(candidates):
        if not lane.valid:
            continue
        d = float(np.min(np.linalg.norm(lane.waypoints[:, :2] - target_position, axis=1)))
        ranked.append((d, idx, lane))
    if not ranked:
        raise InvalidSceneError("a scene needs at least one valid lane")
    ranked.sort(key=lambda r: (r[0], r[1]))
    kept = [l.copy() for _, _, l in ranked[:slots]]
    while len(kept) < slots:
        kept.append(Lane.empty())
    return kept


# ---------------------------------------------------------------------------
# tensor packing
# ---------------------------------------------------------------------------

def scene_arrays(scene: Scene) -> dict:
    """Stack one normalized scene into the model's input arrays."""
    agents = np.zeros((1 + MAX_NEIGHBORS, HISTORY_STEPS, STATE_DIM))
    agent_mask = np.zeros(1 + MAX_NEIGHBORS, dtype=bool)
    agents[0] = scene.target.states
    agent_mask[0] = True
    for i, hist in enumerate(scene.neighbors):
        agents[1 + i] = hist.states
        agent_mask[1 + i] = bool(scene.neighbor_valid[i])
    lanes = np.zeros((MAX_LANES, WAYPOINTS_PER_LANE, 3))
    lane_attr = np.zeros((MAX_LANES, LANE_ATTR_DIM))
    lane_mask = np.zeros(MAX_LANES, dtype=bool)
    for i, lane in enumerate(scene.lanes):
        if lane.valid:
            lanes[i] = lane.waypoints
            lane_attr[i] = lane.attr_one_hot()
            lane_mask[i] = True
    waypoint_mask = np.repeat(lane_mask[:, None], WAYPOINTS_PER_LANE, axis=1)
    return {
        "agents": agents,
        "agent_mask": agent_mask,
        "lanes": lanes,
        "lane_attr": lane_attr,
        "lane_mask": lane_mask,
        "waypoint_mask": waypoint_mask,
        "future": None if scene.future is None else scene.future.copy(),
    }


def build_scene(scene_id: str, target: AgentHistory, neighbor_candidates,
                lane_candidates, future: np.ndarray | None) -> Scene:
    """Assemble, slot, and normalize a world-frame scene."""
    if not target.valid[-1]:
        raise InvalidSceneError(f"scene {scene_id}: target must be observed at the current step")
    target_pos = target.states[-1, :2]
    neighbors, neighbor_valid = select_neighbors(neighbor_candidates, target_pos)
    lanes = select_lanes(lane_candidates, target_pos)
    world = Scene(id=scene_id, target=target.copy(), neighbors=neighbors,
                  neighbor_valid=neighbor_valid, lanes=lanes,
                  future=None if future is None else np.asarray(future, dtype=np.float64))
    return normalize_scene(world)
