"""Scene files, dataset batching, and the synthetic scenario generator.

A dataset is a directory of UTF-8 ``*.json`` files, one world-frame
scene per file:

    {
      "id": str,
      "agents": [{"track_id": str,
                  "states": [[t, x, y, vx, vy, heading], ...],
                  "is_target": bool}, ...],
      "lanes": [{"waypoints": [[x, y, psi], ...],
                 "turn": "none"|"left"|"right",
                 "in_intersection": bool,
                 "traffic_control": bool}, ...],
      "future": [[x, y], ...]          # optional, FUTURE_STEPS entries
    }

Exactly one agent is the target; timestamps are strictly increasing at
10 Hz. States may also be [t, x, y] triples, in which case velocities
are finite-differenced and headings taken from displacement.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from mmtp import scene as sc
from mmtp.errors import InvalidSceneError, SceneParseError, SceneSchemaError

TICK = 0.1  # 10 Hz


# ---------------------------------------------------------------------------
# lane resampling
# ---------------------------------------------------------------------------

def resample_polyline(points: np.ndarray, n: int = sc.WAYPOINTS_PER_LANE) -> np.ndarray:
    """Resample (x, y) points to n waypoints equally spaced by arc length.

    Directions are recomputed from the resampled tangents. A polyline
    that already has exactly n points is treated as canonical and kept
    verbatim (this keeps save/load round trips exact).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise SceneSchemaError(f"lane polyline needs >= 2 points, got shape {pts.shape}")
    if pts.shape[1] == 3 and pts.shape[0] == n:
        return pts.copy()
    xy = pts[:, :2]
    seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0:
        raise SceneSchemaError("lane polyline has zero length")
    targets = np.linspace(0.0, s[-1], n)
    out = np.zeros((n, 3))
    out[:, 0] = np.interp(targets, s, xy[:, 0])
    out[:, 1] = np.interp(targets, s, xy[:, 1])
    tangent = np.diff(out[:, :2], axis=0)
    psi = np.arctan2(tangent[:, 1], tangent[:, 0])
    out[:-1, 2] = psi
    out[-1, 2] = psi[-1]
    return out


# ---------------------------------------------------------------------------
# loading and saving
# ---------------------------------------------------------------------------

def _states_to_history(raw_states) -> sc.AgentHistory:
    arr = np.asarray(raw_states, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] not in (3, 6):
        raise SceneSchemaError(f"agent states must be [t,x,y] or [t,x,y,vx,vy,heading], got {arr.shape}")
    t = arr[:, 0]
    if len(t) > 1:
        dt = np.diff(t)
        if (dt <= 0).any():
            raise SceneSchemaError("agent timestamps must be strictly increasing")
        if np.abs(dt - TICK).max() > 1e-3:
            raise SceneSchemaError("agent timestamps must be sampled at 10 Hz")
    if arr.shape[1] == 3:
        xy = arr[:, 1:3]
        vel = np.zeros_like(xy)
        if len(xy) > 1:
            vel[1:] = np.diff(xy, axis=0) / TICK
            vel[0] = vel[1]
        heading = np.zeros(len(xy))
        if len(xy) > 1:
            d = np.diff(xy, axis=0)
            heading[1:] = np.arctan2(d[:, 1], d[:, 0])
            heading[0] = heading[1]
        full = np.column_stack([t, xy, vel, heading])
    else:
        full = arr
    hist = sc.AgentHistory.empty()
    keep = full[-sc.HISTORY_STEPS:]
    k = len(keep)
    hist.states[-k:, :] = keep[:, 1:6]
    hist.valid[-k:] = True
    if not np.isfinite(hist.states[hist.valid]).all():
        raise SceneSchemaError("agent states contain non-finite values")
    return hist


def scene_from_dict(doc: dict, name: str = "<dict>") -> sc.Scene:
    """Build a normalized Scene from a parsed scene document."""
    if not isinstance(doc, dict):
        raise SceneSchemaError(f"{name}: scene document must be a JSON object")
    for key in ("id", "agents", "lanes"):
        if key not in doc:
            raise SceneSchemaError(f"{name}: missing required key {key!r}")
    targets = [a for a in doc["agents"] if a.get("is_target")]
    if len(targets) != 1:
        raise SceneSchemaError(f"{name}: exactly one agent must have is_target, found {len(targets)}")
    target = _states_to_history(targets[0]["states"])
    if not target.valid[-1]:
        raise SceneSchemaError(f"{name}: target has no current-step state")
    neighbors = [_states_to_history(a["states"]) for a in doc["agents"] if not a.get("is_target")]
    if not doc["lanes"]:
        raise InvalidSceneError(f"{name}: a scene needs at least one lane")
    lanes = []
    for i, lane_doc in enumerate(doc["lanes"]):
        wps = resample_polyline(np.asarray(lane_doc["waypoints"], dtype=np.float64))
        turn = lane_doc.get("turn", "none")
        if turn not in sc.TURN_KINDS:
            raise SceneSchemaError(f"{name}: lane {i} has unknown turn kind {turn!r}")
        lanes.append(sc.Lane(wps, turn=turn,
                             in_intersection=bool(lane_doc.get("in_intersection", False)),
                             traffic_control=bool(lane_doc.get("traffic_control", False))))
    future = doc.get("future")
    if future is not None:
        future = np.asarray(future, dtype=np.float64)
        if future.shape != (sc.FUTURE_STEPS, 2):
            raise SceneSchemaError(
                f"{name}: future must be {sc.FUTURE_STEPS} [x,y] rows, got {future.shape}")
    return sc.build_scene(str(doc["id"]), target, neighbors, lanes, future)


def load_scene(path: str) -> sc.Scene:
    """Load one scene file: parse, resample lanes, normalize, slot."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise SceneParseError(f"{path}: line {err.lineno}, column {err.colno}: {err.msg}") from err
    return scene_from_dict(doc, name=os.path.basename(path))


def scene_to_dict(scene: sc.Scene) -> dict:
    """Serialize a normalized scene back to the world-frame document form."""
    world = sc.denormalize_scene(scene) if scene.frame is not None else scene
    agents = []
    t_now = 0.0

    def track(hist, track_id, is_target):
        steps = np.flatnonzero(hist.valid)
        states = [[round(t_now - TICK * (sc.HISTORY_STEPS - 1 - int(s)), 6)]
                  + [float(v) for v in hist.states[s]] for s in steps]
        return {"track_id": track_id, "states": states, "is_target": is_target}

    agents.append(track(world.target, "target", True))
    for i, hist in enumerate(world.neighbors):
        if world.neighbor_valid[i]:
            agents.append(track(hist, f"n{i}", False))
    lanes = [{
        "waypoints": [[float(v) for v in wp] for wp in lane.waypoints],
        "turn": lane.turn,
        "in_intersection": lane.in_intersection,
        "traffic_control": lane.traffic_control,
    } for lane in world.lanes if lane.valid]
    doc = {"id": world.id, "agents": agents, "lanes": lanes}
    if world.future is not None:
        doc["future"] = [[float(x), float(y)] for x, y in world.future]
    return doc


def save_scene(scene: sc.Scene, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh)


def load_dataset(directory: str) -> list:
    """All *.json scenes under a directory, sorted by filename."""
    names = sorted(f for f in os.listdir(directory) if f.endswith(".json"))
    if not names:
        raise InvalidSceneError(f"no scene files in {directory}")
    return [load_scene(os.path.join(directory, n)) for n in names]


# ---------------------------------------------------------------------------
# synthetic scenario generator
# ---------------------------------------------------------------------------

@dataclass
class ScenarioPreset:
    """Sampling ranges for one family of generated scenes."""

    kind: str
    speed: tuple = (4.0, 9.0)        # m/s
    curvature: tuple = (1 / 30.0, 1 / 14.0)  # 1/m
    neighbor_count: tuple = (0, 4)
    noise_std: float = 0.0           # m, applied to the target's history

    def __post_init__(self):
        if self.speed[0] > self.speed[1] or self.curvature[0] > self.curvature[1]:
            raise ValueError("preset ranges must be nonempty")
        if self.noise_std < 0:
            raise ValueError("noise std must be nonnegative")


PRESETS = {
    "straight": ScenarioPreset("straight"),
    "left_turn": ScenarioPreset("left_turn"),
    "right_turn": ScenarioPreset("right_turn"),
    # forks curve hard enough that the branches separate unambiguously
    # (beyond 2 m) within the prediction horizon even at low speed
    "fork": ScenarioPreset("fork", speed=(4.0, 8.0), curvature=(1 / 25.0, 1 / 15.0)),
    "intersection": ScenarioPreset("intersection"),
}


def _arc_path(s, curvature):
    """Point and heading at arc length s along a constant-curvature path from the origin."""
    s = np.asarray(s, dtype=np.float64)
    if abs(curvature) < 1e-12:
        return np.stack([s, np.zeros_like(s)], axis=-1), np.zeros_like(s)
    r = 1.0 / curvature
    ang = s * curvature
    pts = np.stack([r * np.sin(ang), r * (1.0 - np.cos(ang))], axis=-1)
    return pts, ang


def _fork_path(s, curvature):
    """Straight approach for s < 0, curving branch for s >= 0."""
    s = np.asarray(s, dtype=np.float64)
    pts, ang = _arc_path(np.maximum(s, 0.0), curvature)
    behind = s < 0
    pts[behind] = np.stack([s[behind], np.zeros_like(s[behind])], axis=-1)
    ang[behind] = 0.0
    return pts, ang


def _lane_from_path(path_fn, s0, s1, offset=0.0, n=sc.WAYPOINTS_PER_LANE, **attrs):
    s = np.linspace(s0, s1, n)
    pts, ang = path_fn(s)
    if offset:
        normal = np.stack([-np.sin(ang), np.cos(ang)], axis=-1)
        pts = pts + offset * normal
    wps = np.column_stack([pts, sc.wrap_angle(ang)])
    return sc.Lane(wps, **attrs)


def _roll_agent(path_fn, s_at_t0, speed, steps, noise_std, rng):
    """States along a path at constant speed; returns (T, 5) [x,y,vx,vy,heading]."""
    s = s_at_t0 + speed * TICK * np.arange(-(steps - 1), 1)
    pts, ang = path_fn(s)
    if noise_std > 0:
        pts = pts + rng.normal(0.0, noise_std, pts.shape)
    vel = speed * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    return np.column_stack([pts, vel, sc.wrap_angle(ang)])


def generate_scene_dict(preset: ScenarioPreset, seed: int) -> dict:
    """One world-frame scene document sampled from a preset (pure in (preset, seed))."""
    rng = np.random.default_rng(seed)
    speed = float(rng.uniform(*preset.speed))
    curv = float(rng.uniform(*preset.curvature))
    lane_span = (-max(2.0 * preset.speed[1], 20.0) - 5.0, 3.0 * preset.speed[1] + 5.0)
    branch = None

    if preset.kind == "straight":
        path = lambda s: _arc_path(s, 0.0)
        lanes = [_lane_from_path(path, *lane_span),
                 _lane_from_path(path, *lane_span, offset=3.5),
                 _lane_from_path(path, *lane_span, offset=-3.5)]
        lane_paths = [(path, 0.0), (path, 3.5), (path, -3.5)]
    elif preset.kind in ("left_turn", "right_turn"):
        k = curv if preset.kind == "left_turn" else -curv
        turn = "left" if k > 0 else "right"
        path = lambda s: _fork_path(s, k)
        straight = lambda s: _arc_path(s, 0.0)
        lanes = [_lane_from_path(path, *lane_span, turn=turn),
                 _lane_from_path(straight, *lane_span)]
        lane_paths = [(path, 0.0), (straight, 0.0)]
    elif preset.kind == "fork":
        branch = int(rng.integers(0, 2))
        k = curv if rng.random() < 0.5 else -curv
        arc = lambda s: _fork_path(s, k)
        straight = lambda s: _arc_path(s, 0.0)
        branch_paths = [straight, arc]
        path = branch_paths[branch]
        turn = "left" if k > 0 else "right"
        # branch lanes start at the fork point; the approach lane sits behind
        lanes = [_lane_from_path(straight, 0.0, lane_span[1]),
                 _lane_from_path(arc, 0.0, lane_span[1], turn=turn),
                 _lane_from_path(straight, lane_span[0], 0.0)]
        lane_paths = [(straight, 0.0), (arc, 0.0), (straight, 0.0)]
    elif preset.kind == "intersection":
        path = lambda s: _arc_path(s, 0.0)

        def cross_fn(s):
            s = np.asarray(s, dtype=np.float64)
            return np.stack([np.full_like(s, 12.0), s], axis=-1), np.full_like(s, math.pi / 2)

        lanes = [_lane_from_path(path, *lane_span, in_intersection=True),
                 _lane_from_path(cross_fn, -25.0, 25.0, in_intersection=True,
                                 traffic_control=True),
                 _lane_from_path(path, *lane_span, offset=3.5, traffic_control=True)]
        lane_paths = [(path, 0.0), (cross_fn, 0.0), (path, 3.5)]
    else:
        raise ValueError(f"unknown preset kind {preset.kind!r}")

    target_states = _roll_agent(path, 0.0, speed, sc.HISTORY_STEPS, preset.noise_std, rng)
    future_pts, _ = path(speed * TICK * np.arange(1, sc.FUTURE_STEPS + 1))

    # the whole scene gets a random world pose so frame normalization is real
    theta = float(rng.uniform(-math.pi, math.pi))
    shift = rng.uniform(-200.0, 200.0, 2)
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])

    def to_world_states(states):
        out = states.copy()
        out[:, 0:2] = out[:, 0:2] @ rot.T + shift
        out[:, 2:4] = out[:, 2:4] @ rot.T
        out[:, 4] = sc.wrap_angle(out[:, 4] + theta)
        return out

    t_axis = np.round(TICK * np.arange(sc.HISTORY_STEPS), 6)
    agents = [{
        "track_id": "target",
        "states": [[float(t)] + [float(v) for v in row]
                   for t, row in zip(t_axis, to_world_states(target_states))],
        "is_target": True,
    }]

    n_neighbors = int(rng.integers(preset.neighbor_count[0], preset.neighbor_count[1] + 1))
    for i in range(n_neighbors):
        lane_fn, offset = lane_paths[int(rng.integers(0, len(lane_paths)))]
        s0 = float(rng.uniform(-20.0, 20.0))
        if abs(s0) < 4.0 and offset == 0.0:
            s0 = 4.0 * (1 if s0 >= 0 else -1) + s0
        n_speed = speed * float(rng.uniform(0.7, 1.3))
        states = _roll_agent(lambda q: _offset_path(lane_fn, q, offset), s0, n_speed,
                             sc.HISTORY_STEPS, 0.0, rng)
        agents.append({
            "track_id": f"n{i}",
            "states": [[float(t)] + [float(v) for v in row]
                       for t, row in zip(t_axis, to_world_states(states))],
            "is_target": False,
        })

    lane_docs = []
    for lane in lanes:
        wps = lane.waypoints.copy()
        wps[:, 0:2] = wps[:, 0:2] @ rot.T + shift
        wps[:, 2] = sc.wrap_angle(wps[:, 2] + theta)
        lane_docs.append({"waypoints": [[float(v) for v in wp] for wp in wps],
                          "turn": lane.turn,
                          "in_intersection": lane.in_intersection,
                          "traffic_control": lane.traffic_control})

    scene_id = f"{preset.kind}-{seed:08d}" + (f"-b{branch}" if branch is not None else "")
    future_world = future_pts @ rot.T + shift
    return {"id": scene_id, "agents": agents, "lanes": lane_docs,
            "future": [[float(x), float(y)] for x, y in future_world]}


def _offset_path(path_fn, s, offset):
    pts, ang = path_fn(s)
    if offset:
        normal = np.stack([-np.sin(ang), np.cos(ang)], axis=-1)
        pts = pts + offset * normal
    return pts, ang


def generate_scene(preset: ScenarioPreset, seed: int) -> sc.Scene:
    """Generate and normalize one scene (same path as loading from disk)."""
    doc = generate_scene_dict(preset, seed)
    return scene_from_dict(doc, name=doc["id"])


def fork_branch_lanes(scene: sc.Scene):
    """Indices of the two diverging branch lanes of a fork scene.

    Branches are the valid lanes that lie entirely ahead of the target
    (the approach lane reaches behind it).
    """
    branches = []
    for i, lane in enumerate(scene.lanes):
        if lane.valid and lane.waypoints[:, 0].min() > -1.0:
            branches.append(i)
    return branches


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    """Stacked model inputs for a list of scenes."""

    scenes: list
    agents: np.ndarray         # (B, 11, HISTORY_STEPS, 5)
    agent_mask: np.ndarray     # (B, 11)
    lanes: np.ndarray          # (B, 40, 10, 3)
    lane_attr: np.ndarray      # (B, 40, 7)
    lane_mask: np.ndarray      # (B, 40)
    waypoint_mask: np.ndarray  # (B, 40, 10)
    future: np.ndarray | None  # (B, FUTURE_STEPS, 2) when every scene has one

    def __len__(self):
        return len(self.scenes)


def make_batch(scenes) -> Batch:
    packs = [sc.scene_arrays(s) for s in scenes]
    future = None
    if all(p["future"] is not None for p in packs):
        future = np.stack([p["future"] for p in packs])
    return Batch(
        scenes=list(scenes),
        agents=np.stack([p["agents"] for p in packs]),
        agent_mask=np.stack([p["agent_mask"] for p in packs]),
        lanes=np.stack([p["lanes"] for p in packs]),
        lane_attr=np.stack([p["lane_attr"] for p in packs]),
        lane_mask=np.stack([p["lane_mask"] for p in packs]),
        waypoint_mask=np.stack([p["waypoint_mask"] for p in packs]),
        future=future,
    )


def iter_batches(scenes, batch_size: int, rng: np.random.Generator | None = None,
                 shuffle: bool = True):
    """Yield Batches covering the dataset once; order is seeded via rng."""
    if not scenes:
        raise ValueError("cannot batch an empty dataset")
    order = np.arange(len(scenes))
    if shuffle:
        if rng is None:
            rng = np.random.default_rng(0)
        rng.shuffle(order)
    for start in range(0, len(scenes), batch_size):
        chunk = [scenes[i] for i in order[start:start + batch_size]]
        yield make_batch(chunk)
