"""Dependency-free SVG rendering of scenes, predictions, and attention.

One panel per mode: lanes in gray, the target's history in red,
neighbors in blue, the mode's predicted trajectory in yellow, ground
truth in green. Map waypoints whose attention score exceeds the
threshold are drawn as red circles with opacity proportional to score.
Meters map to pixels at 8 px/m with the y axis flipped and a 5 m
margin auto-fitted around everything drawn.
"""

from __future__ import annotations

import numpy as np

from mmtp.errors import InvalidSceneError
from mmtp.scene import WAYPOINTS_PER_LANE, Scene

PX_PER_M = 8.0
MARGIN_M = 5.0
LANE_COLOR = "#999999"
HISTORY_COLOR = "#d62728"     # red
NEIGHBOR_COLOR = "#1f77b4"    # blue
PREDICTION_COLOR = "#ffbf00"  # yellow
GT_COLOR = "#2ca02c"          # green
ATTENTION_COLOR = "#d62728"


class _Panel:
    """Maps target-frame meters into one panel's pixel rectangle."""

    def __init__(self, bounds, x_offset_px):
        self.x0, self.y0, self.x1, self.y1 = bounds
        self.x_offset = x_offset_px
        self.width = (self.x1 - self.x0) * PX_PER_M
        self.height = (self.y1 - self.y0) * PX_PER_M

    def to_px(self, xy):
        x = (np.asarray(xy)[..., 0] - self.x0) * PX_PER_M + self.x_offset
        y = (self.y1 - np.asarray(xy)[..., 1]) * PX_PER_M
        return x, y

    def polyline(self, pts, color, width=1.5, opacity=1.0, dash=None):
        if len(pts) < 2:
            return ""
        xs, ys = self.to_px(pts)
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        return (f'<polyline points="{coords}" fill="none" stroke="{color}" '
                f'stroke-width="{width}" stroke-opacity="{opacity:.3f}"{dash_attr}/>\n')

    def circle(self, xy, radius_px, color, opacity):
        xs, ys = self.to_px(np.asarray(xy)[None, :])
        return (f'<circle cx="{xs[0]:.2f}" cy="{ys[0]:.2f}" r="{radius_px:.1f}" '
                f'fill="{color}" fill-opacity="{opacity:.3f}"/>\n')

    def label(self, text, y_px=14.0):
        return (f'<text x="{self.x_offset + 6:.1f}" y="{y_px:.1f}" '
                f'font-family="sans-serif" font-size="12" fill="#333333">{text}</text>\n')


def _scene_bounds(scene: Scene, trajectories):
    pts = [lane.waypoints[:, :2] for lane in scene.lanes if lane.valid]
    pts.append(scene.target.states[scene.target.valid, :2])
    for i, hist in enumerate(scene.neighbors):
        if scene.neighbor_valid[i] and hist.valid.any():
            pts.append(hist.states[hist.valid, :2])
    if scene.future is not None:
        pts.append(scene.future)
    if trajectories is not None:
        pts.append(trajectories.reshape(-1, 2))
    allp = np.concatenate(pts, axis=0)
    return (float(allp[:, 0].min()) - MARGIN_M, float(allp[:, 1].min()) - MARGIN_M,
            float(allp[:, 0].max()) + MARGIN_M, float(allp[:, 1].max()) + MARGIN_M)


def _draw_base(panel: _Panel, scene: Scene) -> str:
    parts = []
    for lane in scene.lanes:
        if lane.valid:
            parts.append(panel.polyline(lane.waypoints[:, :2], LANE_COLOR))
    for i, hist in enumerate(scene.neighbors):
        if scene.neighbor_valid[i] and hist.valid.sum() >= 2:
            parts.append(panel.polyline(hist.states[hist.valid, :2], NEIGHBOR_COLOR,
                                        width=2.0))
    hist = scene.target
    parts.append(panel.polyline(hist.states[hist.valid, :2], HISTORY_COLOR, width=2.5))
    if scene.future is not None:
        parts.append(panel.polyline(scene.future, GT_COLOR, width=2.0))
    return "".join(parts)


def _attention_circles(panel: _Panel, scene: Scene, row: np.ndarray,
                       min_score: float) -> str:
    """row covers the first len(row)//W lane slots, W waypoints each."""
    n_lanes = len(row) // WAYPOINTS_PER_LANE
    peak = float(row.max()) if row.size else 0.0
    if peak <= 0.0:
        return ""
    parts = []
    for flat, score in enumerate(row):
        if score <= min_score:
            continue
        lane = scene.lanes[flat // WAYPOINTS_PER_LANE]
        if not lane.valid:
            continue
        wp = lane.waypoints[flat % WAYPOINTS_PER_LANE, :2]
        parts.append(panel.circle(wp, 3.0, ATTENTION_COLOR, min(1.0, score / peak)))
    return "".join(parts)


def render_scene(scene: Scene, trajectories=None, probs=None, attention=None,
                 min_score: float = 0.01) -> str:
    """Render one scene to an SVG string.

    trajectories: optional (K, T, 2) target-frame predictions; probs (K,).
    attention: optional (K, N) per-mode map attention rows; when given,
    one panel per mode is drawn, otherwise a single panel.
    """
    if scene.valid_lane_count() == 0:
        raise InvalidSceneError(f"scene {scene.id} has no lanes to draw")
    trajectories = None if trajectories is None else np.asarray(trajectories, dtype=np.float64)
    bounds = _scene_bounds(scene, trajectories)
    n_panels = 1 if attention is None else np.asarray(attention).shape[0]
    gap = 10.0
    panels = []
    x_off = 0.0
    for _ in range(n_panels):
        panel = _Panel(bounds, x_off)
        panels.append(panel)
        x_off += panel.width + gap
    width = x_off - gap
    height = panels[0].height

    body = []
    for k, panel in enumerate(panels):
        body.append(f'<g id="mode{k}">\n')
        body.append(_draw_base(panel, scene))
        if attention is not None:
            body.append(_attention_circles(panel, scene, np.asarray(attention)[k],
                                           min_score))
        if trajectories is not None:
            if attention is None:
                for j in range(trajectories.shape[0]):
                    op = 1.0 if probs is None else 0.35 + 0.65 * float(probs[j]) / max(
                        float(np.max(probs)), 1e-9)
                    body.append(panel.polyline(trajectories[j], PREDICTION_COLOR,
                                               width=2.0, opacity=op))
            elif k < trajectories.shape[0]:
                body.append(panel.polyline(trajectories[k], PREDICTION_COLOR, width=2.5))
        title = f"mode {k}" if attention is not None else "prediction"
        if probs is not None and attention is not None and k < len(probs):
            title += f" p={float(probs[k]):.2f}"
        body.append(panel.label(title))
        body.append("</g>\n")

    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.2f} {height:.2f}">\n'
        f'<rect x="0" y="0" width="{width:.2f}" height="{height:.2f}" fill="#ffffff"/>\n'
        + "".join(body) + "</svg>\n"
    )
