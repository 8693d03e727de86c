"""Agent and map feature encoders.

The agent encoder turns each (history, 5) track into one d_model vector
via a temporal conv and an LSTM; one weight set is shared by the target
and every neighbor slot. The map encoder embeds each waypoint from its
own feature, a masked max-pool over its lane, and the lane's one-hot
attributes; lane mode pools the final waypoint features per lane.
"""

from __future__ import annotations

import numpy as np

from mmtp import engine as E
from mmtp.layers import Conv1d, LSTM, Linear, merge_parameters

MASK_FILL = -1e9


class AgentEncoder:
    def __init__(self, d_model: int, rng, name: str = "agent_enc"):
        self.conv = Conv1d(5, d_model, rng, f"{name}.conv")
        self.lstm = LSTM(d_model, d_model, rng, f"{name}.lstm")

    def __call__(self, agents):
        """(B, A, T, 5) -> (B, A, d_model): final LSTM state per agent slot."""
        h = E.elu(self.conv(agents))
        h_last, _ = self.lstm(h)
        return h_last

    def parameters(self):
        return merge_parameters(self.conv, self.lstm)


def masked_max_pool(x, mask, axis: int):
    """Max over one axis ignoring masked positions; all-masked rows give zeros.

    mask is a plain {0,1} array broadcastable to x with the pooled axis
    kept; masked slots are pushed to MASK_FILL before the max.
    """
    mask = np.asarray(mask, dtype=bool)
    fill = np.where(mask, 0.0, MASK_FILL)
    has_any = mask.any(axis=axis, keepdims=True).astype(float)
    pooled = E.max_pool(E.add(x, fill[..., None]), axis=axis)
    return E.mul(pooled, np.squeeze(has_any, axis=axis)[..., None])


class MapEncoder:
    """Per-waypoint features (B, L*W, d) or per-lane features (B, L, d)."""

    def __init__(self, d_model: int, dropout_rate: float, rng, lane_mode: bool = False,
                 name: str = "map_enc"):
        self.fc_waypoint = Linear(3, d_model, rng, f"{name}.fc_waypoint")
        self.fc_lane = Linear(7, d_model, rng, f"{name}.fc_lane")
        self.fc_out = Linear(3 * d_model, d_model, rng, f"{name}.fc_out")
        self.dropout_rate = dropout_rate
        self.lane_mode = lane_mode

    def __call__(self, lanes, lane_attr, waypoint_mask, training: bool):
        """lanes (B, L, W, 3), lane_attr (B, L, 7), waypoint_mask (B, L, W)."""
        b, n_lanes, n_wp, _ = lanes.shape
        wp = E.dropout(E.elu(self.fc_waypoint(E.as_tensor(lanes))),
                       self.dropout_rate, training)
        pooled = masked_max_pool(wp, waypoint_mask, axis=2)         # (B, L, d)
        lane_feat = E.dropout(E.elu(self.fc_lane(E.as_tensor(lane_attr))),
                              self.dropout_rate, training)          # (B, L, d)
        zeros = np.zeros((b, n_lanes, n_wp, 1))
        pooled_b = E.add(E.reshape(pooled, (b, n_lanes, 1, -1)), zeros)
        lane_b = E.add(E.reshape(lane_feat, (b, n_lanes, 1, -1)), zeros)
        fused = E.concat([wp, pooled_b, lane_b], axis=-1)            # (B, L, W, 3d)
        out = E.dropout(E.elu(self.fc_out(fused)), self.dropout_rate, training)
        if self.lane_mode:
            lane_vec = masked_max_pool(out, waypoint_mask, axis=2)   # (B, L, d)
            lane_key_mask = np.asarray(waypoint_mask, dtype=bool).any(axis=2)
            return lane_vec, lane_key_mask
        flat = E.reshape(out, (b, n_lanes * n_wp, -1))               # (B, L*W, d)
        key_mask = np.asarray(waypoint_mask, dtype=bool).reshape(b, n_lanes * n_wp)
        return flat, key_mask

    def parameters(self):
        return merge_parameters(self.fc_waypoint, self.fc_lane, self.fc_out)
