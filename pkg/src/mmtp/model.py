"""Full predictor: encoders, attention layers, trajectory and score decoders."""

from __future__ import annotations

import numpy as np

from mmtp import engine as E
from mmtp.attention import AgentAgentEncoder, AgentMapEncoder, FusedAgentMapEncoder
from mmtp.encoders import AgentEncoder, MapEncoder
from mmtp.layers import Linear, merge_parameters
from mmtp.scene import ModelConfig, PredictionSet


def _used_slots(mask: np.ndarray) -> int:
    """Index one past the last slot any batch element marks valid (min 1)."""
    cols = np.asarray(mask, dtype=bool).any(axis=0)
    nz = np.flatnonzero(cols)
    return int(nz[-1]) + 1 if nz.size else 1


class Decoder:
    """Four-layer MLP applied row-wise: 3d -> 2d -> d -> d/2 -> out."""

    def __init__(self, d_model: int, out_dim: int, dropout_rate: float, rng, name: str):
        widths = [3 * d_model, 2 * d_model, d_model, max(1, d_model // 2)]
        self.hidden = [Linear(widths[i], widths[i + 1], rng, f"{name}.fc{i + 1}")
                       for i in range(3)]
        self.out = Linear(widths[3], out_dim, rng, f"{name}.fc4")
        self.dropout_rate = dropout_rate

    def __call__(self, x, training: bool):
        for fc in self.hidden:
            x = E.dropout(E.elu(fc(x)), self.dropout_rate, training)
        return self.out(x)

    def parameters(self):
        return merge_parameters(*self.hidden, self.out)


class TrajectoryPredictor:
    """The end-to-end model over batched scene arrays.

    ``multimodal_mode`` picks between multi-modal attention (one mode
    per agent-map head, decoders shared across modes) and the ensemble
    ablation (fused agent-map attention, one decoder set per mode).
    """

    def __init__(self, config: ModelConfig, seed: int | None = None):
        config.validate()
        self.config = config
        if seed is not None:
            E.seed(seed)
        rng = E.generator()
        d = config.d_model
        self.agent_encoder = AgentEncoder(d, rng)
        self.map_encoder = MapEncoder(d, config.dropout_rate, rng,
                                      lane_mode=(config.map_mode == "lane"))
        self.agent_agent = AgentAgentEncoder(d, config.n_heads, config.ffn_dim,
                                             config.dropout_rate, rng)
        if config.multimodal_mode == "attention":
            self.agent_map = AgentMapEncoder(d, config.modes, config.ffn_dim,
                                             config.dropout_rate, rng)
            self.traj_decoders = [Decoder(d, 2 * config.future_steps,
                                          config.dropout_rate, rng, "traj_dec")]
            self.score_decoders = [Decoder(d, 1, config.dropout_rate, rng, "score_dec")]
        else:
            self.agent_map = FusedAgentMapEncoder(d, config.n_heads, config.ffn_dim,
                                                  config.dropout_rate, rng)
            self.traj_decoders = [Decoder(d, 2 * config.future_steps, config.dropout_rate,
                                          rng, f"traj_dec{j}") for j in range(config.modes)]
            self.score_decoders = [Decoder(d, 1, config.dropout_rate, rng,
                                           f"score_dec{j}") for j in range(config.modes)]
        self._params = merge_parameters(self.agent_encoder, self.map_encoder,
                                        self.agent_agent, self.agent_map,
                                        *self.traj_decoders, *self.score_decoders)

    def parameters(self) -> dict:
        return self._params

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def forward(self, batch, training: bool = False) -> dict:
        cfg = self.config
        b = batch.agents.shape[0]
        k = cfg.modes

        # Slots past the last valid one in the whole batch are all-masked and
        # provably inert, so drop them before anything reaches the tape.
        n_agents = _used_slots(batch.agent_mask)
        n_lanes = _used_slots(batch.lane_mask)
        agents = batch.agents[:, :n_agents]
        agent_mask = batch.agent_mask[:, :n_agents]
        lanes = batch.lanes[:, :n_lanes]
        lane_attr = batch.lane_attr[:, :n_lanes]
        waypoint_mask = batch.waypoint_mask[:, :n_lanes]

        agent_feats = self.agent_encoder(E.as_tensor(agents))            # (B, A, d)
        map_feats, key_mask = self.map_encoder(lanes, lane_attr,
                                               waypoint_mask, training)
        interaction, agent_scores = self.agent_agent(agent_feats, agent_mask,
                                                     training)           # (B, 1, d)
        target_feat = E.getitem(agent_feats, (slice(None), slice(0, 1), slice(None)))

        mode_feats, map_scores = self.agent_map(interaction, map_feats, key_mask,
                                                training)
        if cfg.multimodal_mode == "attention":
            spread = np.zeros((b, k, 1))
            env = E.concat([E.add(target_feat, spread), E.add(interaction, spread),
                            mode_feats], axis=-1)                        # (B, K, 3d)
            flat = self.traj_decoders[0](env, training)                  # (B, K, 2T)
            trajectories = E.reshape(flat, (b, k, cfg.future_steps, 2))
            logits = E.reshape(self.score_decoders[0](env, training), (b, k))
        else:
            env = E.concat([target_feat, interaction, mode_feats], axis=-1)  # (B, 1, 3d)
            flats = [dec(env, training) for dec in self.traj_decoders]
            trajectories = E.reshape(E.concat(flats, axis=1), (b, k, cfg.future_steps, 2))
            logits = E.reshape(E.concat([dec(env, training)
                                         for dec in self.score_decoders], axis=1), (b, k))
        probs = E.softmax_masked(logits)
        return {
            "trajectories": trajectories,
            "score_logits": logits,
            "probs": probs,
            "mode_features": mode_feats,
            "interaction": interaction,
            "target_feature": target_feat,
            "agent_scores": agent_scores,
            "map_scores": map_scores,
            "env": env,
        }

    def predict(self, batch) -> list:
        """Inference without dropout; one PredictionSet per scene."""
        out = self.forward(batch, training=False)
        trajs = out["trajectories"].numpy()
        probs = out["probs"].numpy()
        preds = []
        for i in range(trajs.shape[0]):
            pred = PredictionSet(trajs[i].astype(np.float64), probs[i].astype(np.float64))
            pred.validate()
            preds.append(pred)
        return preds
