"""Cross-attention Transformer layers.

Two flavors: standard multi-head attention (heads concatenated and
projected back to d_model) for agent-agent interaction, and the
multi-modal variant for agent-map attention, which returns each head's
output as an independent mode with no cross-head mixing anywhere.
"""

from __future__ import annotations

import math

import numpy as np

from mmtp import engine as E
from mmtp.layers import FeedForward, LayerNorm, Linear, merge_parameters


class MultiHeadAttention:
    """Scaled dot-product attention, h heads concatenated through one output map."""

    def __init__(self, d_model: int, n_heads: int, d_k: int, d_v: int,
                 dropout_rate: float, rng, name: str):
        self.n_heads = n_heads
        self.scale = 1.0 / math.sqrt(d_k)
        self.w_q = [Linear(d_model, d_k, rng, f"{name}.h{i}.w_q") for i in range(n_heads)]
        self.w_k = [Linear(d_model, d_k, rng, f"{name}.h{i}.w_k") for i in range(n_heads)]
        self.w_v = [Linear(d_model, d_v, rng, f"{name}.h{i}.w_v") for i in range(n_heads)]
        self.w_o = Linear(n_heads * d_v, d_model, rng, f"{name}.w_o")
        self.dropout_rate = dropout_rate

    def __call__(self, query, keys, key_mask, training: bool):
        """query (B,1,d), keys (B,N,d), key_mask (B,N) -> ((B,1,d), scores (B,h,N))."""
        mask = np.asarray(key_mask, dtype=bool)[:, None, :]
        heads = []
        scores = []
        for i in range(self.n_heads):
            q = self.w_q[i](query)
            k = self.w_k[i](keys)
            v = self.w_v[i](keys)
            logits = E.scale(E.matmul(q, E.swap_last(k)), self.scale)  # (B,1,N)
            probs = E.softmax_masked(logits, mask)
            heads.append(E.matmul(probs, v))                            # (B,1,d_v)
            scores.append(probs)
        fused = self.w_o(E.concat(heads, axis=-1))
        fused = E.dropout(fused, self.dropout_rate, training)
        return fused, E.concat(scores, axis=1)

    def parameters(self):
        return merge_parameters(*self.w_q, *self.w_k, *self.w_v, self.w_o)


class MultiModalAttention:
    """Per-head attention emitted separately: K modes of (B, d_v) each.

    No concatenation and no shared output projection, so the gradient of
    mode i is independent of every other head's weights. Heads get
    independent random init; identical init would freeze all modes equal.
    """

    def __init__(self, d_model: int, modes: int, d_k: int, dropout_rate: float,
                 rng, name: str):
        self.modes = modes
        self.scale = 1.0 / math.sqrt(d_k)
        self.w_q = [Linear(d_model, d_k, rng, f"{name}.m{i}.w_q") for i in range(modes)]
        self.w_k = [Linear(d_model, d_k, rng, f"{name}.m{i}.w_k") for i in range(modes)]
        self.w_v = [Linear(d_model, d_model, rng, f"{name}.m{i}.w_v") for i in range(modes)]
        self.dropout_rate = dropout_rate

    def __call__(self, query, keys, key_mask, training: bool):
        """query (B,1,d), keys (B,N,d) -> (modes (B,K,d), scores (B,K,N))."""
        mask = np.asarray(key_mask, dtype=bool)[:, None, :]
        outs = []
        scores = []
        for i in range(self.modes):
            q = self.w_q[i](query)
            k = self.w_k[i](keys)
            v = self.w_v[i](keys)
            logits = E.scale(E.matmul(q, E.swap_last(k)), self.scale)
            probs = E.softmax_masked(logits, mask)                     # (B,1,N)
            outs.append(E.dropout(E.matmul(probs, v), self.dropout_rate, training))
            scores.append(probs)
        return E.concat(outs, axis=1), E.concat(scores, axis=1)

    def parameters(self):
        return merge_parameters(*self.w_q, *self.w_k, *self.w_v)


class AgentAgentEncoder:
    """Transformer sublayer stack fusing the target with all agents (self-loop included)."""

    def __init__(self, d_model: int, n_heads: int, ffn_dim: int, dropout_rate: float,
                 rng, name: str = "agent_agent"):
        d_head = max(1, d_model // 4)
        self.attention = MultiHeadAttention(d_model, n_heads, d_head, d_head,
                                            dropout_rate, rng, f"{name}.mha")
        self.norm1 = LayerNorm(d_model, f"{name}.norm1")
        self.ffn = FeedForward(d_model, ffn_dim, dropout_rate, rng, f"{name}.ffn")
        self.norm2 = LayerNorm(d_model, f"{name}.norm2")

    def __call__(self, agent_features, agent_mask, training: bool):
        """agent_features (B,A,d), agent_mask (B,A) -> ((B,1,d), scores (B,h,A))."""
        query = E.getitem(agent_features, (slice(None), slice(0, 1), slice(None)))
        att, scores = self.attention(query, agent_features, agent_mask, training)
        x = self.norm1(E.add(query, att))
        x = self.norm2(E.add(x, self.ffn(x, training)))
        return x, scores

    def parameters(self):
        return merge_parameters(self.attention, self.norm1, self.ffn, self.norm2)


class AgentMapEncoder:
    """Multi-modal attention over map features with per-mode residual stack.

    The query (the interaction feature) is broadcast into each mode's
    residual stream; the feed-forward weights are shared across modes,
    so mode diversity comes only from the per-head projections.
    """

    def __init__(self, d_model: int, modes: int, ffn_dim: int, dropout_rate: float,
                 rng, name: str = "agent_map"):
        d_head = max(1, d_model // 4)
        self.attention = MultiModalAttention(d_model, modes, d_head, dropout_rate,
                                             rng, f"{name}.mma")
        self.norm1 = LayerNorm(d_model, f"{name}.norm1")
        self.ffn = FeedForward(d_model, ffn_dim, dropout_rate, rng, f"{name}.ffn")
        self.norm2 = LayerNorm(d_model, f"{name}.norm2")

    def __call__(self, interaction, map_features, map_mask, training: bool):
        """interaction (B,1,d), map_features (B,N,d) -> ((B,K,d), scores (B,K,N))."""
        modes, scores = self.attention(interaction, map_features, map_mask, training)
        x = self.norm1(E.add(modes, interaction))  # broadcast residual per mode
        x = self.norm2(E.add(x, self.ffn(x, training)))
        return x, scores

    def parameters(self):
        return merge_parameters(self.attention, self.norm1, self.ffn, self.norm2)


class FusedAgentMapEncoder:
    """Ablation variant: standard multi-head attention over the map (single output)."""

    def __init__(self, d_model: int, n_heads: int, ffn_dim: int, dropout_rate: float,
                 rng, name: str = "agent_map"):
        d_head = max(1, d_model // 4)
        self.attention = MultiHeadAttention(d_model, n_heads, d_head, d_head,
                                            dropout_rate, rng, f"{name}.mha")
        self.norm1 = LayerNorm(d_model, f"{name}.norm1")
        self.ffn = FeedForward(d_model, ffn_dim, dropout_rate, rng, f"{name}.ffn")
        self.norm2 = LayerNorm(d_model, f"{name}.norm2")

    def __call__(self, interaction, map_features, map_mask, training: bool):
        att, scores = self.attention(interaction, map_features, map_mask, training)
        x = self.norm1(E.add(interaction, att))
        x = self.norm2(E.add(x, self.ffn(x, training)))
        return x, scores

    def parameters(self):
        return merge_parameters(self.attention, self.norm1, self.ffn, self.norm2)
