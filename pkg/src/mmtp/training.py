"""Run configuration and the training loop."""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from mmtp import engine as E
from mmtp.checkpoint import save_checkpoint
from mmtp.dataio import iter_batches
from mmtp.errors import ConfigError
from mmtp.losses import total_loss
from mmtp.model import TrajectoryPredictor
from mmtp.scene import ModelConfig

CSV_HEADER = "epoch,step,traj_loss,score_loss,total,lr"


@dataclass
class RunConfig:
    """Flat training configuration; defaults follow the reference setup."""

    # network
    d_model: int = 256
    n_heads: int = 6
    modes: int = 6
    ffn_dim: int = 1024
    dropout_rate: float = 0.1
    map_mode: str = "waypoint"
    multimodal_mode: str = "attention"
    # optimization
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-4
    lr_decay_epochs: int = 20
    lr_decay_factor: float = 0.5
    alpha: float = 0.5
    clip_norm: float = 5.0
    max_steps: int | None = None
    # bookkeeping
    seed: int = 0
    save_every: int = 20
    data_dir: str | None = None
    out_dir: str | None = None

    def model_config(self) -> ModelConfig:
        return ModelConfig(d_model=self.d_model, n_heads=self.n_heads, modes=self.modes,
                           ffn_dim=self.ffn_dim, dropout_rate=self.dropout_rate,
                           map_mode=self.map_mode, multimodal_mode=self.multimodal_mode)

    def validate(self) -> None:
        self.model_config().validate()
        if self.epochs < 0 or self.batch_size <= 0:
            raise ConfigError("epochs must be >= 0 and batch_size positive")
        if self.lr <= 0 or self.clip_norm <= 0 or self.lr_decay_epochs <= 0:
            raise ConfigError("lr, clip_norm and lr_decay_epochs must be positive")
        if not 0 < self.lr_decay_factor <= 1:
            raise ConfigError("lr_decay_factor must be in (0, 1]")

    def learning_rate(self, epoch: int) -> float:
        """Stepwise decay: lr * factor^(epoch // interval)."""
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_epochs)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    @classmethod
    def from_json_file(cls, path: str) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as err:
                raise ConfigError(f"{path}: invalid JSON ({err.msg} at line {err.lineno})")
        return cls.from_dict(doc)


class TrainingDiverged(RuntimeError):
    pass


def train(scenes, config: RunConfig, out_dir: str | None = None, quiet: bool = True,
          log_hook=None):
    """Full training loop; deterministic given (scenes, config).

    Per step: forward with dropout, combined loss, backward, global-norm
    clipping, one Nadam update. Returns (model, csv rows). Checkpoints
    and the metrics CSV land in out_dir when given.
    """
    if not scenes:
        raise ValueError("training needs a nonempty dataset")
    config.validate()
    if any(s.future is None for s in scenes):
        raise ValueError("every training scene needs a ground-truth future")

    E.seed(config.seed)
    model = TrajectoryPredictor(config.model_config())
    params = model.parameters()
    optimizer = E.Nadam(params)
    order = list(params)
    rows = []
    step = 0
    out_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    def checkpoint_doc():
        return json.loads(config.to_json())

    for epoch in range(config.epochs):
        lr = config.learning_rate(epoch)
        for batch in iter_batches(scenes, config.batch_size, rng=E.generator()):
            step += 1
            model.zero_grad()
            with E.Tape() as tape:
                outputs = model.forward(batch, training=True)
                loss, parts = total_loss(outputs, batch.future, alpha=config.alpha)
                E.backward(tape, loss)
            if not math.isfinite(parts.total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {step}: "
                    f"traj={parts.traj_loss} score={parts.score_loss}")
            grads, _ = E.clip_global_norm([params[k].grad for k in order], config.clip_norm)
            optimizer.step(lr, grads=dict(zip(order, grads)))
            rows.append(f"{epoch},{step},{parts.traj_loss!r},{parts.score_loss!r},"
                        f"{parts.total!r},{lr!r}")
            if log_hook is not None:
                log_hook(epoch, step, parts, lr)
            if config.max_steps is not None and step >= config.max_steps:
                break
        if not quiet:
            print(f"epoch {epoch}: total={parts.total:.4f} traj={parts.traj_loss:.4f} "
                  f"score={parts.score_loss:.4f} lr={lr:g}")
        if out_dir is not None and config.save_every and (epoch + 1) % config.save_every == 0:
            save_checkpoint(os.path.join(out_dir, f"ckpt_epoch{epoch + 1}.mmtp"),
                            checkpoint_doc(), params)
        if config.max_steps is not None and step >= config.max_steps:
            break

    if out_dir is not None:
        out_path = os.path.join(out_dir, "ckpt_final.mmtp")
        save_checkpoint(out_path, checkpoint_doc(), params)
        with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
            fh.write(CSV_HEADER + "\n")
            fh.write("\n".join(rows) + ("\n" if rows else ""))
    return model, rows
