"""Command-line interface: gen-data, train, eval, predict, viz."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from mmtp import dataio as D
from mmtp import metrics as M
from mmtp.checkpoint import apply_parameters, load_checkpoint
from mmtp.errors import (CheckpointError, ConfigError, InvalidSceneError,
                         SceneParseError, SceneSchemaError)
from mmtp.model import TrajectoryPredictor
from mmtp.scene import denormalize_points
from mmtp.training import RunConfig, TrainingDiverged, train
from mmtp.viz import render_scene

_ERRORS = (CheckpointError, ConfigError, InvalidSceneError, SceneParseError,
           SceneSchemaError, TrainingDiverged, ValueError, OSError)


def _load_model(ckpt_path: str) -> tuple:
    doc, tensors = load_checkpoint(ckpt_path)
    config = RunConfig.from_dict(doc)
    model = TrajectoryPredictor(config.model_config(), seed=config.seed)
    apply_parameters(model, tensors)
    return model, config


def _predict_all(model, scenes, batch_size: int = 64):
    preds = []
    for start in range(0, len(scenes), batch_size):
        chunk = scenes[start:start + batch_size]
        preds.extend(model.predict(D.make_batch(chunk)))
    return preds


def cmd_gen_data(args) -> int:
    if args.preset not in D.PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}; choose from {sorted(D.PRESETS)}")
    preset = D.PRESETS[args.preset]
    if args.noise_std is not None:
        preset = D.ScenarioPreset(preset.kind, preset.speed, preset.curvature,
                                  preset.neighbor_count, args.noise_std)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        doc = D.generate_scene_dict(preset, args.seed + i)
        name = f"{doc['id']}.json"
        with open(os.path.join(args.out, name), "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
        if not args.quiet:
            print(name)
    return 0


def cmd_train(args) -> int:
    config = RunConfig.from_json_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.seed = args.seed
    data_dir = args.data or config.data_dir
    out_dir = args.out or config.out_dir
    if not data_dir:
        raise ConfigError("no data directory (use --data or set data_dir in the config)")
    scenes = D.load_dataset(data_dir)
    if not args.quiet:
        print(f"training on {len(scenes)} scenes from {data_dir}")
    train(scenes, config, out_dir=out_dir, quiet=args.quiet)
    if out_dir and not args.quiet:
        print(f"checkpoints and metrics.csv written to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    model, _ = _load_model(args.ckpt)
    scenes = D.load_dataset(args.data)
    pairs = []
    preds = _predict_all(model, scenes)
    for scene, pred in zip(scenes, preds):
        if scene.future is None:
            raise InvalidSceneError(f"scene {scene.id} has no ground-truth future to score")
        pairs.append((pred, scene.future))
    report = M.evaluate(pairs)
    if not args.quiet:
        print(report.to_table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    return 0


def cmd_predict(args) -> int:
    model, _ = _load_model(args.ckpt)
    scenes = D.load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    preds = _predict_all(model, scenes)
    for scene, pred in zip(scenes, preds):
        world = [denormalize_points(t, scene.frame).tolist() for t in pred.trajectories]
        doc = {"id": scene.id, "trajectories": world, "probs": pred.probs.tolist()}
        name = f"{scene.id}.pred.json"
        with open(os.path.join(args.out, name), "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
        if not args.quiet:
            print(name)
    return 0


def cmd_viz(args) -> int:
    model, _ = _load_model(args.ckpt)
    scene = D.load_scene(args.scene)
    out = model.forward(D.make_batch([scene]))
    svg = render_scene(
        scene,
        trajectories=out["trajectories"].numpy()[0],
        probs=out["probs"].numpy()[0],
        attention=out["map_scores"].numpy()[0],
        min_score=args.min_score,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(svg)
    if not args.quiet:
        print(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmtp",
                                     description="multi-modal trajectory prediction toolkit")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write synthetic scene files")
    gen.add_argument("--preset", required=True)
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--seed", dest="seed", type=int, default=0)
    gen.add_argument("--noise-std", type=float, default=None)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen_data)

    tr = sub.add_parser("train", help="train a model on a scene directory")
    tr.add_argument("--config", default=None, help="RunConfig JSON file")
    tr.add_argument("--data", default=None)
    tr.add_argument("--out", default=None)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="compute metrics for a checkpoint")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", default=None, help="optional JSON report path")
    ev.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="write world-frame prediction files")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    vz = sub.add_parser("viz", help="render per-mode attention to an SVG")
    vz.add_argument("--ckpt", required=True)
    vz.add_argument("--scene", required=True)
    vz.add_argument("--out", required=True)
    vz.add_argument("--min-score", type=float, default=0.01)
    vz.set_defaults(func=cmd_viz)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
