"""``graspkit`` command line: synth, train, predict, eval, render.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import tensor as T
from .checkpoint import CheckpointError, check_compatible, load_checkpoint
from .config import ConfigError, RunConfig, load_config, save_config
from .data import DataError, read_scenes, resize_to_input, scale_rect, synth_scene, write_image, write_scenes
from .eval import evaluate
from .model import GraspNet
from .predfile import read_predictions, write_predictions
from .render import render
from .train import TrainingError, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("graspkit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _scene_seeds(seed: int, count: int):
    return [seed + i for i in range(count)]


def training_scenes(cfg: RunConfig):
    if cfg.data.train_scenes:
        return read_scenes(cfg.data.train_scenes, k_obj=cfg.model.k_obj)
    size = cfg.model.encoder.image_size
    return [synth_scene(s, cfg.data.synth_objects, canvas=size)
            for s in _scene_seeds(cfg.data.synth_seed, cfg.data.synth_count)]


def load_model(cfg: RunConfig, ckpt_path) -> GraspNet:
    header, arrays = load_checkpoint(ckpt_path)
    check_compatible(header, cfg.model_hash(), cfg.model_dict())
    try:
        return GraspNet.from_arrays(cfg.model, arrays)
    except ValueError as e:
        raise CheckpointError(f"{ckpt_path}: {e}") from None


def predict_scenes(net: GraspNet, cfg: RunConfig, scenes, batch_size: int = 8):
    """Run the detector on each scene and return ``(source_id, [GraspRect])`` in input coordinates."""
    size = cfg.model.encoder.image_size
    e = cfg.eval
    out = []
    for start in range(0, len(scenes), batch_size):
        chunk = scenes[start:start + batch_size]
        resized = [resize_to_input(sc, size) for sc in chunk]
        cands = net.predict(np.stack([sc.image for sc in resized]), e.score_threshold, e.nms_iou,
                            e.per_category_nms)
        for sc, cs in zip(chunk, cands):
            H, W = sc.size
            rects = [scale_rect(c.rect.moved(confidence=c.score), W / size, H / size) for c in cs]
            out.append((sc.source_id, rects))
    return out


def cmd_synth(args) -> int:
    out = Path(args.out)
    scenes = [synth_scene(s, args.objects, canvas=args.canvas) for s in _scene_seeds(args.seed, args.count)]
    write_scenes(out / "scenes.jsonl", scenes, image_dir=out / "images")
    print(f"wrote {len(scenes)} scenes to {out / 'scenes.jsonl'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    scenes = training_scenes(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    res = train(cfg, scenes, out_dir=out)
    print(f"trained {len(res.history)} steps; best objective {res.best_objective:.6f} at step {res.best_step}; "
          f"checkpoints in {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    net = load_model(cfg, args.weights)
    scenes = read_scenes(args.input, k_obj=cfg.model.k_obj)
    t0 = time.perf_counter()
    records = predict_scenes(net, cfg, scenes)
    dt = time.perf_counter() - t0
    write_predictions(args.output, records, {"config_hash": cfg.model_hash()})
    log.info("predicted %d scenes in %.2fs", len(scenes), dt)
    print(f"wrote {len(records)} predictions to {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    scenes = read_scenes(args.gt, load_images=False)
    _, preds = read_predictions(args.pred)
    gt_ids = [sc.source_id for sc in scenes]
    missing = sorted(set(gt_ids) - set(preds))
    extra = sorted(set(preds) - set(gt_ids))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing predictions for {', '.join(missing)}")
        if extra:
            parts.append(f"predictions for unknown scenes {', '.join(extra)}")
        raise DataError("; ".join(parts))
    report = evaluate([preds[i] for i in gt_ids], scenes, args.mode)
    print(report.format_table())
    out = Path(args.output) if args.output else Path(str(args.pred) + ".eval.json")
    out.write_text(report.to_json() + "\n")
    print(f"report written to {out}")
    return EXIT_OK


def cmd_render(args) -> int:
    scenes = read_scenes(args.scenes)
    if args.id is not None:
        scenes = [sc for sc in scenes if sc.source_id == args.id]
        if not scenes:
            raise DataError(f"no scene with source_id {args.id}")
    scene = scenes[0]
    if args.pred:
        _, preds = read_predictions(args.pred)
        if scene.source_id not in preds:
            raise DataError(f"no predictions for scene {scene.source_id}")
        grasps = preds[scene.source_id]
    elif args.gt:
        grasps = scene.grasps
    else:
        grasps = []
    heat = None
    k_angle = 18
    if args.weights:
        if not args.config:
            raise UsageError("render: --weights needs --config")
        cfg = load_config(args.config)
        net = load_model(cfg, args.weights)
        k_angle = cfg.model.k_angle
        size = cfg.model.encoder.image_size
        if scene.size != (size, size):
            raise DataError(f"heatmap needs a {size}x{size} image, scene is {scene.size[1]}x{scene.size[0]}")
        with T.no_grad():
            gmap = net(scene.image[None])
        heat = expit(gmap.data.data[0, -1])
    img = render(scene.image, grasps, args.color_by, heat, args.alpha, k_angle)
    try:
        write_image(args.output, img)
    except OSError as e:
        raise DataError(f"cannot write {args.output}: {e}") from None
    print(f"wrote {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="graspkit", description="Oriented grasp detection: train, predict, evaluate, render.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="generate synthetic scenes")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=16)
    s.add_argument("--objects", type=int, default=1)
    s.add_argument("--canvas", type=int, default=224)
    s.add_argument("-o", "--out", required=True, help="output directory")
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("train", help="train from a JSON config")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--out-dir", help="override paths.out_dir")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("predict", help="write predictions for a scene file")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("-w", "--weights", required=True)
    s.add_argument("-i", "--input", required=True)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(fn=cmd_predict)

    s = sub.add_parser("eval", help="score predictions against ground truth")
    s.add_argument("-g", "--gt", required=True)
    s.add_argument("-p", "--pred", required=True)
    s.add_argument("--mode", choices=("single", "multi"), default="single")
    s.add_argument("-o", "--output", help="JSON report path (default: <pred>.eval.json)")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("render", help="draw grasps and an optional graspability heatmap")
    s.add_argument("-s", "--scenes", required=True)
    s.add_argument("--id", help="source_id to draw (default: first scene)")
    src = s.add_mutually_exclusive_group()
    src.add_argument("-p", "--pred", help="draw grasps from this prediction file")
    src.add_argument("--gt", action="store_true", help="draw the ground-truth grasps")
    s.add_argument("-c", "--config")
    s.add_argument("-w", "--weights", help="checkpoint for the heatmap overlay")
    s.add_argument("--color-by", choices=("angle", "category"), default="angle")
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("-o", "--output", required=True, help=".png or .ppm")
    s.set_defaults(fn=cmd_render)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ConfigError, CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, T.NumericError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
