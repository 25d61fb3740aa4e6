"""Training loop: SGD with momentum, step LR schedule, metrics CSV, checkpoints."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import build_targets, resize_to_input, rotate_augment, NUM_ROTATIONS
from .loss import total_loss
from .model import STRIDE, GraspNet

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "epoch", "lr", "grasp_box", "angle", "obj_class", "graspability", "total", "objective")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    net: GraspNet
    history: list = field(default_factory=list)
    best_objective: float = math.inf
    best_step: int = -1


def prepare_scenes(scenes, image_size: int):
    return [resize_to_input(sc, image_size) for sc in scenes]


def _batch(scenes, cfg: RunConfig, rng, augment: bool):
    m = cfg.model
    if augment:
        scenes = [rotate_augment(sc, int(rng.integers(NUM_ROTATIONS))) for sc in scenes]
    images = np.stack([sc.image for sc in scenes])
    targets = [build_targets(sc, STRIDE, m.k_angle, m.k_obj) for sc in scenes]
    return images, targets


def train_step(net: GraspNet, opt: T.SGD, images, targets, cfg: RunConfig):
    t = cfg.train
    opt.zero_grad()
    # overflow surfaces as NumericError from the op checks, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"), T.Tape() as tape:
        gmap = net(images)
        lb = total_loss(gmap, targets, t.loss_weights, t.graspability_weight, t.pos_weight)
        objective = lb.objective
        tape.backward(objective)
    opt.step()
    return lb, objective.item()


def train(cfg: RunConfig, scenes, out_dir=None, callback=None) -> TrainResult:
    """Train a fresh GraspNet on ``scenes``; deterministic for a fixed ``cfg.train.seed``.

    When ``out_dir`` is given, writes ``metrics.csv``, ``best.ckpt`` (lowest
    training objective) and ``final.ckpt``. ``callback(row, net)`` runs after
    every step; returning True ends training early.
    """
    t = cfg.train
    if not scenes:
        raise TrainingError("no training scenes")
    scenes = prepare_scenes(scenes, cfg.model.encoder.image_size)
    rng = np.random.default_rng(t.seed)
    net = GraspNet(cfg.model, seed=t.seed)
    opt = T.SGD(net.params, lr=t.lr, momentum=t.momentum)
    result = TrainResult(net)
    out = Path(out_dir) if out_dir is not None else None
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "metrics.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(METRIC_FIELDS)
    meta = {"config_hash": cfg.model_hash(), "model_config": cfg.model_dict()}
    step = 0
    stop = False
    try:
        for epoch in range(t.epochs):
            opt.lr = t.lr_at(epoch)
            order = rng.permutation(len(scenes))
            for start in range(0, len(scenes), t.batch_size):
                if t.max_steps is not None and step >= t.max_steps:
                    break
                batch = [scenes[i] for i in order[start:start + t.batch_size]]
                images, targets = _batch(batch, cfg, rng, cfg.data.augment)
                try:
                    lb, obj = train_step(net, opt, images, targets, cfg)
                except T.NumericError as e:
                    raise TrainingError(f"numeric failure at step {step}: {e}") from None
                if not math.isfinite(obj):
                    raise TrainingError(f"non-finite loss at step {step}")
                vals = lb.as_floats()
                row = {"step": step, "epoch": epoch, "lr": opt.lr, **vals, "objective": obj}
                result.history.append(row)
                if writer is not None:
                    writer.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in METRIC_FIELDS])
                if obj < result.best_objective:
                    result.best_objective, result.best_step = obj, step
                    if out is not None:
                        save_checkpoint(out / "best.ckpt", net.params, extra={"step": step}, **meta)
                step += 1
                if callback is not None and callback(row, net):
                    stop = True
                    break
            if stop or (t.max_steps is not None and step >= t.max_steps):
                break
    finally:
        if fh is not None:
            fh.close()
    if out is not None:
        save_checkpoint(out / "final.ckpt", net.params, extra={"step": step}, **meta)
    log.info("trained %d steps, best objective %.6f at step %d", step, result.best_objective, result.best_step)
    return result
