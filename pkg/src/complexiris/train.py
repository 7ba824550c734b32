"""Triplet training loop with per-batch mining and the extended triplet loss."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import loss as L
from . import model as M
from .optim import DESK_SCHEDULE, NumericalError, OptimState, format_schedule, parse_schedule, sgd_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    steps_per_epoch: int = 2
    ids_per_batch: int = 6
    samples_per_id: int = 3
    triplets: int = 16
    mining: str = "hard"
    alpha: float = 0.2
    max_shift: int = 4
    momentum: float = 0.9
    clip_norm: float = 1.0
    schedule: tuple = DESK_SCHEDULE
    freeze_gabor: bool = False
    checkpoint_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.schedule, str):
            self.schedule = parse_schedule(self.schedule)
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ValueError("epochs and steps_per_epoch must be >= 1")
        if self.ids_per_batch < 2 or self.samples_per_id < 2:
            raise ValueError("batches need >= 2 identities with >= 2 samples each")
        if self.mining not in L.MINING:
            raise ValueError(f"unknown mining strategy {self.mining!r}")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={format_schedule(v) if f.name == 'schedule' else v}")
        return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    model: M.Model
    epoch_loss: list = field(default_factory=list)
    seconds: float = 0.0


def sample_batch(rng, labels, ids_per_batch, samples_per_id):
    """P identities x K samples (with replacement only when an identity
    has fewer than K samples)."""
    labels = np.asarray(labels)
    by_id = {}
    for i, lab in enumerate(labels):
        by_id.setdefault(int(lab), []).append(i)
    usable = sorted(k for k, v in by_id.items() if len(v) >= 2)
    if len(usable) < 2:
        raise ValueError("training needs at least two identities with two or more samples")
    chosen = rng.choice(usable, min(ids_per_batch, len(usable)), replace=False)
    idx = []
    for ident in chosen:
        pool = by_id[int(ident)]
        idx += list(rng.choice(pool, samples_per_id, replace=len(pool) < samples_per_id))
    return np.array(idx)


def train_step(model, state, strips, masks, labels, cfg: TrainConfig, epoch, rng):
    """One mined-triplet SGD step; returns the batch ETL."""
    out_h, out_w, _ = model.config.output_shape
    feats = model.forward_node(strips, train=True)
    if not (np.isfinite(feats.value.re).all() and np.isfinite(feats.value.im).all()):
        raise NumericalError(f"non-finite features at epoch {epoch}")
    fmask = np.stack([L.downsample_mask(m, out_h, out_w) for m in masks])
    dist = None
    if cfg.mining != "random":
        dist = L.pairwise_shift_distance(feats.value, fmask, cfg.max_shift)
    trip = L.mine_triplets(None, labels, cfg.mining, cfg.triplets, seed=int(rng.integers(2 ** 31)),
                           alpha=cfg.alpha, max_shift=cfg.max_shift, distances=dist)
    loss = L.etl_node(feats, fmask, [t.index for t in trip], cfg.alpha, cfg.max_shift)
    value = float(loss.value.re)
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss {value} at epoch {epoch}")
    ag.backward(loss)
    sgd_step(model.parameters(trainable_only=True), state, epoch)
    return value


def train(strips, masks, labels, model_cfg: M.ModelConfig, cfg: TrainConfig, out_dir=None,
          model: M.Model | None = None) -> TrainResult:
    """Train on N x 64 x 256 strips; writes loss.csv and checkpoints when
    ``out_dir`` is given."""
    model = M.build(model_cfg, cfg.seed) if model is None else model
    if cfg.freeze_gabor:
        model.gabor.weight.trainable = False
        model.gabor.weight.requires_grad = False
    rng = np.random.default_rng([cfg.seed, 1])
    state = OptimState(momentum=cfg.momentum, clip_norm=cfg.clip_norm, schedule=cfg.schedule)
    strips = np.asarray(strips)
    masks = np.asarray(masks, bool)
    labels = np.asarray(labels)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    res = TrainResult(model)
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        losses = []
        for _ in range(cfg.steps_per_epoch):
            idx = sample_batch(rng, labels, cfg.ids_per_batch, cfg.samples_per_id)
            x = strips[idx].astype(model.dtype)
            losses.append(train_step(model, state, x, masks[idx], labels[idx], cfg, epoch, rng))
        res.epoch_loss.append(float(np.mean(losses)))
        log.info("epoch %d  etl %.6f  grad_norm %.4f", epoch + 1, res.epoch_loss[-1], state.last_grad_norm)
        if out is not None:
            write_loss_csv(out / "loss.csv", res.epoch_loss)
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                M.save(model, out / f"ckpt_epoch{epoch + 1:03d}.cirn")
    if out is not None:
        M.save(model, out / "model.cirn")
    res.seconds = time.perf_counter() - t0
    return res


def write_loss_csv(path, epoch_loss):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_etl"])
        for i, v in enumerate(epoch_loss):
            w.writerow([i + 1, repr(float(v))])


def read_loss_csv(path):
    with open(path, newline="") as fh:
        return [float(r["mean_etl"]) for r in csv.DictReader(fh)]


def extract_features(model: M.Model, strips, masks, chunk=16):
    """Eval-mode features plus masks downsampled to feature resolution."""
    out_h, out_w, _ = model.config.output_shape
    feats = model.features(np.asarray(strips).astype(model.dtype), chunk)
    fmask = np.stack([L.downsample_mask(m, out_h, out_w) for m in masks])
    return feats, fmask
