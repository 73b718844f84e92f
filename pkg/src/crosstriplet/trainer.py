"""Optimisers and the minibatch training loop for label + cross-triplet loss."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import PairedDataset, one_hot_matrix
from .losses import DISTANCES, REDUCTIONS, total_loss_and_grad
from .model import DualParams, EncoderConfig, backward, forward, init_params, save_checkpoint
from .triplets import parse_strategy, resolve_combos

log = logging.getLogger(__name__)

HISTORY_HEADER = ("epoch", "label_loss", "cross_loss", "total", "active_frac", "seconds")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 512
    epochs: int = 100
    margin: float = 1.0
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    combo: str = "full"
    triplet_strategy: str = "all"
    shuffle_seed: int = 0
    eq3_literal: bool = False
    distance: str = "sqeuclidean"
    reduction: str = "mean"
    label_loss_weight: float = 1.0
    cross_loss_weight: float = 1.0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.label_loss_weight < 0 or self.cross_loss_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.distance not in DISTANCES:
            raise ValueError(f"unknown distance {self.distance!r}")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"unknown reduction {self.reduction!r}")
        resolve_combos(self.combo)
        parse_strategy(self.triplet_strategy)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def _check_shapes(params, grads):
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameter arrays but {len(grads)} gradients")
    for k, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"array {k}: parameter shape {np.shape(p)} vs gradient {np.shape(g)}")


def adam_update_(params, grads, state: AdamState, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place Adam update of ``params`` and ``state``."""
    _check_shapes(params, grads)
    _check_shapes(params, state.m)
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        denom = np.sqrt(v / bc2)
        denom += eps
        p -= lr * (m / bc1) / denom


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam step. Returns ``(new_params, new_state)``; inputs are untouched.

    m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2,
    theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    """
    new_params = [np.array(p, dtype=np.float64) for p in params]
    new_state = AdamState([m.copy() for m in state.m], [v.copy() for v in state.v], state.t)
    adam_update_(new_params, grads, new_state, lr, beta1, beta2, eps)
    return new_params, new_state


def sgd_step(params, grads, lr: float):
    _check_shapes(params, grads)
    return [p - lr * g for p, g in zip(params, grads)]


@dataclass
class EpochRecord:
    epoch: int
    label_loss: float
    cross_loss: float
    total: float
    active_frac: float
    seconds: float
    degenerate_batches: int = 0


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i) -> EpochRecord:
        return self.records[i]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path, wall_time: bool = True) -> None:
        """Write one row per epoch. With ``wall_time=False`` the seconds column is left
        empty so that identical runs produce identical files."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_HEADER)
            for r in self.records:
                w.writerow([r.epoch, repr(r.label_loss), repr(r.cross_loss), repr(r.total),
                            repr(r.active_frac), f"{r.seconds:.6f}" if wall_time else ""])

    def write_timing_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, f"{r.seconds:.6f}"])


def batch_loss_and_grads(params: DualParams, audio, visual, labels, onehot,
                         cfg: TrainConfig, activation: str = "relu"):
    """Forward both branches, evaluate the objective and backpropagate.

    Returns ``(LossBreakdown, gradient arrays in DualParams.arrays() order)``.
    """
    emb_a, cache_a = forward(params.audio, audio, activation)
    emb_v, cache_v = forward(params.visual, visual, activation)
    breakdown, g_a, g_v = total_loss_and_grad(
        emb_a, emb_v, labels, onehot,
        combos=cfg.combo, margin=cfg.margin, reduction=cfg.reduction, distance=cfg.distance,
        strategy=cfg.triplet_strategy, eq3_literal=cfg.eq3_literal,
        label_weight=cfg.label_loss_weight, cross_weight=cfg.cross_loss_weight,
    )
    grads = backward(params.audio, cache_a, g_a).arrays() + backward(params.visual, cache_v, g_v).arrays()
    return breakdown, grads


def train(
    ds_train: PairedDataset,
    enc_cfg: EncoderConfig,
    cfg: TrainConfig,
    eval_hook: Callable[[int, DualParams], None] | None = None,
    checkpoint_dir=None,
    params: DualParams | None = None,
):
    """Train both branches on ``ds_train``; returns ``(params, history)``.

    Each epoch reshuffles with a generator seeded once from ``cfg.shuffle_seed``
    and visits every row exactly once (the last batch may be short). The
    per-epoch record holds batch means of each loss component.
    """
    if enc_cfg.label_dim != ds_train.num_classes:
        raise ValueError(f"encoder label_dim {enc_cfg.label_dim} != dataset classes {ds_train.num_classes}")
    if (enc_cfg.audio_dim, enc_cfg.visual_dim) != (ds_train.audio_dim, ds_train.visual_dim):
        raise ValueError(
            f"encoder input dims ({enc_cfg.audio_dim}, {enc_cfg.visual_dim}) do not match dataset "
            f"({ds_train.audio_dim}, {ds_train.visual_dim})"
        )
    params = init_params(enc_cfg) if params is None else params.copy()
    history = TrainHistory()
    onehot = one_hot_matrix(ds_train.labels, ds_train.num_classes)
    rng = np.random.default_rng(cfg.shuffle_seed)
    adam = AdamState.zeros(params.arrays())
    n = len(ds_train)

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        sums = np.zeros(3)
        active = count = degenerate = batches = 0
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            breakdown, grads = batch_loss_and_grads(
                params, ds_train.audio[idx], ds_train.visual[idx], ds_train.labels[idx],
                onehot[idx], cfg, enc_cfg.activation,
            )
            if not math.isfinite(breakdown.total):
                raise NonFiniteLossError(epoch, b, breakdown.total)
            sums += (breakdown.label_loss, breakdown.cross_triplet_loss, breakdown.total)
            active += breakdown.active_triplet_count
            count += breakdown.triplet_count
            degenerate += breakdown.degenerate
            batches += 1
            # params is the loop's private copy, so it is updated in place.
            if cfg.optimizer == "adam":
                adam_update_(params.arrays(), grads, adam, cfg.lr,
                             cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            else:
                for p, g in zip(params.arrays(), grads):
                    p -= cfg.lr * g
        means = sums / max(batches, 1)
        rec = EpochRecord(epoch, float(means[0]), float(means[1]), float(means[2]),
                          active / count if count else 0.0, time.perf_counter() - t0, degenerate)
        history.records.append(rec)
        log.info("epoch %d: label %.5f cross %.5f total %.5f active %.3f",
                 epoch, rec.label_loss, rec.cross_loss, rec.total, rec.active_frac)
        if checkpoint_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"epoch{epoch:04d}.xtlc", enc_cfg, params)
        if eval_hook is not None:
            eval_hook(epoch, params.copy())
    return params, history

