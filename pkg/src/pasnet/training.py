"""Supervised training of activation policies on solver-labelled data."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import models
from .data import Dataset, evaluate_probs
from .models import LossConfig, ModelDims

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 5000
    batch_size: int = 1000
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: str = "bce"  # or "augmented"
    loss_config: LossConfig = field(default_factory=LossConfig)
    dims: ModelDims = field(default_factory=ModelDims)
    eval_every: int = 50
    eval_train_size: int = 1000
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.loss not in ("bce", "augmented"):
            raise ValueError(f"unknown loss mode {self.loss!r}")
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")

    def learning_rate(self, it: int) -> float:
        if self.iterations <= 1:
            return self.lr_start
        t = it / (self.iterations - 1)
        return self.lr_start + (self.lr_end - self.lr_start) * t


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if lr:
                p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


@dataclass
class Curves:
    iteration: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)


def _batch_loss(model, ds: Dataset, idx, cfg: TrainConfig, progress):
    feats = models.channel_features(ds.gains[idx]).astype(cfg.dtype)
    scores, probs = model(feats)
    if cfg.loss == "bce":
        return models.loss_bce(probs, ds.labels[idx])
    total, _ = models.loss_augmented(scores, ds.labels[idx], ds.gains[idx], ds.gamma_star[idx],
                                     ds.config.rho, cfg.loss_config, progress)
    return total


def model_accuracy(model, ds: Dataset) -> float:
    _, probs = models.predict(model, ds.gains)
    return evaluate_probs(ds, probs).snr_accuracy


def train(kind: str, train_set: Dataset, val_set: Dataset | None, cfg: TrainConfig,
          callback=None):
    """Train a fresh ``kind`` policy; returns ``(model, curves)``.

    Deterministic for a fixed ``cfg.seed``: initialisation and batch order both
    derive from it.
    """
    if val_set is not None and val_set.config_hash != train_set.config_hash:
        raise ValueError("training and validation sets were generated with different configs")
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    model = models.build_policy(kind, cfg.dims, seed=int(rng.integers(2 ** 31)))
    model.astype(np.dtype(cfg.dtype))
    opt = Adam(model.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps)
    curves = Curves()
    m = len(train_set)
    batch = min(cfg.batch_size, m)
    train_probe = train_set.subset(np.arange(min(cfg.eval_train_size, m)))

    def record(it, loss):
        curves.iteration.append(it)
        curves.train_loss.append(loss)
        curves.train_accuracy.append(model_accuracy(model, train_probe))
        curves.val_accuracy.append(model_accuracy(model, val_set) if val_set is not None
                                   and len(val_set) else math.nan)
        log.info("iter %d loss %.5f train acc %.4f val acc %.4f", it, loss,
                 curves.train_accuracy[-1], curves.val_accuracy[-1])
        if callback is not None:
            callback(it, curves)

    for it in range(cfg.iterations):
        idx = np.sort(rng.choice(m, size=batch, replace=False))
        progress = it / max(cfg.iterations - 1, 1)
        model.zero_grad()
        loss = _batch_loss(model, train_set, idx, cfg, progress)
        value = float(loss.item())
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss at iteration {it}")
        loss.backward()
        opt.step(cfg.learning_rate(it))
        if it % cfg.eval_every == 0 or it == cfg.iterations - 1:
            record(it, value)
    return model, curves
