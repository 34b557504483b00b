"""Inference under user-location uncertainty via Monte Carlo position samples."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import models
from .data import Dataset, snr_of, threshold_activation
from .geometry import SystemConfig, UserPosition, channel_gains
from .solver import solve

HEIGHT_MARGIN = 0.01


@dataclass(frozen=True)
class UncertaintyConfig:
    sigma_p: float = 0.0
    n_samples: int = 32
    threshold: float = 0.5
    seed: int = 0
    planar: bool = False  # noise in x and y only

    def __post_init__(self):
        if not (math.isfinite(self.sigma_p) and self.sigma_p >= 0):
            raise ValueError(f"sigma_p must be finite and >= 0, got {self.sigma_p}")
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            raise ValueError(f"n_samples must be a positive integer, got {self.n_samples}")

    def with_sigma(self, sigma_p: float) -> "UncertaintyConfig":
        return UncertaintyConfig(sigma_p, self.n_samples, self.threshold, self.seed, self.planar)


def standard_draws(cfg: UncertaintyConfig, index: int = 0) -> np.ndarray:
    """Unit-variance draws for one instance, shape (M, 3); shared across sigma values."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, index])))
    eps = rng.standard_normal((cfg.n_samples, 3))
    if cfg.planar:
        eps[:, 2] = 0.0
    return eps


def sample_noisy_positions(user: UserPosition, cfg: UncertaintyConfig, config: SystemConfig,
                           index: int = 0) -> np.ndarray:
    """``M`` noisy copies of ``user`` as an (M, 3) array, heights kept below the waveguide."""
    noisy = user.as_array() + cfg.sigma_p * standard_draws(cfg, index)
    noisy[:, 2] = np.clip(noisy[:, 2], 0.0, config.antenna_height - HEIGHT_MARGIN)
    return noisy


def mean_activation_policy(prob_vectors, threshold: float = 0.5) -> np.ndarray:
    """Threshold the element-wise mean of ``M`` probability vectors (strictly above)."""
    try:
        probs = np.asarray(prob_vectors, dtype=float)
    except ValueError as exc:
        raise ValueError("probability vectors differ in length") from exc
    if probs.ndim == 1:
        probs = probs[None, :]
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ValueError("expected a non-empty (M, N) stack of probability vectors")
    bits, _ = threshold_activation(probs.mean(axis=0), threshold)
    return bits[0]


@dataclass
class RobustResult:
    sigmas: list = field(default_factory=list)
    model_accuracy: list = field(default_factory=list)
    baseline_accuracy: list = field(default_factory=list)
    model_activation_ratio: list = field(default_factory=list)
    baseline_activation_ratio: list = field(default_factory=list)


def _noisy_batch(ds: Dataset, cfg: UncertaintyConfig) -> np.ndarray:
    return np.stack([sample_noisy_positions(UserPosition(*u), cfg, ds.config, i)
                     for i, u in enumerate(ds.users)])


def robust_eval(model, ds: Dataset, sigma_grid, cfg: UncertaintyConfig | None = None,
                batch_size: int = 1000) -> RobustResult:
    """Accuracy and activation ratio of the mean activation policy versus ``sigma_p``.

    Decisions made from noisy positions are scored at the true channel against
    the stored optimum. The baseline solves exactly on the first noisy draw.
    """
    cfg = cfg or UncertaintyConfig()
    res = RobustResult()
    rho = ds.config.rho
    m, n = len(ds), ds.n_antennas
    for sigma in sigma_grid:
        c = cfg.with_sigma(float(sigma))
        noisy = _noisy_batch(ds, c)  # (I, M, 3)
        gains = channel_gains(ds.config, noisy.reshape(-1, 3))
        _, probs = models.predict(model, gains, batch_size)
        probs = probs.reshape(m, c.n_samples, n)
        bits = np.stack([mean_activation_policy(p, c.threshold) for p in probs]) if m else \
            np.zeros((0, n), dtype=bool)
        base = np.stack([solve(g, rho=rho).activation
                         for g in gains.reshape(m, c.n_samples, n)[:, 0]]) if m else bits
        res.sigmas.append(float(sigma))
        for acc, ratio, b in ((res.model_accuracy, res.model_activation_ratio, bits),
                              (res.baseline_accuracy, res.baseline_activation_ratio, base)):
            acc.append(float(np.mean(snr_of(ds.gains, b, rho) / ds.gamma_star)) if m else math.nan)
            ratio.append(float(b.mean()) if m else math.nan)
    return res
