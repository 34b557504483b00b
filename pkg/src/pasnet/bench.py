"""Experiment drivers shared by the command line and the acceptance suite.

Datasets and trained checkpoints are cached on disk under a caller-chosen
directory. Cache keys are digests of everything that determines the result,
so a cache hit is byte-identical to a fresh run.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import baselines, models, robustness
from .data import (Dataset, generate_dataset, load_dataset, save_dataset, snr_of,
                   threshold_activation)
from .geometry import (SystemConfig, UserPosition, antenna_positions, channel_gains,
                       conventional_baseline_snr)
from .solver import Method, solve
from .training import Curves, TrainConfig, train

log = logging.getLogger(__name__)

TRAIN_SEED, VAL_SEED, TEST_SEED = 1, 2, 3


def digest(obj) -> str:
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# cached datasets and checkpoints


def cached_dataset(config: SystemConfig, count: int, seed: int, cache_dir) -> Dataset:
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, f"data-{config.digest()}-{count}-{seed}.jsonl")
    if os.path.exists(path):
        return load_dataset(path)
    ds = generate_dataset(config, count, seed)
    tmp = path + ".tmp"
    save_dataset(ds, tmp)
    os.replace(tmp, path)
    return ds


def dataset_key(ds: Dataset) -> dict:
    return {"config": ds.config_hash, "seed": ds.seed, "count": len(ds)}


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def cached_policy(kind: str, train_set: Dataset, val_set: Dataset, cfg: TrainConfig, cache_dir):
    """Train ``kind`` once per (datasets, config) and reuse the checkpoint afterwards.

    Returns ``(model, curves)``.
    """
    os.makedirs(cache_dir, exist_ok=True)
    key = digest({"kind": kind, "train": dataset_key(train_set), "val": dataset_key(val_set),
                  "cfg": train_config_dict(cfg)})
    ckpt = os.path.join(cache_dir, f"model-{kind}-{cfg.loss}-{key}.npz")
    curves_path = ckpt[:-4] + ".curves.json"
    if os.path.exists(ckpt) and os.path.exists(curves_path):
        with open(curves_path) as fh:
            curves = Curves(**json.load(fh))
        return models.load_checkpoint(ckpt), curves
    model, curves = train(kind, train_set, val_set, cfg)
    models.save_checkpoint(model, ckpt + ".tmp", extra={"key": key, "loss": cfg.loss})
    with open(curves_path, "w") as fh:
        json.dump(asdict(curves), fh)
    os.replace(ckpt + ".tmp", ckpt)
    return model, curves


def standard_splits(config: SystemConfig, cache_dir, train_count=5000, val_count=1000,
                    test_count=1000):
    return (cached_dataset(config, train_count, TRAIN_SEED, cache_dir),
            cached_dataset(config, val_count, VAL_SEED, cache_dir),
            cached_dataset(config, test_count, TEST_SEED, cache_dir))


# ---------------------------------------------------------------------------
# policies as (M, N) complex -> (M, N) probability maps


def model_policy(model):
    return lambda gains: models.predict(model, gains)[1]


def model_bits(model, ds: Dataset, threshold=0.5):
    return threshold_activation(models.predict(model, ds.gains)[1], threshold)[0]


def nearest_policy_bits(ds: Dataset, counts) -> np.ndarray:
    """Nearest-antenna activations with per-instance cardinality ``counts``."""
    layout = antenna_positions(ds.config)
    bits = np.zeros(ds.labels.shape, dtype=bool)
    for i, (user, k) in enumerate(zip(ds.users, counts)):
        bits[i] = baselines.nearest_antennas(layout, UserPosition(*user), int(k))
    return bits


# ---------------------------------------------------------------------------
# curves


@dataclass
class Curve:
    name: str
    x: list = field(default_factory=list)
    y: list = field(default_factory=list)


def topk_curves(model, ds: Dataset, fractions) -> list[Curve]:
    """SNR accuracy when keeping the ``round(f * N_a)`` best antennas.

    ``N_a`` is the model's own thresholded cardinality per instance. The model
    ranks by importance score; the exact reference ranks the optimal set by
    marginal SNR contribution and then the remaining antennas likewise.
    """
    scores, probs = models.predict(model, ds.gains)
    base = model_bits(model, ds).sum(axis=1)
    n = ds.n_antennas
    rho = ds.config.rho
    exact_rank = np.stack([marginal_ranking(g, lab) for g, lab in zip(ds.gains, ds.labels)])
    model_curve, exact_curve = Curve("model"), Curve("exact")
    for f in fractions:
        ks = np.clip(np.rint(f * base).astype(int), 1, n)
        mb = np.stack([baselines.top_k_refine(s, k) for s, k in zip(scores, ks)])
        eb = np.stack([baselines.top_k_refine(r, k) for r, k in zip(exact_rank, ks)])
        for curve, bits in ((model_curve, mb), (exact_curve, eb)):
            curve.x.append(float(f))
            curve.y.append(float(np.mean(snr_of(ds.gains, bits, rho) / ds.gamma_star)))
    return [model_curve, exact_curve]


def marginal_ranking(gains, optimal) -> np.ndarray:
    """Ranking scores: optimal antennas first, each group ordered by marginal contribution.

    The contribution of antenna n is ``Re(conj(S) B_n)`` with ``S`` the
    coherent sum of the optimal set, so aligned antennas rank higher.
    """
    optimal = np.asarray(optimal, dtype=bool)
    total = np.sum(np.where(optimal, gains, 0))
    contrib = np.real(np.conj(total) * gains)
    # scale into disjoint bands so every optimal antenna outranks every other one
    span = np.max(np.abs(contrib)) + 1.0
    return contrib / span + np.where(optimal, 2.0, 0.0)


def activation_ratio_curves(config: SystemConfig, n_grid, count, seed, model=None):
    exact, learned = Curve("exact"), Curve("model")
    for n in n_grid:
        ds = generate_dataset(config.with_antennas(int(n)), count, seed)
        exact.x.append(int(n))
        exact.y.append(float(ds.labels.mean()))
        if model is not None:
            learned.x.append(int(n))
            learned.y.append(float(model_bits(model, ds).mean()))
    return [exact] + ([learned] if model is not None else [])


def snr_vs_n_curves(config: SystemConfig, n_grid, count, seed, model=None):
    """Mean SNR (dB and linear) of the exact optimum, the co-located array, and the model."""
    names = ["exact", "conventional"] + (["model"] if model is not None else [])
    curves = {f"{k}_{unit}": Curve(f"{k}_{unit}") for k in names for unit in ("db", "linear")}
    for n in n_grid:
        cfg = config.with_antennas(int(n))
        ds = generate_dataset(cfg, count, seed)
        gammas = {"exact": ds.gamma_star,
                  "conventional": np.array([conventional_baseline_snr(cfg, UserPosition(*u))
                                            for u in ds.users])}
        if model is not None:
            gammas["model"] = snr_of(ds.gains, model_bits(model, ds), cfg.rho)
        for k, g in gammas.items():
            for unit, value in (("db", np.mean(10 * np.log10(g))), ("linear", np.mean(g))):
                curves[f"{k}_{unit}"].x.append(int(n))
                curves[f"{k}_{unit}"].y.append(float(value))
    return list(curves.values())


def noise_curves(model, ds: Dataset, sigma_grid, n_samples=32, seed=0, planar=False):
    res = robustness.robust_eval(model, ds, sigma_grid,
                                 robustness.UncertaintyConfig(0.0, n_samples, 0.5, seed, planar))
    return [Curve("model_accuracy", list(res.sigmas), list(res.model_accuracy)),
            Curve("baseline_accuracy", list(res.sigmas), list(res.baseline_accuracy)),
            Curve("model_activation_ratio", list(res.sigmas), list(res.model_activation_ratio)),
            Curve("baseline_activation_ratio", list(res.sigmas),
                  list(res.baseline_activation_ratio))]


def solve_user(config: SystemConfig, user, method=Method.ANGLE_SWEEP):
    gains = channel_gains(config, np.asarray(user, dtype=float))
    return solve(gains, method, rho=config.rho)
