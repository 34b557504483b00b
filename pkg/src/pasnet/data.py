"""Solver-labelled datasets, their on-disk format, and evaluation metrics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import SystemConfig, channel_gains
from .solver import Method, solve

log = logging.getLogger(__name__)

FORMAT_NAME = "pasnet-dataset"
FORMAT_VERSION = 1


def instance_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one instance; independent of generation order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


def sample_user(config: SystemConfig, seed: int, index: int) -> np.ndarray:
    rng = instance_rng(seed, index)
    L = config.region_half_side
    x, y = rng.uniform(-L, L, size=2)
    z = rng.uniform(0.0, 1.0)
    return np.array([x, y, z])


@dataclass
class InstanceRecord:
    user: tuple
    magnitude: tuple
    phase: tuple
    optimal_activation: tuple  # of 0/1
    optimal_snr: float
    optimal_rate: float
    config_hash: str
    seed_path: tuple  # (dataset seed, instance index)

    @property
    def gains(self) -> np.ndarray:
        return np.asarray(self.magnitude) * np.exp(1j * np.asarray(self.phase))


class Dataset:
    """Column-wise view of a list of instance records sharing one config."""

    def __init__(self, config: SystemConfig, seed: int, records: list[InstanceRecord]):
        self.config = config
        self.seed = seed
        self.records = list(records)
        n = config.n_antennas
        m = len(self.records)
        self.users = np.array([r.user for r in self.records], dtype=float).reshape(m, 3)
        mag = np.array([r.magnitude for r in self.records], dtype=float).reshape(m, n)
        phase = np.array([r.phase for r in self.records], dtype=float).reshape(m, n)
        self.gains = mag * np.exp(1j * phase)
        self.labels = np.array([r.optimal_activation for r in self.records], dtype=bool).reshape(m, n)
        self.gamma_star = np.array([r.optimal_snr for r in self.records], dtype=float)
        self.rate_star = np.array([r.optimal_rate for r in self.records], dtype=float)

    def __len__(self):
        return len(self.records)

    @property
    def n_antennas(self) -> int:
        return self.config.n_antennas

    @property
    def config_hash(self) -> str:
        return self.config.digest()

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.config, self.seed, [self.records[i] for i in index])


def label_instance(config: SystemConfig, user, seed, index, method=Method.ANGLE_SWEEP):
    gains = channel_gains(config, np.asarray(user, dtype=float))
    mag = np.abs(gains)
    phase = np.angle(gains)
    phase = np.where(phase <= -np.pi, phase + 2 * np.pi, phase)
    # solve on the stored polar form so the label matches what a reader reconstructs
    stored = mag * np.exp(1j * phase)
    sol = solve(stored, method, rho=config.rho)
    return InstanceRecord(
        user=tuple(float(v) for v in user),
        magnitude=tuple(mag.tolist()),
        phase=tuple(phase.tolist()),
        optimal_activation=tuple(int(b) for b in sol.activation),
        optimal_snr=float(sol.snr),
        optimal_rate=float(sol.rate),
        config_hash=config.digest(),
        seed_path=(int(seed), int(index)),
    )


def generate_dataset(config: SystemConfig, count: int, seed: int,
                     method=Method.ANGLE_SWEEP, progress=None) -> Dataset:
    method = Method(method)
    if method is Method.BRUTE_FORCE and config.n_antennas > 25:
        raise ValueError("brute force labelling is limited to N <= 25")
    records = []
    for index in range(count):
        user = sample_user(config, seed, index)
        try:
            records.append(label_instance(config, user, seed, index, method))
        except Exception as exc:  # noqa: BLE001 - re-raised with the instance index
            raise RuntimeError(f"solver failed on instance {index}: {exc}") from exc
        if progress is not None:
            progress(index + 1, count)
    return Dataset(config, seed, records)


# ---------------------------------------------------------------------------
# serialisation: one JSON header line, then one JSON record per line


def dumps_dataset(ds: Dataset) -> str:
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": asdict(ds.config),
        "config_hash": ds.config_hash,
        "count": len(ds),
        "seed": ds.seed,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for r in ds.records:
        rec = asdict(r)
        rec["optimal_activation"] = "".join(str(b) for b in r.optimal_activation)
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + "\n"


def loads_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty dataset file")
    header = json.loads(lines[0])
    if header.get("format") != FORMAT_NAME or header.get("version") != FORMAT_VERSION:
        raise ValueError("not a dataset file of a supported version")
    config = SystemConfig(**header["config"])
    records = []
    for line in lines[1:]:
        if not line.strip():
            continue
        rec = json.loads(line)
        records.append(InstanceRecord(
            user=tuple(rec["user"]),
            magnitude=tuple(rec["magnitude"]),
            phase=tuple(rec["phase"]),
            optimal_activation=tuple(int(c) for c in rec["optimal_activation"]),
            optimal_snr=rec["optimal_snr"],
            optimal_rate=rec["optimal_rate"],
            config_hash=rec["config_hash"],
            seed_path=tuple(rec["seed_path"]),
        ))
    if len(records) != header["count"]:
        raise ValueError(f"header announces {header['count']} records, found {len(records)}")
    return Dataset(config, header["seed"], records)


def save_dataset(ds: Dataset, path):
    with open(path, "w") as fh:
        fh.write(dumps_dataset(ds))


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        return loads_dataset(fh.read())


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    snr_accuracy: float
    rate_accuracy: float
    bitwise_accuracy: float
    activation_ratio_model: float
    activation_ratio_optimal: float
    fallbacks: int = 0

    def as_dict(self):
        return asdict(self)


def threshold_activation(probs, threshold=0.5):
    """``p > threshold`` row-wise; an empty row falls back to its most probable antenna."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    bits = probs > threshold
    empty = ~bits.any(axis=1)
    if empty.any():
        rows = np.flatnonzero(empty)
        bits[rows, np.argmax(probs[rows], axis=1)] = True
    return bits, empty


def snr_of(gains, bits, rho):
    """Row-wise SNR of binary activations; rows must be non-empty."""
    bits = np.asarray(bits, dtype=bool)
    k = bits.sum(axis=-1)
    if np.any(k == 0):
        raise ValueError("empty activation: SNR is undefined")
    total = np.where(bits, gains, 0).sum(axis=-1)
    return rho * np.abs(total) ** 2 / k


def metrics_for(ds: Dataset, bits, fallbacks=0) -> Metrics:
    bits = np.asarray(bits, dtype=bool)
    if bits.shape != ds.labels.shape:
        raise ValueError(f"prediction shape {bits.shape} does not match dataset {ds.labels.shape}")
    if len(ds) == 0:
        return Metrics(math.nan, math.nan, math.nan, math.nan, math.nan, 0)
    gamma = snr_of(ds.gains, bits, ds.config.rho)
    rates = np.log2(1.0 + gamma)
    return Metrics(
        snr_accuracy=float(np.mean(gamma / ds.gamma_star)),
        rate_accuracy=float(np.mean(rates / ds.rate_star)),
        bitwise_accuracy=float(np.mean(bits == ds.labels)),
        activation_ratio_model=float(bits.mean()),
        activation_ratio_optimal=float(ds.labels.mean()),
        fallbacks=int(fallbacks),
    )


def evaluate_probs(ds: Dataset, probs, threshold=0.5) -> Metrics:
    probs = np.asarray(probs, dtype=float)
    if probs.shape != ds.labels.shape:
        raise ValueError(f"model output {probs.shape} does not match dataset {ds.labels.shape}")
    bits, empty = threshold_activation(probs, threshold)
    for i in np.flatnonzero(empty):
        log.debug("instance %d: empty prediction, activating the most probable antenna", i)
    return metrics_for(ds, bits, int(empty.sum()))


def evaluate(policy, ds: Dataset, threshold=0.5) -> Metrics:
    """``policy`` maps a (M, N) complex channel batch to (M, N) probabilities."""
    probs = policy(ds.gains) if len(ds) else np.zeros((0, ds.n_antennas))
    return evaluate_probs(ds, probs, threshold)

