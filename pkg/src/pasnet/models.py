"""Activation policies (MLP, GNN+MLP, GNN+DisPN), their losses, and checkpoints.

All models consume per-antenna features ``[|B_n|, angle(B_n)]`` as a
``(batch, N, 2)`` array and return ``(scores, probs)``: pre-sigmoid scores and
activation probabilities, both ``(batch, N)`` tensors.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_VERSION = 1
PROB_CLAMP = 1e-12
SOFT_SNR_EPS = 1e-8

KINDS = ("mlp", "gnnmlp", "dispn")


def channel_features(gains) -> np.ndarray:
    """``[|B_n|, angle(B_n)]`` for a (..., N) complex array; angles in (-pi, pi]."""
    gains = np.asarray(gains)
    phase = np.angle(gains)
    phase = np.where(phase <= -np.pi, phase + 2 * np.pi, phase)
    return np.stack([np.abs(gains), phase], axis=-1)


# ---------------------------------------------------------------------------
# building blocks


class Module:
    def named_parameters(self):
        """Parameters as ``(name, Tensor)`` in a fixed declaration order."""
        out = []
        for key, value in self.__dict__.items():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((key, value))
            elif isinstance(value, Module):
                out.extend((f"{key}.{n}", p) for n, p in value.named_parameters())
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend((f"{key}.{i}.{n}", p) for n, p in item.named_parameters())
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out.append((f"{key}.{i}", item))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        return self

    @property
    def dtype(self):
        return self.parameters()[0].data.dtype


def _param(array):
    return Tensor(np.asarray(array, dtype=np.float64), requires_grad=True)


class Linear(Module):
    def __init__(self, fan_in, fan_out, rng, bias=True):
        bound = 1.0 / math.sqrt(fan_in)
        self.weight = _param(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        self.bias = _param(np.zeros(fan_out)) if bias else None

    def __call__(self, x):
        y = ad.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class MLP(Module):
    """Affine layers with ReLU between them and a linear last layer."""

    def __init__(self, sizes, rng):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x):
        for layer in self.layers[:-1]:
            x = ad.relu(layer(x))
        return self.layers[-1](x)


@dataclass(frozen=True)
class ModelDims:
    hidden: int = 128
    key_dim: int = 64
    gnn_layers: int = 1
    sharpening: float = 10.0
    fusion_depth: int = 2  # hidden layers in the fusion MLP

    def __post_init__(self):
        if self.gnn_layers < 1:
            raise ValueError("at least one message-passing layer is required")
        if not self.sharpening > 0:
            raise ValueError("sharpening coefficient must be positive")
        if self.key_dim < 1 or self.hidden < 1:
            raise ValueError("dimensions must be positive")


def _fusion(dims, rng):
    d = dims.hidden
    return MLP([2 * d] + [d] * dims.fusion_depth + [1], rng)


# ---------------------------------------------------------------------------
# policies


class MlpPolicy(Module):
    kind = "mlp"

    def __init__(self, dims: ModelDims, rng):
        self.dims = dims
        self.encoder = Linear(2, dims.hidden, rng)
        self.fusion = _fusion(dims, rng)

    def __call__(self, feats):
        x = ad.as_tensor(feats, self.dtype)
        h = ad.relu(self.encoder(x))  # (B, N, d)
        h_mean = ad.broadcast_to(h.mean(axis=1, keepdims=True), h.shape)
        logits = self.fusion(ad.concat([h, h_mean], axis=-1))
        scores = logits.reshape(logits.shape[:-1])
        return scores, ad.sigmoid(scores)


class GnnEncoder(Module):
    """Message passing over the user-antenna star graph.

    Node 0 is the user; antenna nodes start from their own edge feature and the
    user node from zeros. Messages depend on edge features only, so an antenna
    node hears just its single edge while the user node sums every edge.
    """

    def __init__(self, dims: ModelDims, rng):
        d = dims.hidden
        self.dims = dims
        self.input_projection = Linear(2, d, rng)
        self.messages = [MLP([2, d, d], rng) for _ in range(dims.gnn_layers)]
        self.layer_bias = [_param(np.zeros(d)) for _ in range(dims.gnn_layers)]
        self.readouts = [Linear(2 * d, d, rng) for _ in range(dims.gnn_layers + 1)]

    def __call__(self, feats):
        """Returns antenna embeddings (B, N, d), user embedding (B, d), graph embedding (B, d)."""
        e = ad.as_tensor(feats, self.dtype)
        batch = e.shape[0]
        ant = self.input_projection(e)
        user = ad.broadcast_to(self.input_projection.bias, (batch, self.dims.hidden))
        ant_total, user_total = ant, user
        graph = self._readout(0, ant)
        for layer, (message, bias) in enumerate(zip(self.messages, self.layer_bias), start=1):
            m = message(e)
            ant = ad.relu(m + bias)
            user = ad.relu(m.sum(axis=1) + bias)
            ant_total = ant_total + ant
            user_total = user_total + user
            graph = graph + self._readout(layer, ant)
        return ant_total, user_total, graph

    def _readout(self, layer, h):
        pooled = ad.concat([h.mean(axis=1), h.max(axis=1)], axis=-1)
        return self.readouts[layer](pooled)


class GnnMlpPolicy(Module):
    kind = "gnnmlp"

    def __init__(self, dims: ModelDims, rng):
        self.dims = dims
        self.encoder = GnnEncoder(dims, rng)
        self.fusion = _fusion(dims, rng)

    def __call__(self, feats):
        ant, _, graph = self.encoder(feats)
        b, n, d = ant.shape
        g = ad.broadcast_to(graph.reshape((b, 1, d)), (b, n, d))
        logits = self.fusion(ad.concat([ant, g], axis=-1))
        scores = logits.reshape((b, n))
        return scores, ad.sigmoid(scores)


class DisPnPolicy(Module):
    kind = "dispn"

    def __init__(self, dims: ModelDims, rng):
        d, dk = dims.hidden, dims.key_dim
        self.dims = dims
        self.encoder = GnnEncoder(dims, rng)
        self.w_query = Linear(2 * d, dk, rng, bias=False)
        self.w_key = Linear(d, dk, rng, bias=False)
        self.w_value = Linear(d, dk, rng, bias=False)
        self.w_policy_key = Linear(d, dk, rng, bias=False)

    def attend(self, feats):
        """Importance scores, probabilities and attention weights."""
        ant, user, graph = self.encoder(feats)
        b, n, _ = ant.shape
        dk = self.dims.key_dim
        scale = 1.0 / math.sqrt(dk)
        q = self.w_query(ad.concat([graph, user], axis=-1)).reshape((b, dk, 1))
        keys = self.w_key(ant)
        values = self.w_value(ant)
        weights = ad.sigmoid(ad.matmul(keys, q).reshape((b, n)) * scale)
        z_user = (values * weights.reshape((b, n, 1))).sum(axis=1).reshape((b, dk, 1))
        policy_keys = self.w_policy_key(ant)
        imp = ad.tanh(ad.matmul(policy_keys, z_user).reshape((b, n)) * scale) * self.dims.sharpening
        return imp, ad.sigmoid(imp), weights

    def __call__(self, feats):
        imp, probs, _ = self.attend(feats)
        return imp, probs


_POLICIES = {"mlp": MlpPolicy, "gnnmlp": GnnMlpPolicy, "dispn": DisPnPolicy}


def build_policy(kind: str, dims: ModelDims | None = None, seed: int = 0):
    if kind not in _POLICIES:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    return _POLICIES[kind](dims or ModelDims(), np.random.default_rng(seed))


def predict(model, gains, batch_size=1000):
    """Scores and probabilities as numpy arrays for a (M, N) complex channel batch."""
    gains = np.atleast_2d(gains)
    feats = channel_features(gains)
    scores, probs = [], []
    with ad.no_grad():
        for start in range(0, len(feats), batch_size):
            s, p = model(feats[start:start + batch_size])
            scores.append(s.data)
            probs.append(p.data)
    if not scores:
        n = gains.shape[-1]
        return np.zeros((0, n)), np.zeros((0, n))
    return np.concatenate(scores).astype(float), np.concatenate(probs).astype(float)


# ---------------------------------------------------------------------------
# losses


def _clamped_log(p):
    return ad.log(ad.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP))


def loss_bce(probs, labels):
    """Summed-over-antennas BCE, averaged over the batch. ``probs`` is (B, N) or (N,)."""
    probs = ad.as_tensor(probs)
    y = np.asarray(labels, dtype=probs.dtype)
    if y.shape != probs.shape:
        raise ValueError("probabilities and labels differ in shape")
    per = -(_clamped_log(probs) * y + _clamped_log(1.0 - probs) * (1.0 - y))
    per_instance = per.sum(axis=-1)
    return per_instance.mean() if per.ndim > 1 else per_instance


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.6
    lambda_wbce: tuple = (0.5, 0.3)
    lambda_snr: tuple = (2.0, 8.0)
    lambda_collapse: tuple = (100.0, 20.0)
    collapse_margin: float = 0.1

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        for name in ("lambda_wbce", "lambda_snr", "lambda_collapse"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo < 0 or hi < 0:
                raise ValueError(f"{name} schedule must be finite and non-negative")

    def coefficients(self, progress: float):
        """Linearly interpolated (lambda_wbce, lambda_snr, lambda_collapse) at progress in [0, 1]."""
        t = min(max(progress, 0.0), 1.0)
        return tuple(lo + (hi - lo) * t
                     for lo, hi in (self.lambda_wbce, self.lambda_snr, self.lambda_collapse))


def soft_snr(probs, gains, rho):
    """``rho |p^T B|^2 / (sum p + eps)`` with soft activations in place of bits."""
    probs = ad.as_tensor(probs)
    gains = np.asarray(gains)
    re = ad.mul(probs, gains.real.astype(probs.dtype)).sum(axis=-1)
    im = ad.mul(probs, gains.imag.astype(probs.dtype)).sum(axis=-1)
    return (re * re + im * im) * rho / (probs.sum(axis=-1) + SOFT_SNR_EPS)


def loss_augmented(scores, labels, gains, gamma_star, rho, cfg: LossConfig, progress=0.0):
    """Weighted BCE on importance scores plus SNR-tracking and collapse penalties.

    Returns ``(total, components)``; components holds the batch-mean value of
    each term and the coefficients used.
    """
    scores = ad.as_tensor(scores)
    gamma_star = np.atleast_1d(np.asarray(gamma_star, dtype=float))
    if np.any(gamma_star <= 0):
        raise ValueError("optimal SNR must be positive")
    y = np.asarray(labels, dtype=scores.dtype)
    probs = ad.sigmoid(scores)
    wbce = -(_clamped_log(probs) * (cfg.alpha * y) + _clamped_log(1.0 - probs) * (1.0 - y))
    wbce = wbce.mean(axis=-1)
    ratio = soft_snr(probs, gains, rho) / gamma_star.astype(scores.dtype).reshape(wbce.shape)
    l_snr = (1.0 - ratio) ** 2
    l_collapse = ad.relu(cfg.collapse_margin - ratio)
    c1, cg, cc = cfg.coefficients(progress)
    per = wbce * c1 + l_snr * cg + l_collapse * cc
    total = per.mean()
    components = {
        "wbce": float(np.mean(wbce.data)),
        "snr": float(np.mean(l_snr.data)),
        "collapse": float(np.mean(l_collapse.data)),
        "coefficients": (c1, cg, cc),
    }
    return total, components


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model, path, extra=None):
    names = [n for n, _ in model.named_parameters()]
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "dims": asdict(model.dims),
        "dtype": str(model.dtype),
        "parameters": names,
        "extra": extra or {},
    }
    arrays = {f"p{i:03d}": p.data for i, (_, p) in enumerate(model.named_parameters())}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), np.uint8),
                 **arrays)


def load_checkpoint(path):
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        model = build_policy(meta["kind"], ModelDims(**meta["dims"]))
        params = model.named_parameters()
        if [n for n, _ in params] != meta["parameters"]:
            raise ValueError("checkpoint parameter layout does not match the architecture")
        for i, (_, p) in enumerate(params):
            arr = data[f"p{i:03d}"]
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {i} has shape {arr.shape}, expected {p.data.shape}")
            p.data = arr.copy()
            p.grad = np.zeros_like(p.data)
    model.meta = meta
    return model
