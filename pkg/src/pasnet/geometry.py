"""Waveguide geometry, channel model, and received SNR for a pinching-antenna system.

A single dielectric waveguide runs along the x-axis at height ``H``. ``N``
pinching antennas sit at uniform spacing between ``-D`` and ``+D``; the feed
point is antenna 0. The user sits somewhere in the square ``[-L, L]^2`` at a
height ``z`` in ``[0, 1]``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

SPEED_OF_LIGHT = 299792458.0


@dataclass(frozen=True)
class SystemConfig:
    n_antennas: int = 50
    waveguide_half_length: float = 2.5
    region_half_side: float = 5.0
    antenna_height: float = 3.0
    carrier_frequency: float = 3e9
    effective_refractive_index: float = 1.4
    transmit_snr_db: float = 40.0

    def __post_init__(self):
        if int(self.n_antennas) != self.n_antennas or self.n_antennas < 2:
            raise ValueError(f"n_antennas must be an integer >= 2, got {self.n_antennas}")
        for name in ("waveguide_half_length", "region_half_side", "antenna_height",
                     "carrier_frequency"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        if not self.effective_refractive_index >= 1.0:
            raise ValueError("effective_refractive_index must be >= 1")
        if not math.isfinite(self.transmit_snr_db):
            raise ValueError("transmit_snr_db must be finite")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def guided_wavelength(self) -> float:
        return self.wavelength / self.effective_refractive_index

    @property
    def rho(self) -> float:
        """Transmit SNR as a linear power ratio."""
        return 10.0 ** (self.transmit_snr_db / 10.0)

    @property
    def spacing(self) -> float:
        return 2.0 * self.waveguide_half_length / (self.n_antennas - 1)

    def with_antennas(self, n: int) -> "SystemConfig":
        values = asdict(self)
        values["n_antennas"] = n
        return SystemConfig(**values)

    def digest(self) -> str:
        """Stable short hash of every field, used to tag datasets and checkpoints."""
        text = ";".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class UserPosition:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def in_region(self, config: SystemConfig) -> bool:
        L = config.region_half_side
        return -L <= self.x <= L and -L <= self.y <= L and 0.0 <= self.z <= 1.0


@dataclass(frozen=True)
class AntennaLayout:
    positions: np.ndarray  # (N, 3)

    @property
    def feed_point(self) -> np.ndarray:
        return self.positions[0]

    def __len__(self) -> int:
        return len(self.positions)


def canonical_phase(angle):
    """Wrap angles into (-pi, pi]."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped <= -np.pi, wrapped + 2.0 * np.pi, wrapped)


class ChannelVector:
    """Complex effective gains ``B_n`` of every antenna toward one user."""

    def __init__(self, gains):
        gains = np.asarray(gains, dtype=complex).reshape(-1)
        if gains.size == 0:
            raise ValueError("channel must contain at least one antenna")
        if not np.all(np.isfinite(gains)):
            raise ValueError("channel gains must be finite")
        self.gains = gains

    @classmethod
    def from_polar(cls, magnitude, phase) -> "ChannelVector":
        return cls(np.asarray(magnitude, float) * np.exp(1j * np.asarray(phase, float)))

    def __len__(self) -> int:
        return self.gains.size

    def __repr__(self) -> str:
        return f"ChannelVector(N={len(self)})"

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.gains)

    @property
    def phase(self) -> np.ndarray:
        return canonical_phase(np.angle(self.gains))

    def features(self) -> np.ndarray:
        """Per-antenna ``[|B_n|, angle(B_n)]`` rows, shape (N, 2)."""
        return np.stack([self.magnitude, self.phase], axis=1)


def antenna_positions(config: SystemConfig) -> AntennaLayout:
    n = config.n_antennas
    if n < 2:
        raise ValueError("at least two antennas are needed to define the spacing")
    D = config.waveguide_half_length
    x = -D + config.spacing * np.arange(n)
    pos = np.zeros((n, 3))
    pos[:, 0] = x
    pos[:, 2] = config.antenna_height
    return AntennaLayout(pos)


def channel_gains(config: SystemConfig, users) -> np.ndarray:
    """Vectorised channel: ``users`` is (M, 3) or (3,); returns (M, N) or (N,) complex."""
    users = np.asarray(users, dtype=float)
    single = users.ndim == 1
    users = np.atleast_2d(users)
    layout = antenna_positions(config).positions
    dist = np.linalg.norm(users[:, None, :] - layout[None, :, :], axis=-1)
    if np.any(dist == 0.0):
        raise ValueError("user coincides with an antenna; channel is undefined")
    along_guide = np.linalg.norm(layout - layout[0], axis=1)
    theta = 2.0 * np.pi / config.guided_wavelength * along_guide
    free_space = 2.0 * np.pi / config.wavelength * dist
    gains = np.exp(-1j * (free_space + theta[None, :])) / dist
    return gains[0] if single else gains


def compute_channel(config: SystemConfig, user: UserPosition) -> ChannelVector:
    return ChannelVector(channel_gains(config, user.as_array()))


def _bits(a) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype != bool and not np.all((a == 0) | (a == 1)):
        raise ValueError("activation entries must be 0 or 1")
    return a.astype(bool)


def coherent_power(channel: ChannelVector, a) -> float:
    """``|a^T B|^2`` for a binary activation."""
    bits = _bits(a)
    if bits.shape != channel.gains.shape:
        raise ValueError("activation length does not match the channel")
    return float(abs(channel.gains[bits].sum()) ** 2)


def evaluate_snr(config: SystemConfig, channel: ChannelVector, a) -> float:
    bits = _bits(a)
    n_active = int(bits.sum())
    if n_active == 0:
        raise ValueError("empty activation: SNR is undefined")
    return config.rho * coherent_power(channel, bits) / n_active


def achievable_rate(gamma: float) -> float:
    if gamma < 0:
        raise ValueError(f"SNR must be non-negative, got {gamma}")
    return math.log2(1.0 + gamma)


def build_q(channel: ChannelVector) -> np.ndarray:
    r, i = channel.gains.real, channel.gains.imag
    return np.outer(r, r) + np.outer(i, i)


def conventional_baseline_snr(config: SystemConfig, user: UserPosition, n=None) -> float:
    """Co-located N-element array at ``(0, 0, H)`` with ideal coherent combining."""
    n = config.n_antennas if n is None else n
    d2 = user.x ** 2 + user.y ** 2 + (config.antenna_height - user.z) ** 2
    return config.rho * n / d2


def to_db(x):
    return 10.0 * np.log10(x)


# ---------------------------------------------------------------------------
# flat key = value config files

_CONFIG_KEYS = {
    "n_antennas": ("n_antennas", int),
    "waveguide_half_length_m": ("waveguide_half_length", float),
    "region_half_side_m": ("region_half_side", float),
    "antenna_height_m": ("antenna_height", float),
    "carrier_frequency_hz": ("carrier_frequency", float),
    "effective_refractive_index": ("effective_refractive_index", float),
    "transmit_snr_db": ("transmit_snr_db", float),
}


def parse_config_text(text: str) -> tuple[SystemConfig, int]:
    """Parse ``key = value`` lines; returns the config and ``rng_seed`` (default 0)."""
    values, seed = {}, 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "rng_seed":
            seed = int(value)
        elif key in _CONFIG_KEYS:
            name, kind = _CONFIG_KEYS[key]
            values[name] = kind(float(value)) if kind is int else kind(value)
        else:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
    return SystemConfig(**values), seed


def load_config(path) -> tuple[SystemConfig, int]:
    with open(path) as fh:
        return parse_config_text(fh.read())


def format_config(config: SystemConfig, seed: int = 0) -> str:
    lines = [f"{key} = {getattr(config, name)!r}" for key, (name, _) in _CONFIG_KEYS.items()]
    lines.append(f"rng_seed = {seed}")
    return "\n".join(lines) + "\n"
