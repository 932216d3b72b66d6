"""First-order Ambisonics (N3D, channel order W, X, Y, Z) encoding and features."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dsp import DEFAULT_STFT, AudioClip, StftConfig, magnitude, stft

N_CHANNELS = 4
SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class Direction:
    """Azimuth in [-pi, pi), elevation in [-pi/2, pi/2], both radians."""

    azimuth: float
    elevation: float

    def __post_init__(self):
        az = (float(self.azimuth) + math.pi) % (2 * math.pi) - math.pi
        el = float(self.elevation)
        if not -math.pi / 2 - 1e-12 <= el <= math.pi / 2 + 1e-12:
            raise ValueError(f"elevation {el} outside [-pi/2, pi/2]")
        object.__setattr__(self, "azimuth", az)
        object.__setattr__(self, "elevation", min(max(el, -math.pi / 2), math.pi / 2))

    @classmethod
    def from_vector(cls, v) -> "Direction":
        x, y, z = (float(c) for c in v)
        r = math.sqrt(x * x + y * y + z * z)
        if r == 0.0:
            raise ValueError("zero vector has no direction")
        return cls(math.atan2(y, x), math.asin(max(-1.0, min(1.0, z / r))))


def steering_vector(direction: Direction) -> np.ndarray:
    """FOA gains ``[1, sqrt3 cos(az) cos(el), sqrt3 sin(az) cos(el), sqrt3 sin(el)]``."""
    return steering_vectors(np.array([direction.azimuth]), np.array([direction.elevation]))[0]


def steering_vectors(azimuth, elevation) -> np.ndarray:
    """Vectorized gains, shape ``(n, 4)``."""
    az = np.asarray(azimuth, dtype=np.float64)
    el = np.asarray(elevation, dtype=np.float64)
    cos_el = np.cos(el)
    return np.stack(
        [
            np.ones_like(az),
            SQRT3 * np.cos(az) * cos_el,
            SQRT3 * np.sin(az) * cos_el,
            SQRT3 * np.sin(el),
        ],
        axis=-1,
    )


def steering_from_vectors(vectors: np.ndarray) -> np.ndarray:
    """Gains for direction vectors ``(n, 3)`` without going through angles.

    ``cos(az) cos(el) = x / r`` etc., which is also exact at the poles.
    """
    v = np.asarray(vectors, dtype=np.float64)
    r = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.concatenate([np.ones_like(r), SQRT3 * v / r], axis=-1)


def encode_plane_wave(clip: AudioClip, direction: Direction) -> AudioClip:
    if clip.samples.ndim != 1:
        raise ValueError("encode_plane_wave expects a mono clip")
    gains = steering_vector(direction)
    return AudioClip(gains[:, None] * clip.samples[None, :], clip.sample_rate)


@dataclass
class FeatureTensor:
    """Stacked FOA magnitudes, shape ``(N_t, F, I)`` with ``F = 513``, ``I = 4``."""

    data: np.ndarray
    config: StftConfig = DEFAULT_STFT

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != N_CHANNELS:
            raise ValueError(f"expected (N_t, F, {N_CHANNELS}) features, got {self.data.shape}")
        if self.data.shape[1] != self.config.n_bins:
            raise ValueError(f"expected {self.config.n_bins} frequency bins")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def frame_rate(self) -> float:
        return self.config.frame_rate


def features_from_foa(channels, cfg: StftConfig = DEFAULT_STFT) -> FeatureTensor:
    """Per-channel STFT magnitude stacked on the last axis.

    ``channels`` is a 4-channel :class:`AudioClip`, a ``(4, L)`` array or a
    sequence of four mono clips/arrays.
    """
    if isinstance(channels, AudioClip):
        chans = list(channels.samples)
    else:
        chans = [c.samples if isinstance(c, AudioClip) else np.asarray(c) for c in channels]
    if len(chans) != N_CHANNELS:
        raise ValueError(f"expected {N_CHANNELS} channels, got {len(chans)}")
    if len({c.shape for c in chans}) != 1:
        raise ValueError("FOA channels must have equal length")
    mags = [magnitude(stft(c, cfg)) for c in chans]
    return FeatureTensor(np.stack(mags, axis=-1), cfg)
