"""Framing, sine-windowed STFT analysis/synthesis and magnitude spectrograms.

All analysis runs at 16 kHz with a 1024-point FFT, a 1024-sample sine window
and a 512-sample hop, which gives 513 frequency bins and 31.25 frames/s.
Frame ``t`` covers samples ``[t * hop, t * hop + window_len)``; the waveform
is never padded and a trailing partial window is dropped.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000


@dataclass
class AudioClip:
    """Mono ``(L,)`` or multichannel ``(C, L)`` audio at 16 kHz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        self.samples = np.asarray(self.samples)
        if self.samples.ndim not in (1, 2):
            raise ValueError("samples must be 1-D (mono) or 2-D (channels, samples)")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain NaN or Inf")

    @property
    def n_channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[0]

    def __len__(self) -> int:
        return self.samples.shape[-1]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 1024
    hop: int = 512
    fft_len: int = 1024

    def __post_init__(self):
        if self.window_len <= 0 or self.window_len % 2:
            raise ValueError("window_len must be a positive even integer")
        if self.hop * 2 != self.window_len:
            raise ValueError("hop must be half the window length (50% overlap)")
        if self.fft_len != self.window_len:
            raise ValueError("fft_len must equal window_len")

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    @property
    def frame_rate(self) -> float:
        return SAMPLE_RATE / self.hop

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_len:
            return 0
        return (n_samples - self.window_len) // self.hop + 1

    def frame_center(self, t) -> np.ndarray:
        """Center time in seconds of frame(s) ``t``."""
        return (np.asarray(t) * self.hop + self.window_len / 2) / SAMPLE_RATE


DEFAULT_STFT = StftConfig()


@dataclass
class ComplexSpectrogram:
    bins: np.ndarray  # (frames, n_bins) complex
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.bins.ndim != 2 or self.bins.shape[1] != self.config.n_bins:
            raise ValueError(f"expected (frames, {self.config.n_bins}) bins, got {self.bins.shape}")

    @property
    def n_frames(self) -> int:
        return self.bins.shape[0]


def sine_window(length: int) -> np.ndarray:
    """Sine window ``w[i] = sin(pi * (i + 0.5) / length)``.

    Two copies overlapped by half a window satisfy ``w[i]**2 + w[i + L/2]**2 == 1``,
    so the same window works for analysis and synthesis.
    """
    if length < 2 or length % 2:
        raise ValueError(f"window length must be even and >= 2, got {length}")
    return np.sin(np.pi * (np.arange(length) + 0.5) / length)


def frame_signal(x: np.ndarray, window_len: int, hop: int) -> np.ndarray:
    """Return a read-only ``(frames, window_len)`` view over the last axis of ``x``."""
    n = (x.shape[-1] - window_len) // hop + 1
    view = np.lib.stride_tricks.sliding_window_view(x, window_len, axis=-1)
    return view[..., : (n - 1) * hop + 1 : hop, :]


def stft(clip: AudioClip | np.ndarray, cfg: StftConfig = DEFAULT_STFT) -> ComplexSpectrogram:
    x = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip)
    if x.ndim != 1:
        raise ValueError("stft expects a mono signal")
    if x.shape[0] < cfg.window_len:
        raise ValueError(
            f"clip of {x.shape[0]} samples is shorter than one window ({cfg.window_len})"
        )
    frames = frame_signal(x.astype(np.float64, copy=False), cfg.window_len, cfg.hop)
    bins = np.fft.rfft(frames * sine_window(cfg.window_len), n=cfg.fft_len, axis=-1)
    return ComplexSpectrogram(bins, cfg)


def istft(spec: ComplexSpectrogram) -> AudioClip:
    """Sine-windowed overlap-add synthesis.

    Samples covered by two frames are reconstructed exactly; the first and
    last half-windows only see one frame and are attenuated by the window.
    """
    cfg = spec.config
    frames = np.fft.irfft(spec.bins, n=cfg.fft_len, axis=-1)[:, : cfg.window_len]
    frames = frames * sine_window(cfg.window_len)
    n_frames = frames.shape[0]
    out = np.zeros((n_frames - 1) * cfg.hop + cfg.window_len if n_frames else 0)
    for t in range(n_frames):
        out[t * cfg.hop : t * cfg.hop + cfg.window_len] += frames[t]
    return AudioClip(out)


def magnitude(spec: ComplexSpectrogram | np.ndarray) -> np.ndarray:
    bins = spec.bins if isinstance(spec, ComplexSpectrogram) else spec
    return np.abs(bins)


def magnitude_spectrogram(x: np.ndarray, cfg: StftConfig = DEFAULT_STFT) -> np.ndarray:
    return magnitude(stft(x, cfg))


# ---------------------------------------------------------------- WAV debug I/O


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write 16-bit little-endian PCM; multichannel clips are interleaved."""
    x = clip.samples if clip.samples.ndim == 2 else clip.samples[None, :]
    pcm = np.clip(np.round(x.T * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(x.shape[0])
        fh.setsampwidth(2)
        fh.setframerate(clip.sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path: str | Path) -> AudioClip:
    with wave.open(str(path), "rb") as fh:
        if fh.getsampwidth() != 2:
            raise ValueError("only 16-bit PCM WAV is supported")
        n_ch = fh.getnchannels()
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    x = x.reshape(-1, n_ch).T
    return AudioClip(x[0] if n_ch == 1 else x, rate)
