"""Shoebox image-source FOA room impulse responses and synthetic counting mixtures."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import fftconvolve, sawtooth

from .ambisonics import N_CHANNELS, steering_from_vectors, steering_vectors
from .dsp import DEFAULT_STFT, SAMPLE_RATE, StftConfig

MAX_SPEAKERS = 5
N_CLASSES = MAX_SPEAKERS + 1
RAMP_SECONDS = 0.010


@dataclass(frozen=True)
class Room:
    dimensions: tuple
    reflection_coeff: float | tuple = 0.7  # scalar, or six walls (x0, x1, y0, y1, z0, z1)
    speed_of_sound: float = 343.0

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dimensions)
        if len(dims) != 3 or min(dims) <= 0:
            raise ValueError(f"room dimensions must be three positive lengths, got {dims}")
        object.__setattr__(self, "dimensions", dims)
        beta = self.reflection_coeff
        beta = (float(beta),) * 6 if np.isscalar(beta) else tuple(float(b) for b in beta)
        if len(beta) != 6 or not all(0.0 <= b < 1.0 for b in beta):
            raise ValueError("reflection coefficients must lie in [0, 1)")
        object.__setattr__(self, "reflection_coeff", beta if len(set(beta)) > 1 else beta[0])

    @property
    def betas(self) -> np.ndarray:
        beta = self.reflection_coeff
        return np.full(6, beta) if np.isscalar(beta) else np.asarray(beta)

    def check_inside(self, position) -> np.ndarray:
        p = np.asarray(position, dtype=np.float64)
        if p.shape != (3,) or np.any(p <= 0) or np.any(p >= self.dimensions):
            raise ValueError(f"position {p} is not strictly inside room {self.dimensions}")
        return p


@dataclass
class FoaSrir:
    channels: np.ndarray  # (4, length)
    sample_rate: int = SAMPLE_RATE

    @property
    def length(self) -> int:
        return self.channels.shape[1]


def image_sources(room: Room, src, max_order: int):
    """Enumerate image sources up to ``max_order`` reflections.

    Returns ``(positions (n, 3), amplitudes (n,), orders (n,))`` where the
    amplitude is the product of wall reflection coefficients along the path.
    Axis ``a`` image with lattice index ``m`` and parity ``q`` sits at
    ``(1 - 2q) * s_a + 2 m L_a`` and has bounced ``|m - q|`` times off the
    ``a = 0`` wall and ``|m|`` times off the ``a = L_a`` wall.
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    src = room.check_inside(src)
    dims = np.asarray(room.dimensions)
    betas = room.betas.reshape(3, 2)
    m = np.arange(-((max_order + 1) // 2), (max_order + 1) // 2 + 1)
    pos_axes, amp_axes, ord_axes = [], [], []
    for a in range(3):
        mm, qq = np.meshgrid(m, [0, 1], indexing="ij")
        mm, qq = mm.ravel(), qq.ravel()
        n_lo, n_hi = np.abs(mm - qq), np.abs(mm)
        keep = n_lo + n_hi <= max_order
        mm, qq, n_lo, n_hi = mm[keep], qq[keep], n_lo[keep], n_hi[keep]
        pos_axes.append((1 - 2 * qq) * src[a] + 2 * mm * dims[a])
        with np.errstate(divide="ignore"):
            amp_axes.append(np.power(betas[a, 0], n_lo) * np.power(betas[a, 1], n_hi))
        ord_axes.append(n_lo + n_hi)
    grids = [np.meshgrid(*arrs, indexing="ij") for arrs in (pos_axes, amp_axes, ord_axes)]
    order = sum(g.ravel() for g in grids[2])
    keep = order <= max_order
    positions = np.stack([g.ravel()[keep] for g in grids[0]], axis=1)
    amplitudes = np.prod([g.ravel()[keep] for g in grids[1]], axis=0)
    return positions, amplitudes, order[keep]


def image_source_srir(
    room: Room,
    src,
    mic,
    max_order: int = 6,
    fs: int = SAMPLE_RATE,
    length: int | None = None,
    max_length: int = 4 * SAMPLE_RATE,
) -> FoaSrir:
    """FOA spatial room impulse response by the image-source method.

    Each image contributes ``amplitude / distance`` at delay ``distance / c``,
    spread over the two nearest samples by linear interpolation and weighted by
    the FOA gains of its direction as seen from the microphone.
    """
    mic = room.check_inside(mic)
    src = room.check_inside(src)
    if np.allclose(src, mic):
        raise ValueError("source and microphone coincide")
    positions, amps, _ = image_sources(room, src, max_order)
    vec = positions - mic
    dist = np.linalg.norm(vec, axis=1)
    delay = dist * fs / room.speed_of_sound
    active = amps > 0
    needed = int(np.floor(delay[active].max())) + 2
    if length is None:
        length = needed
    if length > max_length:
        raise ValueError(
            f"SRIR needs {length} samples, above the cap of {max_length}; lower max_order"
        )
    vec, dist, delay, amps = vec[active], dist[active], delay[active], amps[active]
    inside = delay < length - 1
    vec, dist, delay, amps = vec[inside], dist[inside], delay[inside], amps[inside]
    gains = steering_from_vectors(vec) * (amps / dist)[:, None]  # (n, 4)
    idx = np.floor(delay).astype(np.int64)
    frac = delay - idx
    h = np.zeros((N_CHANNELS, length))
    for c in range(N_CHANNELS):
        np.add.at(h[c], idx, gains[:, c] * (1.0 - frac))
        np.add.at(h[c], idx + 1, gains[:, c] * frac)
    return FoaSrir(h, fs)


# ------------------------------------------------------------------ sources


def surrogate_speech(duration: float, seed, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Speech-like stand-in signal, RMS 0.1, deterministic in ``seed``.

    A sawtooth with pitch wandering in 80-300 Hz, gated by a syllable-rate
    (2-8 Hz) envelope, plus wideband noise 25 dB below the voiced part.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    t = np.arange(n) / fs

    # slow pitch wander around a per-talker base pitch
    base = rng.uniform(90.0, 250.0)
    n_knots = max(2, int(duration * 4) + 2)
    knots = base * np.exp(rng.normal(0.0, 0.12, n_knots))
    f0 = np.clip(np.interp(t, np.linspace(0, duration, n_knots), knots), 80.0, 300.0)
    carrier = sawtooth(2 * np.pi * np.cumsum(f0) / fs)

    rate_knots = rng.uniform(2.0, 8.0, n_knots)
    syl_rate = np.interp(t, np.linspace(0, duration, n_knots), rate_knots)
    syl_phase = 2 * np.pi * np.cumsum(syl_rate) / fs + rng.uniform(0, 2 * np.pi)
    envelope = np.maximum(np.sin(syl_phase), 0.0) ** 0.7

    voiced = carrier * envelope
    noise = rng.standard_normal(n) * envelope
    v_rms = np.sqrt(np.mean(voiced**2))
    n_rms = np.sqrt(np.mean(noise**2))
    if n_rms > 0 and v_rms > 0:
        voiced = voiced + noise * (v_rms / n_rms) * 10 ** (-25 / 20)
    rms = np.sqrt(np.mean(voiced**2))
    if rms == 0:
        return voiced
    return voiced * (0.1 / rms)


def diffuse_noise(duration: float, n_directions: int, seed, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Isotropic FOA noise from independent white plane waves; W-channel RMS 1."""
    if n_directions < 8:
        raise ValueError("n_directions must be >= 8")
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    az = rng.uniform(-np.pi, np.pi, n_directions)
    el = np.arcsin(rng.uniform(-1.0, 1.0, n_directions))
    gains = steering_vectors(az, el)  # (n_dir, 4)
    waves = rng.standard_normal((n_directions, n))
    out = gains.T @ waves
    return out / np.sqrt(np.mean(out[0] ** 2))


# ------------------------------------------------------------------ scenes


@dataclass(frozen=True)
class SpeakerSpec:
    source_pos: tuple
    onset: float
    offset: float
    signal_seed: int

    def __post_init__(self):
        if not 0 <= self.onset < self.offset:
            raise ValueError(f"need 0 <= onset < offset, got {self.onset}, {self.offset}")


@dataclass(frozen=True)
class MixtureSpec:
    room: Room
    mic_pos: tuple
    speakers: tuple
    duration: float
    noise_snr_db: float | None = 20.0  # None disables the noise
    master_seed: int = 0
    max_order: int = 6
    n_noise_directions: int = 32

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("scene duration must be positive")
        if len(self.speakers) > MAX_SPEAKERS:
            raise ValueError(f"at most {MAX_SPEAKERS} speakers")
        for s in self.speakers:
            if s.offset > self.duration + 1e-9:
                raise ValueError("speaker offset beyond scene duration")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["room"] = asdict(self.room)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureSpec":
        d = dict(d)
        room = d.pop("room")
        room["dimensions"] = tuple(room["dimensions"])
        if not np.isscalar(room["reflection_coeff"]):
            room["reflection_coeff"] = tuple(room["reflection_coeff"])
        speakers = tuple(
            SpeakerSpec(**{**s, "source_pos": tuple(s["source_pos"])}) for s in d.pop("speakers")
        )
        return cls(room=Room(**room), speakers=speakers, **{**d, "mic_pos": tuple(d["mic_pos"])})


@dataclass
class FrameLabels:
    counts: np.ndarray  # (N_t,) ints in [0, 5]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or np.any(self.counts < 0) or np.any(self.counts > MAX_SPEAKERS):
            raise ValueError("counts must be a 1-D sequence of integers in [0, 5]")

    @property
    def onehot(self) -> np.ndarray:
        return np.eye(N_CLASSES)[self.counts]

    def __len__(self) -> int:
        return len(self.counts)


def frame_labels(speakers, n_frames: int, cfg: StftConfig = DEFAULT_STFT) -> FrameLabels:
    """Active-speaker count at each frame's center time."""
    centers = cfg.frame_center(np.arange(n_frames))
    counts = np.zeros(n_frames, dtype=np.int64)
    for s in speakers:
        counts += (centers >= s.onset) & (centers < s.offset)
    return FrameLabels(counts)


def activity_gate(onset: float, offset: float, n: int, fs: int = SAMPLE_RATE) -> np.ndarray:
    """1 on ``[onset, offset)``, 0 elsewhere, with raised-cosine ramps inside the interval."""
    t = np.arange(n) / fs
    gate = ((t >= onset) & (t < offset)).astype(np.float64)
    ramp = min(RAMP_SECONDS, (offset - onset) / 2)
    if ramp > 0:
        rise = (t - onset) / ramp
        fall = (offset - t) / ramp
        shape = np.minimum(np.clip(rise, 0, 1), np.clip(fall, 0, 1))
        gate *= 0.5 - 0.5 * np.cos(np.pi * shape)
    return gate


def _derived_seed(master_seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([master_seed, *path]).generate_state(1, np.uint32)[0])


def synth_mixture(spec: MixtureSpec, cfg: StftConfig = DEFAULT_STFT):
    """Render a scene to FOA audio ``(4, L)`` and its per-frame labels."""
    n = int(round(spec.duration * SAMPLE_RATE))
    if n == 0:
        raise ValueError("zero-duration scene")
    mix = np.zeros((N_CHANNELS, n))
    active = np.zeros(n, dtype=bool)
    for spk in spec.speakers:
        dry = surrogate_speech(spec.duration, spk.signal_seed)[:n]
        gate = activity_gate(spk.onset, spk.offset, n)
        active |= gate > 0
        srir = image_source_srir(spec.room, spk.source_pos, spec.mic_pos, spec.max_order)
        for c in range(N_CHANNELS):
            mix[c] += fftconvolve(dry * gate, srir.channels[c])[:n]

    if spec.noise_snr_db is not None:
        noise = diffuse_noise(
            spec.duration, spec.n_noise_directions, noise_seed(spec.master_seed)
        )[:, :n]
        if active.any():
            speech_power = np.mean(mix[0, active] ** 2)
        else:
            speech_power = 0.1**2
        noise_power = np.mean(noise[0] ** 2)
        mix += noise * np.sqrt(speech_power / noise_power * 10 ** (-spec.noise_snr_db / 10))

    labels = frame_labels(spec.speakers, cfg.n_frames(n), cfg)
    return mix, labels


@dataclass(frozen=True)
class GeneratorConfig:
    duration: float = 20.0
    max_speakers: int = 5
    room_min: tuple = (3.0, 3.0, 2.5)
    room_max: tuple = (9.0, 7.0, 3.5)
    beta_range: tuple = (0.3, 0.8)
    snr_range: tuple = (10.0, 30.0)
    wall_margin: float = 0.3
    min_activity: float = 0.5
    max_order: int = 6
    n_noise_directions: int = 32

    def __post_init__(self):
        if not 0 <= self.max_speakers <= MAX_SPEAKERS:
            raise ValueError("max_speakers must lie in [0, 5]")
        if self.duration < self.min_activity:
            raise ValueError("duration shorter than the minimum speaker activity")
        if min(self.room_min) <= 2 * self.wall_margin:
            raise ValueError("room too small for the wall margin")
        if any(a > b for a, b in zip(self.room_min, self.room_max)):
            raise ValueError("room_min must not exceed room_max")


def speech_seed(scene_seed: int, k: int) -> int:
    """Talker ``k`` of a scene; distinct scene seeds never share talker seeds."""
    return int(scene_seed) * MAX_SPEAKERS + k


def noise_seed(scene_seed: int) -> int:
    return _derived_seed(scene_seed, 0xA015E)


def random_mixture_spec(gen: GeneratorConfig, seed: int) -> MixtureSpec:
    """Draw a scene; every random choice, talker signals included, follows from ``seed``."""
    rng = np.random.default_rng(seed)
    dims = tuple(rng.uniform(gen.room_min, gen.room_max))
    room = Room(dims, float(rng.uniform(*gen.beta_range)))

    def pose():
        lo = gen.wall_margin
        return tuple(float(v) for v in rng.uniform(lo, np.asarray(dims) - lo))

    mic = pose()
    n_spk = int(rng.integers(0, gen.max_speakers + 1))
    speakers = []
    for k in range(n_spk):
        src = pose()
        while np.linalg.norm(np.subtract(src, mic)) < 0.5:
            src = pose()
        onset = float(rng.uniform(0.0, gen.duration - gen.min_activity))
        offset = float(rng.uniform(onset + gen.min_activity, gen.duration))
        speakers.append(SpeakerSpec(src, onset, offset, speech_seed(seed, k)))
    return MixtureSpec(
        room=room,
        mic_pos=mic,
        speakers=tuple(speakers),
        duration=gen.duration,
        noise_snr_db=float(rng.uniform(*gen.snr_range)),
        master_seed=int(seed),
        max_order=gen.max_order,
        n_noise_directions=gen.n_noise_directions,
    )
