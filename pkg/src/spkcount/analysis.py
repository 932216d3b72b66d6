"""Temporal padding taint of the conv stack and the best decoding position.

With 'same' zero padding every conv layer of support ``K`` lets the void
frames beyond either sequence edge leak ``K // 2`` frames further in. After
the four layers of the counting network the first and last ``4 * (K // 2)``
frames reaching the LSTM have seen padding. The last clean position,
``N_t - 1 - 4 * (K // 2) = N_t - 2K + 1`` for odd ``K``, is where decoding
pays off best: late enough for the LSTM to have accumulated context, early
enough to avoid the padded tail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crnn import CrnnConfig, CrnnParams, conv_stack

DEPTH = 4  # conv layers in the counting network


@dataclass(frozen=True)
class StackSpec:
    """Layer descriptors: ``("conv", K)``, ``("pool",)`` or ``("recurrent",)``."""

    layers: tuple

    def __post_init__(self):
        for layer in self.layers:
            if layer[0] == "conv":
                if layer[1] < 1 or layer[1] % 2 == 0:
                    raise ValueError(f"conv support must be odd, got {layer[1]}")
            elif layer[0] not in ("pool", "recurrent"):
                raise ValueError(f"unknown layer kind {layer[0]!r}")

    @classmethod
    def from_config(cls, cfg: CrnnConfig) -> "StackSpec":
        layers = []
        for i in range(cfg.depth):
            layers.append(("conv", cfg.kernel_size))
            if cfg.pool_for(i):
                layers.append(("pool",))
        layers.append(("recurrent",))
        return cls(tuple(layers))

    @classmethod
    def uniform(cls, kernel_size: int, depth: int = DEPTH) -> "StackSpec":
        """The counting network's layout: pools after the 2nd and 4th conv."""
        layers = []
        for i in range(depth):
            layers.append(("conv", kernel_size))
            if i in (1, 3):
                layers.append(("pool",))
        return cls(tuple(layers) + (("recurrent",),))


@dataclass(frozen=True)
class TaintMask:
    """Which pre-LSTM frames depend on the time padding.

    ``head`` counts frames reached by the padding before the sequence and
    ``tail`` those reached by the padding after it. On short sequences the
    two regions overlap, so ``head + tail`` can exceed ``n_frames``.
    """

    head: int
    tail: int
    n_frames: int

    @property
    def per_frame(self) -> tuple:
        n = self.n_frames
        return tuple(i < self.head or i >= n - self.tail for i in range(n))

    @property
    def clean(self) -> tuple:
        return tuple(i for i, f in enumerate(self.per_frame) if not f)

    @classmethod
    def from_sides(cls, left, right) -> "TaintMask":
        """Build from per-frame flags of the leading and trailing padding."""
        left = np.asarray(left, dtype=bool)
        right = np.asarray(right, dtype=bool)
        if left.shape != right.shape or left.ndim != 1:
            raise ValueError("side flags must be 1-D and equally long")
        n = left.size
        head = int(np.argmin(left)) if not left.all() else n
        tail = int(np.argmin(right[::-1])) if not right.all() else n
        if left[head:].any() or right[: n - tail].any():
            raise ValueError("taint is not confined to the sequence edges")
        return cls(head, tail, n)


def _spread(stack: StackSpec, seed: np.ndarray) -> np.ndarray:
    """Push a per-frame flag vector through the conv layers up to the LSTM.

    ``seed`` has one extra entry per side standing for the padding; it is
    re-applied at every layer because each conv pads its own input.
    """
    tainted = np.zeros(seed.size - 2, dtype=bool)
    for layer in stack.layers:
        if layer[0] == "recurrent":
            break
        if layer[0] != "conv":
            continue
        r = layer[1] // 2
        if r == 0:
            continue
        ext = np.concatenate([np.full(r, seed[0]), tainted, np.full(r, seed[-1])])
        tainted = np.lib.stride_tricks.sliding_window_view(ext, 2 * r + 1).any(axis=1)
    return tainted


def taint_mask(stack: StackSpec, n_frames: int) -> TaintMask:
    """Propagate padding taint layer by layer, separately from each edge."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    blank = np.zeros(n_frames + 2, dtype=bool)
    left, right = blank.copy(), blank.copy()
    left[0] = right[-1] = True
    return TaintMask.from_sides(_spread(stack, left), _spread(stack, right))


def optimal_position(n_frames: int, kernel_size: int) -> int | None:
    """0-based last position untouched by tail padding, ``N_t - 2K + 1``.

    Returns ``None`` when ``N_t <= 2K - 1``, i.e. no position is clear of the tail.
    """
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError("kernel_size must be odd")
    if n_frames <= 2 * kernel_size - 1:
        return None
    return n_frames - 2 * kernel_size + 1


def overhead_frames(kernel_size: int, depth: int = DEPTH) -> int:
    """Future frames needed beyond the decoded one: ``depth * (K // 2)``."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError("kernel_size must be odd")
    return depth * (kernel_size // 2)


def empirical_taint(
    params: CrnnParams, n_frames: int, probes: int = 8, seed: int = 0, fill: float = 10.0
) -> TaintMask:
    """Measure taint by re-running the conv stack with a different time-pad fill.

    A frame is tainted from one side if its pre-LSTM vector changes (by more
    than 1e-9) for any probe when the void frames on that side hold ``fill``
    instead of zeros.
    """
    cfg = params.config
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, (probes, n_frames, cfg.n_freq, cfg.n_inputs))
    x = x / cfg.input_scale
    zero = conv_stack(params, x, 0.0).astype(np.float64)

    def changed(pad):
        other = conv_stack(params, x, pad).astype(np.float64)
        return (np.abs(zero - other) > 1e-9).any(axis=(0, 2))

    return TaintMask.from_sides(changed((fill, 0.0)), changed((0.0, fill)))
