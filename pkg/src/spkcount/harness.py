"""Position sweep: framewise accuracy as a function of where a frame sits in its window.

For position ``n`` every frame ``t`` of every recording is decoded from the
window ``[t - n, t - n + N_t)`` and read out at row ``n``. Frames for which
that window would leave the recording are skipped, never padded, so the
only padding in play is the conv stack's own.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .analysis import DEPTH, optimal_position
from .crnn import CrnnParams, forward
from .roomsim import N_CLASSES

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SweepConfig:
    n_frames: int = 30
    positions: tuple | None = None  # None means all of 0..N_t-1
    batch_size: int = 32

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.positions is not None:
            pos = tuple(int(p) for p in self.positions)
            if not pos or min(pos) < 0 or max(pos) >= self.n_frames:
                raise ValueError(f"positions must lie in [0, {self.n_frames})")
            object.__setattr__(self, "positions", pos)

    def position_list(self) -> tuple:
        return self.positions if self.positions is not None else tuple(range(self.n_frames))


@dataclass(frozen=True)
class SweepCurvePoint:
    n: int
    accuracy: float
    support: int  # evaluated frames
    skipped: int = 0
    correct: int = 0


@dataclass
class SweepResult:
    points: list
    n_frames: int
    kernel_size: int | None = None
    excluded_recordings: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([p.accuracy for p in self.points])

    @property
    def mean_accuracy(self) -> float:
        """Support-weighted mean over positions."""
        support = sum(p.support for p in self.points)
        return sum(p.correct for p in self.points) / support

    @property
    def mean_accuracy_unweighted(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def n_best(self) -> int:
        return self.points[int(np.argmax(self.accuracies))].n

    def accuracy_at(self, n: int) -> float:
        for p in self.points:
            if p.n == n:
                return p.accuracy
        raise KeyError(n)


def accuracy_and_confusion(preds, labels):
    """Framewise accuracy and the 6x6 (true x predicted) count matrix."""
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise ValueError("preds and labels differ in length")
    if preds.size == 0:
        raise ValueError("nothing to score")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return np.trace(cm) / cm.sum(), cm


def _as_predictor(model):
    if isinstance(model, CrnnParams):
        return lambda batch: forward(model, batch)
    if callable(model):
        return model
    raise TypeError("model must be CrnnParams or a callable returning (B, N_t, 6) scores")


def position_sweep(model, recordings, cfg: SweepConfig, kernel_size: int | None = None) -> SweepResult:
    """Accuracy per decoded position over a set of full-length recordings.

    ``model`` is a :class:`CrnnParams` or a callable mapping a batch of
    windows ``(B, N_t, F, I)`` to scores ``(B, N_t, 6)``. ``recordings`` is a
    sequence of ``(features (L, F, I), counts (L,))``.

    Every window start ``s`` in ``[0, L - N_t]`` is run once; row ``n`` of
    that output is the prediction for frame ``s + n`` at position ``n``. The
    window contents do not depend on ``n``, so this is the same as decoding
    each (frame, position) pair on its own.
    """
    predict = _as_predictor(model)
    n_t = cfg.n_frames
    positions = cfg.position_list()
    correct = np.zeros(n_t, dtype=np.int64)
    evaluated = np.zeros(n_t, dtype=np.int64)
    skipped = np.zeros(n_t, dtype=np.int64)
    excluded = 0
    for feats, counts in recordings:
        feats = getattr(feats, "data", feats)
        counts = np.asarray(getattr(counts, "counts", counts))
        length = feats.shape[0]
        if counts.shape[0] != length:
            raise ValueError("features and labels disagree on frame count")
        if length < n_t:
            excluded += 1
            skipped += length
            continue
        starts = np.arange(length - n_t + 1)
        windows = np.lib.stride_tricks.sliding_window_view(feats, n_t, axis=0)
        for lo in range(0, len(starts), cfg.batch_size):
            s = starts[lo : lo + cfg.batch_size]
            batch = np.ascontiguousarray(np.moveaxis(windows[s], -1, 1))
            preds = np.argmax(np.asarray(predict(batch)), axis=-1)  # (b, N_t)
            targets = counts[s[:, None] + np.arange(n_t)[None, :]]
            correct += np.sum(preds == targets, axis=0)
            evaluated += len(s)
        skipped += length - len(starts)
    if excluded:
        log.warning("%d recordings shorter than N_t=%d were excluded", excluded, n_t)
    if evaluated.sum() == 0:
        raise ValueError("no evaluable frames: every recording is shorter than N_t")
    points = [
        SweepCurvePoint(n, correct[n] / evaluated[n], int(evaluated[n]), int(skipped[n]), int(correct[n]))
        for n in positions
    ]
    return SweepResult(points, n_t, kernel_size, excluded, {"edge_policy": "skip"})


@dataclass(frozen=True)
class CurveSummary:
    head_rise: float  # best clean-region accuracy minus accuracy at n = 0
    tail_drop: float  # accuracy at n_opt minus accuracy at the last position
    n_best: int
    n_opt: int | None
    n_best_offset: int | None  # n_best - n_opt
    max_rise: float  # best accuracy anywhere minus accuracy at n = 0


def curve_features(result: SweepResult, kernel_size: int, depth: int = DEPTH) -> CurveSummary:
    acc = {p.n: p.accuracy for p in result.points}
    n_t = result.n_frames
    first, last = min(acc), max(acc)
    n_opt = optimal_position(n_t, kernel_size)
    head = depth * (kernel_size // 2)
    clean = [n for n in acc if n_opt is not None and head <= n <= n_opt]
    region = clean or list(acc)
    head_rise = max(acc[n] for n in region) - acc[first]
    tail_drop = acc[n_opt] - acc[last] if n_opt is not None and n_opt in acc else 0.0
    n_best = result.n_best
    return CurveSummary(
        head_rise=float(head_rise),
        tail_drop=float(tail_drop),
        n_best=n_best,
        n_opt=n_opt,
        n_best_offset=None if n_opt is None else n_best - n_opt,
        max_rise=float(max(acc.values()) - acc[first]),
    )
