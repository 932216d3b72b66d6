"""Desk-scale replication of the decoding-position curve.

About 45 minutes of synthetic scenes with up to 3 speakers, a narrowed
CRNN (same layout, fewer filters per conv) and a handful of epochs. Small
enough for one CPU in well under an hour per three seeds, large enough for
the curve to show its rise at the head and its dip in the padded tail.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .analysis import StackSpec, optimal_position, taint_mask
from .crnn import CrnnConfig, TrainConfig, TrainState, build, init_state, make_windows, train
from .dataset import make_split
from .harness import CurveSummary, SweepConfig, SweepResult, curve_features, position_sweep
from .roomsim import GeneratorConfig

log = logging.getLogger(__name__)

TOY_GENERATOR = GeneratorConfig(duration=20.0, max_speakers=3, min_activity=8.0)
TOY_CRNN = CrnnConfig(kernel_size=3, conv_channels=(16, 8, 32, 16), n_frames=30)
TOY_TRAIN = TrainConfig(lr=1e-3, batch_size=16, epochs=8)
TOY_SCENES = {"train": 108, "test": 27}
TOY_DATA_SEED = 0


def toy_data(master_seed: int = TOY_DATA_SEED, gen: GeneratorConfig = TOY_GENERATOR, sizes=None):
    """Render the train and test recordings as ``{split: [(features, counts), ...]}``."""
    sizes = sizes or TOY_SCENES
    return {
        split: [(feats, counts) for _, feats, counts in make_split(gen, master_seed, split, n)]
        for split, n in sizes.items()
    }


def windows(recordings, n_frames: int):
    items = [w for feats, counts in recordings for w in make_windows(feats, counts, n_frames)]
    return np.stack([f for f, _ in items]), np.stack([c for _, c in items])


@dataclass
class ToyRun:
    seed: int
    state: TrainState
    sweep: SweepResult
    summary: CurveSummary
    seconds: float

    def criteria(self) -> dict:
        """The three curve-shape checks: head rise, tail drop, best position in the clean region."""
        s, acc = self.summary, self.sweep
        n_t = acc.n_frames
        head = taint_mask(StackSpec.from_config(self.state.params.config), n_t).head
        return {
            "head_rise": acc.accuracies.max() - acc.accuracy_at(0) >= 0.03,
            "tail_drop": s.n_opt is not None and acc.accuracy_at(n_t - 1) < acc.accuracy_at(s.n_opt),
            "best_in_clean_region": s.n_opt is not None and head <= s.n_best <= s.n_opt,
        }


def toy_run(seed: int, data: dict, crnn: CrnnConfig = TOY_CRNN, tcfg: TrainConfig = TOY_TRAIN) -> ToyRun:
    """Train one model on the toy train split and sweep it over the test split."""
    t0 = time.time()
    x, y = windows(data["train"], crnn.n_frames)
    tcfg = TrainConfig(**{**tcfg.__dict__, "seed": seed})
    state = train(init_state(build(crnn, seed)), (x, y), tcfg)
    result = position_sweep(state.params, data["test"], SweepConfig(crnn.n_frames), crnn.kernel_size)
    summary = curve_features(result, crnn.kernel_size)
    assert summary.n_opt == optimal_position(crnn.n_frames, crnn.kernel_size)
    elapsed = time.time() - t0
    log.info("toy seed %d: %.1fs, n_best %d, curve %s", seed, elapsed, summary.n_best,
             " ".join(f"{a:.3f}" for a in result.accuracies))
    return ToyRun(seed, state, result, summary, elapsed)
