"""Convolutional-recurrent speaker-counting network: build, forward, train, predict.

Layer stack for the default configuration::

    conv(K, 64) relu  conv(K, 32) relu  pool_f(4)
    conv(K, 128) relu conv(K, 64) relu  pool_f(4)
    flatten (freq x channels) per frame -> LSTM(40) -> dense softmax(6)

Convolutions use 'same' zero padding on both axes so the time axis keeps
``N_t`` frames end to end and every frame gets its own class distribution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import neuralnet as nn
from .ambisonics import FeatureTensor

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass(frozen=True)
class CrnnConfig:
    kernel_size: int = 3
    conv_channels: tuple = (64, 32, 128, 64)
    pool_sizes: tuple = (4, 4)
    pool_after: tuple = (1, 3)  # conv indices followed by a frequency pool
    lstm_hidden: int = 40
    lstm_layers: int = 1
    n_classes: int = 6
    n_freq: int = 513
    n_inputs: int = 4
    n_frames: int = 30
    input_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "pool_sizes", tuple(int(p) for p in self.pool_sizes))
        object.__setattr__(self, "pool_after", tuple(int(p) for p in self.pool_after))
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.n_classes != 6:
            raise ValueError("n_classes is fixed at 6 (0 to 5 speakers)")
        if len(self.pool_sizes) != len(self.pool_after):
            raise ValueError("pool_sizes and pool_after must have equal length")
        if not self.conv_channels or min(self.conv_channels) < 1:
            raise ValueError("need at least one conv layer with positive width")
        if self.lstm_hidden < 1 or self.lstm_layers < 1 or self.n_frames < 1:
            raise ValueError("lstm_hidden, lstm_layers and n_frames must be positive")

    @property
    def depth(self) -> int:
        return len(self.conv_channels)

    def pool_for(self, i: int) -> int | None:
        for idx, p in zip(self.pool_after, self.pool_sizes):
            if idx == i:
                return p
        return None

    @property
    def pooled_freq(self) -> int:
        f = self.n_freq
        for i in range(self.depth):
            p = self.pool_for(i)
            if p:
                f = -(-f // p)
        return f

    @property
    def lstm_input(self) -> int:
        return self.pooled_freq * self.conv_channels[-1]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CrnnConfig":
        return cls(**d)


@dataclass
class CrnnParams:
    config: CrnnConfig
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    @property
    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "CrnnParams":
        return CrnnParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "CrnnParams":
        return CrnnParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})


def param_shapes(cfg: CrnnConfig) -> dict:
    k = cfg.kernel_size
    shapes = {}
    c_in = cfg.n_inputs
    for i, c_out in enumerate(cfg.conv_channels):
        shapes[f"conv{i}.w"] = (k, k, c_in, c_out)
        shapes[f"conv{i}.b"] = (c_out,)
        c_in = c_out
    d = cfg.lstm_input
    for j in range(cfg.lstm_layers):
        hid = cfg.lstm_hidden
        shapes[f"lstm{j}.wx"] = (d, 4 * hid)
        shapes[f"lstm{j}.wh"] = (hid, 4 * hid)
        shapes[f"lstm{j}.b"] = (4 * hid,)
        d = hid
    shapes["dense.w"] = (cfg.lstm_hidden, cfg.n_classes)
    shapes["dense.b"] = (cfg.n_classes,)
    return shapes


def build(cfg: CrnnConfig, seed: int = 0, dtype=np.float32) -> CrnnParams:
    """Seeded initialization: Glorot-uniform conv/dense, U(+-1/sqrt(H)) LSTM, forget bias 1."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        layer, kind = name.split(".")
        if kind == "b" and layer.startswith("lstm"):
            b = np.zeros(shape)
            hid = shape[0] // 4
            b[hid : 2 * hid] = 1.0
            tensors[name] = b
        elif kind == "b":
            tensors[name] = np.zeros(shape)
        elif layer.startswith("lstm"):
            lim = 1.0 / math.sqrt(cfg.lstm_hidden)
            tensors[name] = rng.uniform(-lim, lim, shape)
        else:
            if len(shape) == 4:
                fan_in = shape[0] * shape[1] * shape[2]
                fan_out = shape[0] * shape[1] * shape[3]
            else:
                fan_in, fan_out = shape
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-lim, lim, shape)
    return CrnnParams(cfg, {k: v.astype(dtype) for k, v in tensors.items()})


def _as_batch(params: CrnnParams, x):
    if isinstance(x, FeatureTensor):
        x = x.data
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    cfg = params.config
    if x.ndim != 4 or x.shape[2:] != (cfg.n_freq, cfg.n_inputs):
        raise ValueError(
            f"features must be (N_t, {cfg.n_freq}, {cfg.n_inputs}), got {x.shape[-3:]}"
        )
    dtype = params.tensors["dense.w"].dtype
    return x.astype(dtype, copy=False), single


def conv_stack(params: CrnnParams, x, time_pad_value=0.0, keep: bool = False):
    """Everything before the LSTM. Returns per-frame vectors ``(B, T, D)``.

    With ``keep`` also returns the per-layer cache needed for backprop.
    """
    cfg = params.config
    x, single = _as_batch(params, x)
    h = x * np.asarray(cfg.input_scale, dtype=x.dtype)
    caches = []
    for i in range(cfg.depth):
        z = nn.conv2d_forward(h, params[f"conv{i}.w"], params[f"conv{i}.b"], time_pad_value)
        a = nn.relu(z)
        pool = cfg.pool_for(i)
        rec = None
        if pool:
            a, rec = nn.maxpool_freq(a, pool)
        if keep:
            caches.append((h, z, rec))
        h = a
    b, t = h.shape[:2]
    seq = h.reshape(b, t, -1)
    if single and not keep:
        seq = seq[0]
    return (seq, caches) if keep else seq


def _forward_full(params: CrnnParams, x):
    cfg = params.config
    seq, conv_caches = conv_stack(params, x, keep=True)
    lstm_caches = []
    h = seq
    for j in range(cfg.lstm_layers):
        h, cache = nn.lstm_forward(h, params[f"lstm{j}.wx"], params[f"lstm{j}.wh"], params[f"lstm{j}.b"])
        lstm_caches.append(cache)
    return h, conv_caches, lstm_caches


def forward(params: CrnnParams, x) -> np.ndarray:
    """Per-frame class probabilities, ``(N_t, 6)`` (or ``(B, N_t, 6)`` for a batch)."""
    single = (x.data if isinstance(x, FeatureTensor) else np.asarray(x)).ndim == 3
    h, _, _ = _forward_full(params, x)
    probs = nn.softmax(h @ params["dense.w"] + params["dense.b"])
    return probs[0] if single else probs


def predict_counts(params_or_probs, x=None) -> np.ndarray:
    """Per-frame argmax count; ties resolve to the smaller count.

    Accepts either ``(params, features)`` or a probability array alone.
    """
    probs = params_or_probs if x is None else forward(params_or_probs, x)
    return np.argmax(np.asarray(probs), axis=-1)  # argmax keeps the first maximum


def loss_and_grads(params: CrnnParams, x, counts):
    """Mean per-frame cross-entropy over the batch and its gradient for every tensor."""
    cfg = params.config
    h, conv_caches, lstm_caches = _forward_full(params, x)
    counts = np.asarray(counts)
    if counts.ndim == 1:
        counts = counts[None]
    target = np.eye(cfg.n_classes, dtype=h.dtype)[counts]
    probs, loss, g = nn.dense_softmax_xent(h, target, params["dense.w"], params["dense.b"])
    grads = {"dense.w": g.params["w"], "dense.b": g.params["b"]}
    dh = g.dx
    for j in reversed(range(cfg.lstm_layers)):
        lg = nn.lstm_backward(lstm_caches[j], params[f"lstm{j}.wx"], params[f"lstm{j}.wh"], dh)
        for k, v in lg.params.items():
            grads[f"lstm{j}.{k}"] = v
        dh = lg.dx
    b, t = dh.shape[:2]
    da = dh.reshape(b, t, cfg.pooled_freq, cfg.conv_channels[-1])
    for i in reversed(range(cfg.depth)):
        h_in, z, rec = conv_caches[i]
        if rec is not None:
            da = nn.maxpool_freq_backward(rec, da)
        dz = nn.relu_backward(z, da)
        cg = nn.conv2d_backward(h_in, params[f"conv{i}.w"], dz, need_dx=i > 0)
        grads[f"conv{i}.w"] = cg.params["w"]
        grads[f"conv{i}.b"] = cg.params["b"]
        da = cg.dx
    return loss, probs, grads


# ------------------------------------------------------------------ training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("lr", "batch_size", "epochs", "clip_norm", "eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass
class TrainState:
    params: CrnnParams
    adam: nn.AdamState
    epoch: int = 0
    history: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)


def init_state(params: CrnnParams) -> TrainState:
    return TrainState(params, nn.adam_init(params.tensors))


def epoch_order(n_items: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n_items)


def train(params_or_state, dataset, tcfg: TrainConfig, callback=None) -> TrainState:
    """Minibatch Adam on mean per-frame cross-entropy.

    ``dataset`` is a pair of arrays ``(features (n, N_t, F, 4), counts (n, N_t))``
    or a sequence of ``(features, counts)`` items. Batch order per epoch is a
    pure function of ``(tcfg.seed, epoch)``, so a run resumed from a saved
    :class:`TrainState` matches an uninterrupted one bit for bit.
    ``history`` gains one ``(epoch, mean_loss, mean_frame_accuracy)`` per epoch.
    """
    state = params_or_state if isinstance(params_or_state, TrainState) else init_state(params_or_state)
    feats, counts = _stack_dataset(dataset)
    n = feats.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    if feats.shape[1] != state.params.config.n_frames:
        raise ValueError(
            f"items have {feats.shape[1]} frames, config expects {state.params.config.n_frames}"
        )
    params = state.params
    while state.epoch < tcfg.epochs:
        order = epoch_order(n, tcfg.seed, state.epoch)
        tot_loss = tot_correct = tot_frames = 0.0
        for bi, start in enumerate(range(0, n, tcfg.batch_size)):
            idx = np.sort(order[start : start + tcfg.batch_size])
            x, y = feats[idx], counts[idx]
            loss, probs, grads = loss_and_grads(params, x, y)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {state.epoch}, batch {bi}")
            grads, _ = nn.clip_by_global_norm(grads, tcfg.clip_norm)
            nn.adam_step(params.tensors, grads, state.adam, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.eps)
            frames = y.size
            tot_loss += loss * frames
            tot_correct += float(np.sum(np.argmax(probs, axis=-1) == y))
            tot_frames += frames
        row = (state.epoch + 1, tot_loss / tot_frames, tot_correct / tot_frames)
        state.history.append(row)
        state.epoch += 1
        log.info("epoch %d loss %.4f acc %.4f", *row)
        if callback is not None:
            callback(state)
    return state


def _stack_dataset(dataset):
    if isinstance(dataset, tuple) and len(dataset) == 2 and isinstance(dataset[0], np.ndarray):
        feats, counts = dataset
    else:
        items = list(dataset)
        if not items:
            return np.zeros((0, 0, 0, 0)), np.zeros((0, 0), dtype=np.int64)
        feats = np.stack([f.data if isinstance(f, FeatureTensor) else f for f, _ in items])
        counts = np.stack([getattr(c, "counts", c) for _, c in items])
    return feats, np.asarray(counts, dtype=np.int64)


def make_windows(features, counts, n_frames: int, stride: int | None = None):
    """Cut a recording into ``n_frames``-long training windows."""
    stride = stride or n_frames
    starts = range(0, features.shape[0] - n_frames + 1, stride)
    return [(features[s : s + n_frames], counts[s : s + n_frames]) for s in starts]

