"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
Criterion 7 trains three toy models and takes most of the suite's runtime.
"""

import math

import numpy as np
import pytest

from spkcount.ambisonics import Direction, steering_vector
from spkcount.analysis import StackSpec, empirical_taint, optimal_position, taint_mask
from spkcount.cli import main
from spkcount.crnn import CrnnConfig, TrainConfig, build, forward, loss_and_grads, train
from spkcount.dataset import read_split, write_split
from spkcount.dsp import istft, sine_window, stft
from spkcount.io import load_checkpoint, save_checkpoint
from spkcount.neuralnet import LSTM, Conv2D, DenseSoftmaxXent, MaxPoolFreq, ReLU, grad_check
from spkcount.roomsim import GeneratorConfig, Room, image_source_srir, image_sources

FS, C = 16000, 343.0
KS = (3, 5, 7)
NTS = (10, 20, 30, 40, 50)


def test_c1_optimal_position(verdict):
    bad = []
    for k in KS:
        stack = StackSpec.uniform(k)
        for n in NTS:
            if n <= 2 * k - 1:
                continue
            n_opt = optimal_position(n, k)
            if not (n_opt == n - 2 * k + 1 == n - 1 - taint_mask(stack, n).tail):
                bad.append((k, n))
    anchors = (optimal_position(30, 3) == 25 and all(optimal_position(n, 5) == n - 9 for n in NTS)
               and all(optimal_position(n, 7) == n - 13 for n in NTS if n > 13))
    ok = not bad and anchors
    verdict(1, ok, f"grid mismatches {bad}, anchors K=3/5/7 -> N_t-5/-9/-13 {'ok' if anchors else 'wrong'}")
    assert ok


def test_c2_taint_oracle(verdict):
    cells = mismatches = 0
    for k in (1,) + KS:
        for depth in (1, 2, 3, 4):
            cfg = CrnnConfig(
                kernel_size=k, conv_channels=(4,) * depth,
                pool_sizes=tuple(4 for i in (1, 3) if i < depth),
                pool_after=tuple(i for i in (1, 3) if i < depth),
            )
            params = build(cfg, seed=10 * k + depth, dtype=np.float64)
            stack = StackSpec.from_config(cfg)
            for n in NTS:
                cells += 1
                mismatches += empirical_taint(params, n, probes=8, seed=n) != taint_mask(stack, n)
    verdict(2, mismatches == 0, f"{cells} cells, {mismatches} analytic/empirical mismatches")
    assert mismatches == 0


def test_c3_look_ahead_bound(verdict):
    rng = np.random.default_rng(3)
    failures, n_t = [], 30
    for k in KS:
        params = build(CrnnConfig(kernel_size=k), seed=k)
        reach = 2 * (k - 1)
        for probe in range(20):
            x = rng.uniform(0, 2, (n_t, 513, 4)).astype(np.float32)
            y = forward(params, x)
            t = int(rng.integers(0, n_t - reach - 1))
            xp = x.copy()
            xp[t + reach + 1 :] = rng.uniform(0, 2, xp[t + reach + 1 :].shape)
            if not np.array_equal(forward(params, xp)[: t + 1], y[: t + 1]):
                failures.append((k, probe, "leak"))
            xq = x.copy()
            xq[t + reach] += 1.0
            if np.array_equal(forward(params, xq)[t], y[t]):
                failures.append((k, probe, "bound not tight"))
    verdict(3, not failures, f"K in {KS}, 20 probes each, failures {failures}")
    assert not failures


def layer_instances(seed):
    rng = np.random.default_rng(seed)
    pool_x = rng.permutation(60).reshape(3, 10, 2) * 0.1 + rng.uniform(0, 0.01, (3, 10, 2))
    relu_x = rng.standard_normal((3, 4, 2))
    relu_x[np.abs(relu_x) < 1e-2] = 0.5
    return {
        "conv2d": (Conv2D(rng.standard_normal((3, 3, 2, 3)), rng.standard_normal(3)),
                   rng.standard_normal((4, 5, 2))),
        "maxpool_freq": (MaxPoolFreq(3), pool_x),
        "relu": (ReLU(), relu_x),
        "lstm": (LSTM(rng.standard_normal((3, 16)) * 0.5, rng.standard_normal((4, 16)) * 0.5,
                      rng.standard_normal(16) * 0.5), rng.standard_normal((5, 3))),
        "dense_softmax_xent": (DenseSoftmaxXent(rng.standard_normal((8, 6)) * 0.3, rng.standard_normal(6),
                                                np.eye(6)[rng.integers(6)]), rng.standard_normal(8)),
    }


class _CorruptedConv(Conv2D):
    def backward(self, cache, upstream):
        g = super().backward(cache, upstream)
        g.dx = g.dx.copy()
        g.dx[0, 0, 0] += 1.0
        return g


def test_c4_gradients(verdict):
    worst = {}
    for seed in range(20):
        for name, (layer, x) in layer_instances(seed).items():
            worst[name] = max(worst.get(name, 0.0), grad_check(layer, x, seed=seed))
    rng = np.random.default_rng(0)
    mutant = grad_check(_CorruptedConv(rng.standard_normal((3, 3, 2, 3)), rng.standard_normal(3)),
                        rng.standard_normal((4, 5, 2)))
    ok = max(worst.values()) < 1e-6 and mutant > 1e-2
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(4, ok, f"max rel err over 20 seeds: {detail}; mutant {mutant:.2f}")
    assert ok


def test_c5_dsp(verdict):
    rng = np.random.default_rng(5)
    x = rng.standard_normal(32000)
    spec = stft(x)
    y = istft(spec).samples
    inner = slice(512, y.size - 512)
    rt = np.max(np.abs(y[inner] - x[inner])) / np.max(np.abs(x[inner]))
    w = sine_window(1024)
    weights = np.full(513, 2.0)
    weights[[0, -1]] = 1.0
    pars = max(
        abs(np.sum((x[t * 512 : t * 512 + 1024] * w) ** 2) - np.sum(weights * np.abs(spec.bins[t]) ** 2) / 1024)
        / np.sum((x[t * 512 : t * 512 + 1024] * w) ** 2)
        for t in range(spec.n_frames)
    )
    dirs = [(0, math.pi / 2), (1.0, -math.pi / 2)] + [
        (az, el) for az, el in zip(rng.uniform(-math.pi, math.pi, 14), rng.uniform(-1.5, 1.5, 14))
    ]
    steer = norm = 0.0
    for az, el in dirs:
        g = steering_vector(Direction(az, el))
        ref = np.array([1, math.sqrt(3) * math.cos(az) * math.cos(el),
                        math.sqrt(3) * math.sin(az) * math.cos(el), math.sqrt(3) * math.sin(el)])
        steer = max(steer, np.max(np.abs(g - ref)))
        norm = max(norm, abs(g[1] ** 2 + g[2] ** 2 + g[3] ** 2 - 3))
    ok = rt < 1e-10 and pars <= 1e-9 and steer <= 1e-12 and norm <= 1e-12
    verdict(5, ok, f"round trip {rt:.1e}, Parseval {pars:.1e}, steering {steer:.1e} over 16 dirs, "
                   f"norm identity {norm:.1e}")
    assert ok


def test_c6_room_simulation(verdict):
    rng = np.random.default_rng(6)
    worst_delay = 0.0
    for _ in range(100):
        dims = rng.uniform([3, 3, 2.5], [8, 7, 4])
        src, mic = rng.uniform(0.3, dims - 0.3), rng.uniform(0.3, dims - 0.3)
        h = image_source_srir(Room(tuple(dims), 0.7), src, mic, max_order=1).channels
        first = np.flatnonzero(h[0])[0]
        worst_delay = max(worst_delay, abs(first - np.linalg.norm(src - mic) * FS / C))

    dims, src, mic = (5.0, 4.0, 3.0), np.array([1.2, 2.9, 1.1]), np.array([3.7, 1.3, 1.6])
    brute = [src.copy()]
    for axis in range(3):
        for wall in (0.0, dims[axis]):
            p = src.copy()
            p[axis] = 2 * wall - src[axis]
            brute.append(p)
    got, _, _ = image_sources(Room(dims, 0.5), src, 1)
    arrivals = sorted(np.round(np.linalg.norm(got - mic, axis=1) * FS / C, 9))
    expected = sorted(np.round(np.linalg.norm(np.array(brute) - mic, axis=1) * FS / C, 9))
    same_set = arrivals == expected and sorted(map(tuple, np.round(got, 9))) == sorted(map(tuple, np.round(brute, 9)))

    anechoic = image_source_srir(Room(dims, 0.0), src, mic, max_order=0).channels
    beta0 = image_source_srir(Room(dims, 0.0), src, mic, max_order=6).channels
    equal = np.array_equal(anechoic, beta0)
    ok = worst_delay <= 1.0 and same_set and equal
    verdict(6, ok, f"worst direct delay error {worst_delay:.3f} samples, order-1 set "
                   f"{'matches' if same_set else 'differs'}, beta=0 {'equals' if equal else 'differs from'} anechoic")
    assert ok


@pytest.mark.slow
def test_c7_toy_curve_shape(verdict):
    from spkcount.toy import TOY_CRNN, TOY_TRAIN, toy_data, toy_run

    data = toy_data()
    runs = [toy_run(seed, data) for seed in (0, 1, 2)]
    lines = []
    passed = 0
    for run in runs:
        crit = run.criteria()
        passed += all(crit.values())
        s = run.summary
        lines.append(f"seed {run.seed}: rise {run.sweep.accuracies.max() - run.sweep.accuracy_at(0):+.3f} "
                     f"drop {s.tail_drop:+.3f} n_best {s.n_best} "
                     f"[{'/'.join(k for k, v in crit.items() if not v) or 'all ok'}]")
    ok = passed >= 2
    verdict(7, ok, f"{passed}/3 seeds pass (K={TOY_CRNN.kernel_size}, N_t={TOY_CRNN.n_frames}, "
                   f"{TOY_TRAIN.epochs} epochs); " + "; ".join(lines))
    assert ok


def test_c8_training_sanity(verdict, tmp_path):
    rng = np.random.default_rng(8)
    x = np.abs(rng.standard_normal((4, 30, 513, 4))).astype(np.float32)
    y = rng.integers(0, 6, (4, 30))
    loss0, _, _ = loss_and_grads(build(CrnnConfig(), seed=0), x, y)

    cfg = CrnnConfig(kernel_size=3, conv_channels=(8, 8, 16, 8), n_freq=33, n_frames=10)
    counts = rng.integers(0, 6, (8, 10))
    feats = np.abs(rng.standard_normal((8, 10, 33, 4))).astype(np.float32)
    feats[..., 0] += counts[:, :, None]
    fit = train(build(cfg, seed=0), (feats, counts), TrainConfig(epochs=200, batch_size=8, lr=3e-3))
    fit_acc = fit.history[-1][2]

    small = CrnnConfig(conv_channels=(4, 4, 4, 4), lstm_hidden=8, n_frames=10)
    data = (np.abs(rng.standard_normal((6, 10, 513, 4))).astype(np.float32), rng.integers(0, 6, (6, 10)))
    for name in ("a", "b"):
        save_checkpoint(tmp_path / f"{name}.cntw", train(build(small, seed=2), data, TrainConfig(epochs=2, batch_size=4)))
    same = (tmp_path / "a.cntw").read_bytes() == (tmp_path / "b.cntw").read_bytes()
    ok = abs(loss0 - math.log(6)) <= 0.2 and fit_acc >= 0.95 and same
    verdict(8, ok, f"untrained loss {loss0:.3f} (ln 6 = {math.log(6):.3f}), overfit accuracy {fit_acc:.3f}, "
                   f"same-seed checkpoints {'identical' if same else 'differ'}")
    assert ok


def test_c9_persistence(verdict, tmp_path):
    import json

    params = build(CrnnConfig(conv_channels=(4, 4, 4, 4), lstm_hidden=8, n_frames=10), seed=9)
    save_checkpoint(tmp_path / "p.cntw", params)
    back = load_checkpoint(tmp_path / "p.cntw").params
    ckpt_ok = all(back[k].tobytes() == params[k].tobytes() for k in params.tensors)

    gen = GeneratorConfig(duration=1.5, max_speakers=2, min_activity=0.3, max_order=2, n_noise_directions=8)
    manifest = write_split(tmp_path / "split", gen, 9, "test", 3, shard_size=2)
    items, _ = read_split(tmp_path / "split")
    from spkcount.dataset import make_split

    fresh = make_split(gen, 9, "test", 3)
    shard_ok = len(items) == 3 and all(
        f.tobytes() == g.astype(np.float32).tobytes() and np.array_equal(c, d)
        for (f, c), (_, g, d) in zip(items, fresh)
    ) and manifest["n_items"] == 3

    save_checkpoint(tmp_path / "m.cntw", params)
    sweep = ["sweep", "--checkpoint", str(tmp_path / "m.cntw"), "--data", str(tmp_path / "split"),
             "--n-frames", "10"]
    codes = [main(sweep + ["--out", str(tmp_path / o)]) for o in ("s1", "s2")]
    codes += [main(["report", "--sweeps", str(tmp_path / s), "--out", str(tmp_path / r)])
              for s, r in (("s1", "r1"), ("s2", "r2"))]
    names = [("s1", "s2", "sweep_k3_n10.csv"), ("s1", "s2", "summary.csv"),
             ("r1", "r2", "report.md"), ("r1", "r2", "report.csv")]
    rerun_ok = codes == [0] * 4 and all(
        (tmp_path / a / n).read_bytes() == (tmp_path / b / n).read_bytes() for a, b, n in names
    )
    ok = ckpt_ok and shard_ok and rerun_ok
    verdict(9, ok, f"checkpoint {'bit-identical' if ckpt_ok else 'differs'}, shards "
                   f"{'bit-identical' if shard_ok else 'differ'}, sweep/report reruns "
                   f"{'byte-identical' if rerun_ok else 'differ'} ({json.dumps(codes)})")
    assert ok
