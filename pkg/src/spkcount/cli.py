"""``spkcount`` command line: synth, train, sweep, taint, report.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
Set ``SPKCOUNT_THREADS`` to cap BLAS threads.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import DEPTH, StackSpec, empirical_taint, optimal_position, overhead_frames, taint_mask
from .config import ConfigError, ExperimentConfig, load_config
from .crnn import CrnnConfig, NumericalError, build, init_state, make_windows, train
from .dataset import read_split, write_split
from .dsp import DEFAULT_STFT, SAMPLE_RATE
from .harness import SweepConfig, SweepCurvePoint, SweepResult, curve_features, position_sweep
from .io import FormatError, config_hash, load_checkpoint, read_csv, save_checkpoint, write_csv

log = logging.getLogger("spkcount")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
TOOL = f"spkcount {__version__}"

SWEEP_COLUMNS = ["K", "N_t", "n", "evaluated", "skipped", "correct", "accuracy"]
TAINT_COLUMNS = ["K", "depth", "N_t", "head", "tail", "n_opt", "analytic_equals_empirical"]


def _prepare_dir(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise FileExistsError(f"{path} exists and is not empty; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _save_config(cfg: ExperimentConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")


# ------------------------------------------------------------------ synth


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    root = Path(cfg.output_dir)
    out = _prepare_dir(root / "data" / args.split, args.force)
    _save_config(cfg, root)
    n_items = getattr(cfg.splits, args.split)
    manifest = write_split(
        out, cfg.generator, cfg.master_seed, args.split, n_items, cfg.shard_size,
        {"config_hash": config_hash(cfg.to_dict()), "tool": TOOL},
    )
    frames = sum(item["n_frames"] for item in manifest["items"])
    print(f"wrote {n_items} scenes ({frames} frames) to {out}")
    return EXIT_OK


# ------------------------------------------------------------------ train


def training_windows(recordings, n_frames: int, stride: int):
    items = []
    for feats, counts in recordings:
        items.extend(make_windows(feats, counts, n_frames, stride or n_frames))
    if not items:
        raise ValueError(f"no recording is long enough for {n_frames}-frame windows")
    return np.stack([f for f, _ in items]), np.stack([c for _, c in items])


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    crnn_cfg = cfg.crnn
    if args.kernel_size is not None:
        crnn_cfg = CrnnConfig.from_dict({**crnn_cfg.to_dict(), "kernel_size": args.kernel_size})
    tcfg = cfg.train
    root = Path(cfg.output_dir)
    model_dir = root / "model" / f"k{crnn_cfg.kernel_size}"
    recordings, manifest = read_split(args.data or root / "data" / "train")
    x, y = training_windows(recordings, crnn_cfg.n_frames, cfg.window_stride)
    provenance = {
        "config_hash": config_hash(cfg.to_dict()),
        "data_master_seed": manifest["master_seed"],
        "tool": TOOL,
        "train": dataclasses.asdict(tcfg),
    }
    if args.resume:
        state = load_checkpoint(args.resume)
        if state.params.config != crnn_cfg:
            raise ConfigError("checkpoint architecture differs from the configuration")
    else:
        _prepare_dir(model_dir, args.force)
        state = init_state(build(crnn_cfg, tcfg.seed))
    model_dir.mkdir(parents=True, exist_ok=True)
    ckpt = model_dir / "checkpoint.cntw"

    def save(s):
        save_checkpoint(ckpt, s, provenance)
        write_csv(model_dir / "history.csv", ["epoch", "mean_loss", "mean_frame_accuracy"],
                  s.history, f"{TOOL} config={provenance['config_hash']}")

    state = train(state, (x, y), tcfg, callback=save)
    save(state)
    last = state.history[-1] if state.history else None
    print(f"trained K={crnn_cfg.kernel_size} to epoch {state.epoch}: {last}; checkpoint {ckpt}")
    return EXIT_OK


# ------------------------------------------------------------------ sweep


def sweep_rows(result: SweepResult, kernel_size: int):
    return [
        [kernel_size, result.n_frames, p.n, p.support, p.skipped, p.correct, p.accuracy]
        for p in result.points
    ]


def write_sweep_csv(path, result: SweepResult, kernel_size: int, tag: str) -> None:
    comment = (
        f"{TOOL} config={tag} mean_weighted={result.mean_accuracy!r} "
        f"mean_unweighted={result.mean_accuracy_unweighted!r} edge_policy=skip "
        f"excluded_recordings={result.excluded_recordings}"
    )
    write_csv(path, SWEEP_COLUMNS, sweep_rows(result, kernel_size), comment)


def read_sweep_csv(path) -> SweepResult:
    _, rows = read_csv(path)
    if not rows:
        raise ValueError(f"{path}: empty sweep file")
    points = [
        SweepCurvePoint(int(r["n"]), float(r["accuracy"]), int(r["evaluated"]),
                        int(r["skipped"]), int(r["correct"]))
        for r in rows
    ]
    return SweepResult(points, int(rows[0]["N_t"]), int(rows[0]["K"]))


def cmd_sweep(args) -> int:
    recordings, manifest = read_split(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for ckpt in args.checkpoint:
        params = load_checkpoint(ckpt).params
        k = params.config.kernel_size
        for n_t in args.n_frames:
            positions = tuple(args.positions) if args.positions else None
            scfg = SweepConfig(n_t, positions, args.batch_size)
            tag = config_hash({"checkpoint": _file_digest(ckpt), "data": manifest["master_seed"],
                               "split": manifest["split"], "N_t": n_t, "positions": positions})
            result = position_sweep(params, recordings, scfg, k)
            write_sweep_csv(out / f"sweep_k{k}_n{n_t}.csv", result, k, tag)
            feats = curve_features(result, k)
            summary.append([k, n_t, feats.n_best, "" if feats.n_opt is None else feats.n_opt,
                            feats.head_rise, feats.tail_drop, result.mean_accuracy,
                            result.mean_accuracy_unweighted])
            print(f"K={k} N_t={n_t}: mean {result.mean_accuracy:.4f} n_best {feats.n_best} "
                  f"n_opt {feats.n_opt} rise {feats.head_rise:+.4f} drop {feats.tail_drop:+.4f}")
    write_csv(out / "summary.csv",
              ["K", "N_t", "n_best", "n_opt", "head_rise", "tail_drop", "mean_weighted", "mean_unweighted"],
              summary, TOOL)
    return EXIT_OK


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ------------------------------------------------------------------ taint


def taint_table(kernel_sizes, depths, n_frames_list, probes: int = 8, seed: int = 0, width: int = 4):
    """Analytic vs. empirical taint for every (K, depth, N_t) cell."""
    rows = []
    for k in kernel_sizes:
        for depth in depths:
            cfg = CrnnConfig(
                kernel_size=k, conv_channels=(width,) * depth,
                pool_sizes=tuple(4 for i in (1, 3) if i < depth),
                pool_after=tuple(i for i in (1, 3) if i < depth),
            )
            params = build(cfg, seed, dtype=np.float64)
            stack = StackSpec.from_config(cfg)
            for n_t in n_frames_list:
                analytic = taint_mask(stack, n_t)
                measured = empirical_taint(params, n_t, probes, seed)
                last_clean = n_t - 1 - analytic.tail
                rows.append([k, depth, n_t, analytic.head, analytic.tail,
                             last_clean if last_clean >= 0 else "",
                             str(analytic == measured).lower()])
    return rows


def cmd_taint(args) -> int:
    rows = taint_table(args.kernel_sizes, args.depths, args.n_frames, args.probes, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, TAINT_COLUMNS, rows, f"{TOOL} probes={args.probes} seed={args.seed}")
    bad = [r for r in rows if r[-1] != "true"]
    print(f"wrote {len(rows)} rows to {out}; {len(bad)} analytic/empirical mismatches")
    return EXIT_OK


# ------------------------------------------------------------------ report


def report_rows(results):
    rows = []
    for res in sorted(results, key=lambda r: (r.kernel_size, r.n_frames)):
        k = res.kernel_size
        feats = curve_features(res, k)
        extra = overhead_frames(k)
        rows.append([
            k, res.n_frames, feats.n_best, "" if feats.n_opt is None else feats.n_opt,
            feats.head_rise, feats.tail_drop, res.mean_accuracy, res.mean_accuracy_unweighted,
            extra, extra * DEFAULT_STFT.hop / SAMPLE_RATE * 1000.0,
        ])
    return rows


REPORT_COLUMNS = ["K", "N_t", "n_best", "n_opt", "head_rise", "tail_drop", "mean_weighted",
                  "mean_unweighted", "overhead_frames", "latency_ms"]


def render_report(rows, taint_rows) -> str:
    lines = [
        "# Decoding-position report",
        "",
        f"Generated by {TOOL}. Frame hop {DEFAULT_STFT.hop} samples "
        f"({DEFAULT_STFT.hop / SAMPLE_RATE * 1000:g} ms) at {SAMPLE_RATE} Hz.",
        "",
        "Decoding at the last padding-free position n_opt = N_t - 2K + 1 needs "
        "overhead_frames = 4 * (K // 2) future frames, i.e. latency_ms of look-ahead.",
        "",
        "| K | N_t | n_best | n_opt | head rise | tail drop | mean acc (weighted) | "
        "mean acc (unweighted) | overhead frames | latency ms |",
        "|---|---|---|---|---|---|---|---|---|---|",
    ]
    for r in rows:
        k, n_t, n_best, n_opt, rise, drop, mw, mu, extra, ms = r
        lines.append(f"| {k} | {n_t} | {n_best} | {n_opt} | {rise:+.4f} | {drop:+.4f} | "
                     f"{mw:.4f} | {mu:.4f} | {extra} | {ms:g} |")
    if taint_rows:
        lines += ["", "## Padding taint", "",
                  "| K | depth | N_t | head | tail | last clean n | analytic == empirical |",
                  "|---|---|---|---|---|---|---|"]
        for r in taint_rows:
            lines.append("| " + " | ".join(str(r[c]) for c in TAINT_COLUMNS) + " |")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    sweep_files = []
    for item in args.sweeps:
        p = Path(item)
        sweep_files += sorted(p.glob("sweep_k*_n*.csv")) if p.is_dir() else [p]
    if not sweep_files:
        raise ConfigError("no sweep CSV files given")
    results = [read_sweep_csv(f) for f in sweep_files]
    taint_rows = read_csv(args.taint)[1] if args.taint else []
    rows = report_rows(results)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "report.csv", REPORT_COLUMNS, rows, TOOL)
    (out / "report.md").write_text(render_report(rows, taint_rows))
    print(f"wrote {out / 'report.md'} and {out / 'report.csv'}")
    return EXIT_OK


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spkcount", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=TOOL)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a dataset split")
    p.add_argument("config")
    p.add_argument("--split", choices=("train", "val", "test"), default="train")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a CRNN on the train split")
    p.add_argument("config")
    p.add_argument("--data", help="split directory (default: <output_dir>/data/train)")
    p.add_argument("--kernel-size", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="accuracy per decoded position")
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n-frames", type=int, nargs="+", required=True)
    p.add_argument("--positions", type=int, nargs="*")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("taint", help="analytic vs. empirical padding taint")
    p.add_argument("--kernel-sizes", type=int, nargs="+", default=[1, 3, 5, 7])
    p.add_argument("--depths", type=int, nargs="+", default=[DEPTH])
    p.add_argument("--n-frames", type=int, nargs="+", default=[10, 20, 30, 40, 50])
    p.add_argument("--probes", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_taint)

    p = sub.add_parser("report", help="tabulate sweeps and taint into markdown + CSV")
    p.add_argument("--sweeps", nargs="+", required=True, help="sweep CSVs or directories")
    p.add_argument("--taint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
