"""Synthetic dataset splits: scene seeds, rendering to features, shards and manifests."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .ambisonics import features_from_foa
from .io import dumps_json, load_tensors, save_tensors
from .roomsim import GeneratorConfig, MixtureSpec, noise_seed, random_mixture_spec, synth_mixture

SPLITS = ("train", "val", "test")
SPLIT_STRIDE = 10_000_000  # scene seeds per split; items must stay below this


def scene_seeds(master_seed: int, split: str, n_items: int) -> list:
    """Disjoint seed blocks per split, so no room, talker or noise seed is shared."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    if n_items > SPLIT_STRIDE:
        raise ValueError("too many items for one split")
    base = (int(master_seed) * len(SPLITS) + SPLITS.index(split)) * SPLIT_STRIDE
    return [base + i for i in range(n_items)]


def render_scene(spec: MixtureSpec):
    """Scene -> (features (N_t, 513, 4) float32, counts (N_t,) int64)."""
    audio, labels = synth_mixture(spec)
    feats = features_from_foa(audio).data.astype(np.float32)
    return feats, labels.counts


def make_split(gen: GeneratorConfig, master_seed: int, split: str, n_items: int):
    """Render a split in memory: list of ``(spec, features, counts)``."""
    out = []
    for seed in scene_seeds(master_seed, split, n_items):
        spec = random_mixture_spec(gen, seed)
        feats, counts = render_scene(spec)
        out.append((spec, feats, counts))
    return out


def derived_seeds(spec: MixtureSpec) -> dict:
    return {
        "scene": spec.master_seed,
        "speech": [s.signal_seed for s in spec.speakers],
        "noise": noise_seed(spec.master_seed),
    }


def write_split(out_dir, gen: GeneratorConfig, master_seed: int, split: str, n_items: int,
                shard_size: int = 16, extra_manifest: dict | None = None) -> dict:
    """Render ``n_items`` scenes into CNTW shards plus ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = scene_seeds(master_seed, split, n_items)
    items, shards = [], []
    for s0 in range(0, n_items, shard_size):
        tensors = {}
        for i, seed in enumerate(seeds[s0 : s0 + shard_size], start=s0):
            spec = random_mixture_spec(gen, seed)
            feats, counts = render_scene(spec)
            tensors[f"features/{i:06d}"] = feats
            tensors[f"counts/{i:06d}"] = counts
            items.append({"index": i, "seeds": derived_seeds(spec), "spec": spec.to_dict(),
                          "n_frames": int(feats.shape[0])})
        name = f"{split}-{s0 // shard_size:04d}.cntw"
        save_tensors(out_dir / name, tensors, {"split": split, "first_index": s0})
        shards.append(name)
    manifest = {
        "split": split,
        "master_seed": int(master_seed),
        "generator": asdict(gen),
        "n_items": n_items,
        "shards": shards,
        "items": items,
        **(extra_manifest or {}),
    }
    manifest = json.loads(dumps_json(manifest))
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest


def read_split(data_dir):
    """Load every ``(features, counts)`` pair of a written split, in index order."""
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / "manifest.json").read_text())
    feats, counts = {}, {}
    for name in manifest["shards"]:
        tensors, _ = load_tensors(data_dir / name)
        for key, arr in tensors.items():
            kind, idx = key.split("/")
            (feats if kind == "features" else counts)[int(idx)] = arr
    return [(feats[i], counts[i].astype(np.int64)) for i in sorted(feats)], manifest


def speech_seed_set(manifest: dict) -> set:
    return {s for item in manifest["items"] for s in item["seeds"]["speech"]}

