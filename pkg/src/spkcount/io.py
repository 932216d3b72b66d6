"""On-disk formats: the CNTW named-tensor container, checkpoints and CSV helpers.

CNTW layout (all integers little-endian)::

    b"CNTW" | u32 version | u64 header_len | header (UTF-8 JSON) | payload

The header lists tensors in payload order as ``{"name", "shape", "dtype"}``
plus free-form metadata; the payload is every tensor as ``<f4`` back to back.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .crnn import CrnnConfig, CrnnParams, TrainState
from .neuralnet import AdamState

MAGIC = b"CNTW"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(dumps_json(obj).encode()).hexdigest()[:16]


def save_tensors(path, tensors: dict, meta: dict | None = None) -> None:
    entries = []
    blobs = []
    for name, arr in tensors.items():
        a = np.asarray(arr)
        f32 = np.ascontiguousarray(a, dtype="<f4")
        if a.dtype.kind in "iub" and not np.array_equal(f32.astype(a.dtype), a):
            raise FormatError(f"tensor {name!r} is not exactly representable as float32")
        entries.append({"name": name, "shape": list(a.shape), "dtype": "f32"})
        blobs.append(f32.tobytes())
    header = dumps_json({"tensors": entries, "meta": meta or {}}).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_tensors(path):
    """Return ``(tensors, meta)``; tensors come back as float32 arrays."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not a CNTW container")
    version, hlen = struct.unpack_from("<IQ", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    start = 4 + struct.calcsize("<IQ")
    header = json.loads(data[start : start + hlen].decode())
    offset = start + hlen
    tensors = {}
    for entry in header["tensors"]:
        if entry["dtype"] != "f32":
            raise FormatError(f"unsupported dtype tag {entry['dtype']!r}")
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + n > len(data):
            raise FormatError(f"{path}: truncated payload")
        tensors[entry["name"]] = np.frombuffer(data, "<f4", n // 4, offset).reshape(shape).copy()
        offset += n
    if offset != len(data):
        raise FormatError(f"{path}: trailing bytes after payload")
    return tensors, header["meta"]


# ------------------------------------------------------------------ checkpoints


def save_checkpoint(path, state: TrainState | CrnnParams, provenance: dict | None = None) -> None:
    if isinstance(state, CrnnParams):
        params, adam, epoch, history = state, None, 0, []
    else:
        params, adam, epoch, history = state.params, state.adam, state.epoch, state.history
    tensors = {f"param/{k}": v for k, v in params.tensors.items()}
    meta = {
        "crnn": params.config.to_dict(),
        "epoch": epoch,
        "history": [list(map(float, row)) for row in history],
        "provenance": provenance or {},
        "tool": f"spkcount {__version__}",
    }
    if adam is not None:
        tensors.update({f"adam.m/{k}": v for k, v in adam.m.items()})
        tensors.update({f"adam.v/{k}": v for k, v in adam.v.items()})
        meta["adam_step"] = adam.step
    save_tensors(path, tensors, meta)


def load_checkpoint(path) -> TrainState:
    tensors, meta = load_tensors(path)
    cfg = CrnnConfig.from_dict(meta["crnn"])
    params = CrnnParams(cfg, {k[6:]: v for k, v in tensors.items() if k.startswith("param/")})
    m = {k[7:]: v for k, v in tensors.items() if k.startswith("adam.m/")}
    v = {k[7:]: t for k, t in tensors.items() if k.startswith("adam.v/")}
    if m:
        adam = AdamState(m, v, int(meta["adam_step"]))
    else:
        adam = AdamState({k: np.zeros_like(t) for k, t in params.tensors.items()},
                         {k: np.zeros_like(t) for k, t in params.tensors.items()})
    history = [(int(r[0]), r[1], r[2]) for r in meta.get("history", [])]
    return TrainState(params, adam, int(meta.get("epoch", 0)), history, meta.get("provenance", {}))


# ------------------------------------------------------------------ CSV


def write_csv(path, header: list, rows, comment: str | None = None) -> None:
    """CSV with an optional leading ``# comment`` line; floats use repr for exactness."""
    buf = _io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path):
    """Return ``(comment_lines, list of dict rows)``."""
    lines = Path(path).read_text().splitlines()
    comments = [ln[2:] if ln.startswith("# ") else ln[1:] for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    return comments, list(csv.DictReader(body))
