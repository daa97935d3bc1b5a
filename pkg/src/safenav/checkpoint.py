"""Versioned binary checkpoints for field snapshots.

Layout (all little endian): magic ``NFLD``, format u32, snapshot version u32,
field configuration (hidden count/width/skip u32s, softplus sharpness f32,
frequency count u32, base scale f64), trained region 6*f32, layer count u32,
then per hidden layer rows/cols u32 + weight f32s + bias length u32 + bias
f32s, then the output head.  Parameters are stored as 32-bit floats; loading
a saved file and saving it again reproduces the bytes exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .network import FieldConfig, FieldSnapshot, Params, publish_snapshot

MAGIC = b"NFLD"
FORMAT_VERSION = 1

_NO_SKIP = 0xFFFFFFFF


def save_checkpoint(path: str | Path, snapshot: FieldSnapshot) -> None:
    cfg = snapshot.config
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<II", FORMAT_VERSION, snapshot.version)
    skip = _NO_SKIP if cfg.skip_layer is None else cfg.skip_layer
    buf += struct.pack("<IIIfId", cfg.num_hidden, cfg.hidden_width, skip,
                       cfg.beta_act, cfg.num_frequencies, cfg.base_scale)
    buf += np.asarray(snapshot.trained_region, dtype="<f4").tobytes()
    buf += struct.pack("<I", cfg.num_hidden)
    for i in range(1, cfg.num_hidden + 1):
        w = snapshot.params[f"W{i}"]
        b = snapshot.params[f"b{i}"]
        buf += struct.pack("<II", w.shape[0], w.shape[1])
        buf += w.astype("<f4").tobytes()
        buf += struct.pack("<I", b.shape[0])
        buf += b.astype("<f4").tobytes()
    w_out = snapshot.params["w_out"]
    buf += struct.pack("<I", w_out.shape[0])
    buf += w_out.astype("<f4").tobytes()
    buf += struct.pack("<f", float(snapshot.params["b_out"][0]))
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path: str | Path) -> FieldSnapshot:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a field checkpoint")
    off = 4
    fmt, version = struct.unpack_from("<II", raw, off)
    off += 8
    if fmt != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {fmt}")
    num_hidden, width, skip, beta, num_freq, base_scale = struct.unpack_from("<IIIfId", raw, off)
    off += struct.calcsize("<IIIfId")
    config = FieldConfig(
        hidden_width=width,
        num_hidden=num_hidden,
        skip_layer=None if skip == _NO_SKIP else skip,
        beta_act=float(np.float32(beta)),
        num_frequencies=num_freq,
        base_scale=base_scale,
    )
    region = np.frombuffer(raw, dtype="<f4", count=6, offset=off).astype(float).reshape(2, 3)
    off += 24
    (layer_count,) = struct.unpack_from("<I", raw, off)
    off += 4
    if layer_count != num_hidden:
        raise ValueError(f"{path}: layer count mismatch")
    params: Params = {}
    for i in range(1, num_hidden + 1):
        rows, cols = struct.unpack_from("<II", raw, off)
        off += 8
        params[f"W{i}"] = np.frombuffer(raw, dtype="<f4", count=rows * cols,
                                        offset=off).astype(float).reshape(rows, cols)
        off += 4 * rows * cols
        (blen,) = struct.unpack_from("<I", raw, off)
        off += 4
        params[f"b{i}"] = np.frombuffer(raw, dtype="<f4", count=blen, offset=off).astype(float)
        off += 4 * blen
    (wlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    params["w_out"] = np.frombuffer(raw, dtype="<f4", count=wlen, offset=off).astype(float)
    off += 4 * wlen
    (b_out,) = struct.unpack_from("<f", raw, off)
    off += 4
    params["b_out"] = np.array([b_out], dtype=float)
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return publish_snapshot(params, config, version, region)
