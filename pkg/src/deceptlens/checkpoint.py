"""Single-file parameter checkpoints.

Layout (little-endian)::

    b"DLCK"  u32 version  u32 header_len  header_json  float64 data...

The JSON header lists every layer, its parameter names and shapes in the
order their row-major data follows, plus free-form ``meta``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError, ShapeError

MAGIC = b"DLCK"
VERSION = 1


def save_layers(path, layers, meta=None):
    header = {
        "version": VERSION,
        "layers": [
            {
                "name": lp.name,
                "frozen": lp.frozen,
                "params": [{"name": k, "shape": list(t.shape)} for k, t in lp.weights.items()],
            }
            for lp in layers
        ],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for lp in layers:
            for t in lp.weights.values():
                fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def read_checkpoint(path):
    """Return ``(header, {layer: {param: array}})``."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    arrays = {}
    for layer in header["layers"]:
        entry = {}
        for prm in layer["params"]:
            shape = tuple(prm["shape"])
            count = int(np.prod(shape)) if shape else 1
            end = offset + 8 * count
            if end > len(raw):
                raise ParseError(f"{path}: truncated data for {layer['name']}.{prm['name']}")
            entry[prm["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
            offset = end
        arrays[layer["name"]] = entry
    if offset != len(raw):
        raise ParseError(f"{path}: {len(raw) - offset} trailing bytes")
    return header, arrays


def load_layers(path, layers):
    """Copy checkpoint values into ``layers`` in place; shapes must match exactly."""
    header, arrays = read_checkpoint(path)
    for lp in layers:
        if lp.name not in arrays:
            raise ShapeError(f"checkpoint has no layer {lp.name!r}")
        stored = arrays[lp.name]
        if set(stored) != set(lp.weights):
            raise ShapeError(f"layer {lp.name!r}: parameter names {sorted(stored)} != {sorted(lp.weights)}")
        for k, t in lp.weights.items():
            if stored[k].shape != t.shape:
                raise ShapeError(f"{lp.name}.{k}: checkpoint shape {stored[k].shape} != model shape {t.shape}")
    extra = set(arrays) - {lp.name for lp in layers}
    if extra:
        raise ShapeError(f"checkpoint has unexpected layers {sorted(extra)}")
    for lp in layers:
        for k, t in lp.weights.items():
            t.data[...] = arrays[lp.name][k]
    return header
