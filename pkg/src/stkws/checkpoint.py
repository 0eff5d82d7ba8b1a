"""Checkpoint file: manifest plus named little-endian tensors.

Layout::

    b"STKWSCK1"                      8-byte magic
    uint32 (LE)                      header length H
    H bytes of UTF-8 JSON            {"manifest": {...}, "tensors": [{name, shape, dtype, offset, nbytes}]}
    raw tensor bytes                 concatenated in header order, little-endian

Values round-trip bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, ShapeError

MAGIC = b"STKWSCK1"
FORMAT_VERSION = 1


def save_checkpoint(path, model, extra: dict | None = None) -> Path:
    """Write ``model``'s parameters and buffers with a manifest describing its variant."""
    spec = model.spec
    manifest = {
        "format_version": FORMAT_VERSION,
        "variant": spec.name,
        "channels": spec.channels,
        "heads": spec.heads,
        "dilated_blocks": spec.dilated_blocks,
        "plain_blocks": spec.plain_blocks,
        "reduction": spec.reduction,
        "num_classes": spec.num_classes,
        "time_steps": spec.time_steps,
        "n_mfcc": spec.n_mfcc,
    }
    if extra:
        manifest.update(extra)
    return write_tensors(path, manifest, model.state_dict())


def write_tensors(path, manifest: dict, tensors: dict) -> Path:
    path = Path(path)
    index, chunks, offset = [], [], 0
    for name, value in tensors.items():
        arr = np.asarray(value)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        index.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str,
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"manifest": manifest, "tensors": index}, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)
    return path


def read_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(manifest, {name: array})``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise ConfigError(f"{path} is not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    base = 12 + hlen
    tensors = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        raw = blob[start:start + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return header["manifest"], tensors


def load_checkpoint(path, expect_variant: str | None = None):
    """Rebuild the model described by a checkpoint and load its tensors."""
    from .models import ModelSpec, build

    manifest, tensors = read_tensors(path)
    if expect_variant is not None and manifest.get("variant") != expect_variant:
        raise ShapeError(f"checkpoint holds {manifest.get('variant')!r}, expected {expect_variant!r}")
    spec = ModelSpec(
        name=manifest["variant"], channels=manifest["channels"], heads=manifest["heads"],
        dilated_blocks=manifest["dilated_blocks"], plain_blocks=manifest["plain_blocks"],
        reduction=manifest["reduction"], num_classes=manifest["num_classes"],
        time_steps=manifest["time_steps"], n_mfcc=manifest["n_mfcc"])
    dtype = next(iter(tensors.values())).dtype if tensors else np.float64
    model = build(spec, dtype=dtype)
    model.load_state_dict(tensors)
    model.eval()
    return model, manifest


def content_hash(path) -> str:
    """Git blob-style SHA-1 of a file's bytes."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
