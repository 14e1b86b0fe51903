"""Flat binary checkpoint format.

Layout: 8-byte magic, 8-byte little-endian header length, JSON header
(config, config hash, tensor directory), then the raw little-endian float64
buffers back to back. Fully deterministic bytes, so identical parameters
always serialize identically and round-trip bitwise.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..errors import CorruptFile, IncompatibleCheckpoint

MAGIC = b"RAWCKPT1"


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def save_checkpoint(path, tensors: dict[str, np.ndarray], config: dict):
    names = sorted(tensors)
    directory = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
        directory.append({"name": name, "shape": list(arr.shape),
                          "offset": offset, "nbytes": arr.nbytes})
        offset += arr.nbytes
    header = json.dumps({"config": config, "config_hash": config_hash(config),
                         "tensors": directory},
                        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for name in names:
            fh.write(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())


def load_checkpoint(path, expected_config: dict | None = None):
    """Returns (tensors, config). Raises IncompatibleCheckpoint on hash mismatch."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise CorruptFile(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + hlen])
    if header["config_hash"] != config_hash(header["config"]):
        raise CorruptFile(f"{path}: header hash does not match its config")
    if expected_config is not None and config_hash(expected_config) != header["config_hash"]:
        raise IncompatibleCheckpoint(
            f"{path}: checkpoint config hash {header['config_hash']} does not match "
            f"the requested config {config_hash(expected_config)}")
    base = 16 + hlen
    tensors = {}
    for ent in header["tensors"]:
        start = base + ent["offset"]
        raw = blob[start : start + ent["nbytes"]]
        if len(raw) != ent["nbytes"]:
            raise CorruptFile(f"{path}: truncated buffer for {ent['name']}")
        tensors[ent["name"]] = np.frombuffer(raw, dtype="<f8").reshape(ent["shape"]).copy()
    return tensors, header["config"]
