"""Checkpoint file: magic, little-endian uint64 manifest length, JSON manifest, float64 payload.

The manifest lists ``(name, shape, offset)`` per parameter array (offsets
count float64 elements into the payload), both configs, the coupling
permutations and the initialisation seed.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..tensor.nn import ParamSet
from .config import EncoderConfig, FlowConfig
from .posterior import FlowParams

MAGIC = b"AEIGCKPT"
FORMAT_VERSION = 1


class CheckpointError(OSError):
    pass


def save_checkpoint(path, fp: FlowParams, extra: dict | None = None) -> Path:
    path = Path(path)
    entries, offset = [], 0
    for name, arr in fp.arrays.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    manifest = {
        "version": FORMAT_VERSION,
        "arrays": entries,
        "n_values": offset,
        "encoder": fp.encoder.to_dict(),
        "flow": fp.flow.to_dict(),
        "perms": [p.tolist() for p in fp.perms],
        "latent_dim": fp.latent_dim,
        "input_width": fp.input_width,
        "seed": fp.seed,
        "extra": {**fp.extra, **(extra or {})},
    }
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    payload = np.concatenate([a.reshape(-1) for a in fp.arrays.values()]).astype("<f8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(payload.tobytes())
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> FlowParams:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    if manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')}")
    payload = np.frombuffer(raw[16 + hlen :], dtype="<f8")
    if payload.size != manifest["n_values"]:
        raise CheckpointError("payload size does not match manifest")
    arrays = ParamSet()
    for e in manifest["arrays"]:
        size = int(np.prod(e["shape"])) if e["shape"] else 1
        arrays[e["name"]] = payload[e["offset"] : e["offset"] + size].astype(np.float64).reshape(e["shape"])
    return FlowParams(
        arrays,
        [np.asarray(p, dtype=np.intp) for p in manifest["perms"]],
        EncoderConfig(**manifest["encoder"]),
        FlowConfig(**manifest["flow"]),
        manifest["latent_dim"],
        manifest["input_width"],
        manifest["seed"],
        manifest.get("extra", {}),
    )
