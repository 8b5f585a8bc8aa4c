"""Model checkpoint container.

Layout of a checkpoint file::

    8 bytes   magic  b"WEMGCK01"
    8 bytes   little-endian uint64 header length H
    H bytes   UTF-8 JSON header: {"arch", "config", "seed", "tensors": [...], "extra"}
    ...       raw little-endian float64 blobs, one per header tensor entry,
              parameters in declaration order followed by buffers
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .models import CNN, TCN, CnnConfig, Module, TcnConfig

MAGIC = b"WEMGCK01"


def _tensors(model: Module):
    for name, p in model.named_parameters():
        yield name, "parameter", p.data
    for name, b in model.named_buffers():
        yield name, "buffer", b


def state_dict(model: Module) -> dict[str, np.ndarray]:
    return {name: arr.copy() for name, _, arr in _tensors(model)}


def load_state_dict(model: Module, state: dict[str, np.ndarray]) -> None:
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for name, arr in state.items():
        if name in params:
            params[name].data[...] = arr
        elif name in buffers:
            buffers[name][...] = arr
        else:
            raise KeyError(f"unexpected tensor {name!r} in state")


def save_checkpoint(model: Module, path, extra: dict | None = None) -> Path:
    path = Path(path)
    entries, blobs = [], []
    for name, kind, arr in _tensors(model):
        entries.append({"name": name, "kind": kind, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    cfg = dict(vars(model.cfg))
    header = json.dumps(
        {"arch": model.arch, "config": cfg, "seed": model.seed, "tensors": entries, "extra": extra or {}}
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path) -> tuple[Module, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + n])
    cfg = header["config"]
    for key in ("filters", "pool", "dense"):
        if key in cfg and cfg[key] is not None:
            cfg[key] = tuple(cfg[key])
    model = CNN(CnnConfig(**cfg), header["seed"]) if header["arch"] == "cnn" else TCN(TcnConfig(**cfg), header["seed"])
    offset = 16 + n
    state = {}
    for entry in header["tensors"]:
        size = int(np.prod(entry["shape"]))
        state[entry["name"]] = np.frombuffer(raw, "<f8", size, offset).reshape(entry["shape"])
        offset += size * 8
    load_state_dict(model, state)
    return model, header
