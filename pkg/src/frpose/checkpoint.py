"""Checkpoint serialization: a text manifest next to a flat float32 payload.

The manifest (``<path>``) lists metadata and one ``tensor`` line per array —
name, ``x``-separated shape, byte offset — while the payload (``<path>.bin``)
holds all values as little-endian float32 in manifest order.  Round-tripping
float32 state is bit-exact.

Array names are namespaced: ``param.<name>`` and ``buffer.<name>`` for the
network, ``adam.m.<name>``/``adam.v.<name>`` for optimizer moments.  Step
counters ride along as ``meta`` lines.
"""

from __future__ import annotations

import os
from typing import Mapping, Optional

import numpy as np

__all__ = [
    "save_arrays",
    "load_arrays",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]

FORMAT_TAG = "frpose-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path: str, arrays: Mapping[str, np.ndarray],
                meta: Optional[Mapping[str, str]] = None) -> None:
    lines = [f"format {FORMAT_TAG}", f"version {VERSION}"]
    for key, value in (meta or {}).items():
        if " " in key or " " in str(value):
            raise CheckpointError(f"meta entries may not contain spaces: {key!r}")
        lines.append(f"meta {key} {value}")
    payload = bytearray()
    for name, arr in arrays.items():
        if " " in name:
            raise CheckpointError(f"array names may not contain spaces: {name!r}")
        flat = np.ascontiguousarray(arr, dtype="<f4")
        shape = "x".join(str(e) for e in flat.shape)
        lines.append(f"tensor {name} {shape} {len(payload)}")
        payload += flat.tobytes()
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.fspath(path) + ".bin", "wb") as fh:
        fh.write(bytes(payload))


def load_arrays(path: str) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    if not os.path.exists(path):
        raise CheckpointError(f"no checkpoint manifest at {path}")
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0].split() != ["format", FORMAT_TAG]:
        raise CheckpointError(f"{path} is not a {FORMAT_TAG} manifest")
    with open(os.fspath(path) + ".bin", "rb") as fh:
        payload = fh.read()
    arrays: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    for line in lines[1:]:
        kind, *rest = line.split(" ")
        if kind == "version":
            if int(rest[0]) != VERSION:
                raise CheckpointError(f"unsupported checkpoint version {rest[0]}")
        elif kind == "meta":
            meta[rest[0]] = rest[1]
        elif kind == "tensor":
            name, shape_s, offset_s = rest
            shape = tuple(int(e) for e in shape_s.split("x")) if shape_s else ()
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            offset = int(offset_s)
            arr = np.frombuffer(payload, dtype="<f4", count=count,
                                offset=offset).reshape(shape)
            arrays[name] = arr.copy()
        else:
            raise CheckpointError(f"unknown manifest line kind {kind!r}")
    return arrays, meta


def _network_arrays(net) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for name, p in net.named_parameters():
        out[f"param.{name}"] = p.data
    for name, b in net.named_buffers():
        out[f"buffer.{name}"] = b
    return out


def save_checkpoint(path: str, net, optimizer=None,
                    meta: Optional[Mapping[str, str]] = None) -> None:
    arrays = _network_arrays(net)
    all_meta = dict(meta or {})
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
        all_meta["adam_step"] = str(optimizer.t)
    save_arrays(path, arrays, all_meta)


def load_checkpoint(path: str, net, optimizer=None) -> dict[str, str]:
    """Restore network (and optionally optimizer) state in place.

    Every parameter and buffer of ``net`` must be present with a matching
    shape; the first mismatch aborts the load with its name.
    """
    arrays, meta = load_arrays(path)
    for name, p in net.named_parameters():
        key = f"param.{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint is missing {key!r}")
        if arrays[key].shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {key!r}: checkpoint has "
                f"{arrays[key].shape}, network has {p.data.shape}")
        p.data = arrays[key].astype(p.data.dtype, copy=True)
        p.grad = None
    for name, b in net.named_buffers():
        key = f"buffer.{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint is missing {key!r}")
        if arrays[key].shape != b.shape:
            raise CheckpointError(
                f"shape mismatch for {key!r}: checkpoint has "
                f"{arrays[key].shape}, network has {b.shape}")
        b[...] = arrays[key]
    if optimizer is not None:
        optimizer.load_state(arrays, int(meta.get("adam_step", "0")))
    return meta
