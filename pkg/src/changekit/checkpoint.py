"""Versioned binary checkpoint container.

Layout: 4-byte magic, uint32 format version, uint64 manifest length, the
manifest as canonical JSON (sorted keys, no whitespace), then the raw
little-endian element data of every entry in manifest order. Loading
validates each entry's byte count against its declared shape and dtype, so a
truncated or mislabeled file fails loudly. Canonical JSON plus fixed entry
order makes save -> load -> save byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"CKPT"
VERSION = 1

ROLES = ("encoder", "projector", "head", "optimizer")

_DTYPES = {"f4": "<f4", "f8": "<f8"}


class CheckpointError(ValueError):
    pass


@dataclass
class Entry:
    name: str
    role: str
    array: np.ndarray

    def __post_init__(self):
        if self.role not in ROLES:
            raise CheckpointError(f"entry {self.name!r}: unknown role {self.role!r}")


@dataclass
class Checkpoint:
    entries: list[Entry]
    meta: dict

    def by_role(self, role: str) -> dict[str, np.ndarray]:
        return {e.name: e.array for e in self.entries if e.role == role}

    def roles(self) -> set[str]:
        return {e.role for e in self.entries}


def _dtype_token(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f4"
    if arr.dtype == np.float64:
        return "f8"
    raise CheckpointError(f"unsupported dtype {arr.dtype}")


def save(path: str | Path, ckpt: Checkpoint) -> None:
    entries = sorted(ckpt.entries, key=lambda e: (e.role, e.name))
    manifest = {
        "version": VERSION,
        "meta": ckpt.meta,
        "entries": [
            {
                "name": e.name,
                "role": e.role,
                "dtype": _dtype_token(e.array),
                "shape": list(e.array.shape),
            }
            for e in entries
        ],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for e in entries:
            f.write(np.ascontiguousarray(e.array, dtype=_DTYPES[_dtype_token(e.array)]).tobytes())


def load(path: str | Path) -> Checkpoint:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (mlen,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(mlen).decode("utf-8"))
        entries = []
        for spec in manifest["entries"]:
            dtype = _DTYPES.get(spec["dtype"])
            if dtype is None:
                raise CheckpointError(f"{path}: entry {spec['name']!r} has bad dtype {spec['dtype']!r}")
            shape = tuple(spec["shape"])
            nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
            raw = f.read(nbytes)
            if len(raw) != nbytes:
                raise CheckpointError(
                    f"{path}: entry {spec['name']!r} truncated, wanted {nbytes} bytes got {len(raw)}"
                )
            arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
            entries.append(Entry(spec["name"], spec["role"], arr.copy()))
        trailing = f.read(1)
        if trailing:
            raise CheckpointError(f"{path}: trailing bytes after declared entries")
    return Checkpoint(entries=entries, meta=manifest.get("meta", {}))
