"""Counter-based random streams.

Every random draw in the package comes from a generator keyed by a tuple of
identifiers (seed, purpose, indices...). Identical keys give identical draws
regardless of call order or thread scheduling, which is what makes data
generation, augmentation, and corruption reproducible piece by piece.
"""

from __future__ import annotations

import hashlib

import numpy as np

KeyPart = "int | str | bytes"


def _digest(parts: tuple) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, bytes):
            h.update(b"b" + p)
        elif isinstance(p, str):
            h.update(b"s" + p.encode("utf-8"))
        elif isinstance(p, (int, np.integer)):
            h.update(b"i" + int(p).to_bytes(16, "little", signed=True))
        else:
            raise TypeError(f"stream key parts must be int/str/bytes, got {type(p).__name__}")
        h.update(b"\x1f")
    return h.digest()


def stream(*parts) -> np.random.Generator:
    """Return a Generator keyed by ``parts``. Same key, same draws."""
    words = np.frombuffer(_digest(parts), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=words[:2]))


def subseed(*parts) -> int:
    """Derive a 63-bit integer sub-seed from a key tuple."""
    return int.from_bytes(_digest(parts)[:8], "little") >> 1
