"""Deterministic, splittable random streams.

Every consumer gets its own counter-based generator keyed by the run
seed plus a tuple of tags (stage name, image index, ...), so adding a
draw in one place never shifts the draws of another.
"""
from __future__ import annotations

import hashlib

import numpy as np


def stream(seed: int, *tags) -> np.random.Generator:
    """Independent Philox stream for (seed, *tags).

    Tags may be ints or strings; the key is a hash of their canonical
    encoding, so stream(0, "jscc", 3) is stable across runs and
    platforms.
    """
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for tag in tags:
        h.update(b"\x1f")
        if isinstance(tag, (int, np.integer)):
            h.update(b"i" + str(int(tag)).encode())
        elif isinstance(tag, str):
            h.update(b"s" + tag.encode())
        else:
            raise TypeError(f"stream tags must be int or str, got {type(tag).__name__}")
    entropy = int.from_bytes(h.digest(), "little")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
