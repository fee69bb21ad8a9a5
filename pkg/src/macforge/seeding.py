"""Splittable seed derivation.

A seed for any subsystem is a hash of the master seed and a path of labels
and counters, so streams never collide and never depend on call order.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(master: int, *path) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for part in path:
        h.update(b"\x1f")
        h.update(str(part).encode())
    return int.from_bytes(h.digest(), "little")


def stream(master: int, *path) -> random.Random:
    return random.Random(derive_seed(master, *path))


def replication_seeds(master: int, count: int, label: str = "replication") -> list[int]:
    return [derive_seed(master, label, i) for i in range(count)]
