"""Deterministic per-stage and per-example seed derivation.

Every module-level seed in a run derives from the master seed as

    child = master XOR int(sha256("part|part|...")[:8], big-endian)

masked to 64 bits. The derivation string is recorded in run manifests so any
artifact can be regenerated from (config, master seed) alone.
"""
from __future__ import annotations

import hashlib

MASK64 = (1 << 64) - 1

DERIVATION = "child = master_seed XOR sha256('|'.join(parts))[:8] (big-endian), 64-bit"


def derive_seed(master: int, *parts) -> int:
    tag = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return (master ^ int.from_bytes(digest[:8], "big")) & MASK64
