"""Deterministic seed derivation for experiment streams.

Child seeds are derived by hashing the parent seed together with stable
string parts (puzzle keys, indices), so results do not depend on execution
order, worker count, or numpy version.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary (stringified) parts."""
    msg = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(msg.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng_from(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))
