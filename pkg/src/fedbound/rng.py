"""Deterministic seed derivation for namespaced random streams.

Every stochastic operation in the package takes an explicit integer seed.
Sub-streams (per node, per round, per probe) are derived by hashing the
base seed together with a path of labels, so that results are independent
of execution order and identical across serial and parallel schedules.
"""

from __future__ import annotations

import hashlib

import numpy as np

_SEP = b"\x1f"


def derive_seed(*parts: int | str) -> int:
    """Hash a path of ints/strings into a stable 63-bit seed.

    Stable across processes and platforms (unlike builtin ``hash``).
    """
    if not parts:
        raise ValueError("derive_seed needs at least one part")
    payload = _SEP.join(str(p).encode("utf-8") for p in parts)
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def spawn_rng(*parts: int | str) -> np.random.Generator:
    """Create a Generator seeded from a derived path seed."""
    return np.random.default_rng(derive_seed(*parts))
