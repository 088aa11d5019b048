"""Seeded counter-based generators.

Every solve draws from ``Generator(Philox(seed))``; independent streams for
concurrent consumers come from ``SeedSequence.spawn``.
"""

from __future__ import annotations

import os
from typing import Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


def default_seed() -> int:
    """Seed from ``NSLS_SEED`` if set, else 0."""
    raw = os.environ.get("NSLS_SEED")
    if raw is None or raw.strip() == "":
        return 0
    return int(raw)


def make_rng(seed: SeedLike = None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        seed = default_seed()
    return np.random.Generator(np.random.Philox(seed))


def spawn(seed: Union[int, None], n: int) -> list[np.random.Generator]:
    """``n`` independent Philox streams derived from one seed."""
    ss = np.random.SeedSequence(default_seed() if seed is None else seed)
    return [np.random.Generator(np.random.Philox(child)) for child in ss.spawn(n)]
