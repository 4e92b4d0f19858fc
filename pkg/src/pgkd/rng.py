"""Seeded random streams.

Every source of randomness goes through :func:`stream`, which returns a numpy
``Generator`` backed by the Philox4x64 counter-based bit generator. The 128-bit
Philox key is ``(seed, purpose_code)`` so the split, init, dropout, noise and
sbm streams never overlap for the same seed. Philox output and numpy's
``random``/``standard_normal``/``permutation`` algorithms are platform
independent, so identical seeds give identical draws everywhere.
"""

from __future__ import annotations

import numpy as np

PURPOSES = {
    "split": 1,
    "init": 2,
    "dropout": 3,
    "noise": 4,
    "sbm": 5,
    "eval": 6,
}


def stream(seed: int, purpose: str, sub: int = 0) -> np.random.Generator:
    """Return the generator for ``purpose`` under ``seed``.

    ``sub`` selects an independent sub-stream (e.g. one per model or per sweep
    cell) without disturbing the others.
    """
    if purpose not in PURPOSES:
        raise ValueError(f"unknown random stream purpose {purpose!r}")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    key = np.array(
        [seed & 0xFFFFFFFFFFFFFFFF, (PURPOSES[purpose] << 32) | (sub & 0xFFFFFFFF)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))
