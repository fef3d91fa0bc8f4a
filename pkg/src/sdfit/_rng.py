"""Counter-based random streams.

Every stochastic draw in the package flows through `stream(seed, purpose,
iteration)`: a Philox generator keyed by the user seed plus a (purpose,
iteration) spawn key. Streams for different purposes or iterations are
statistically independent, and any stream can be re-created from the triple
alone, which is what makes checkpoint resume and thread-count invariance
possible without serializing generator state.
"""

from __future__ import annotations

import numpy as np

# Stable purpose ids; appending is fine, renumbering breaks reproducibility.
_PURPOSES = {
    "init": 1,
    "cloud_batch": 2,
    "eikonal_global": 3,
    "eikonal_local": 4,
    "bank": 5,
    "surface_draw": 6,
    "ssa": 7,
    "metrics": 8,
    "demo": 9,
    "analysis": 10,
}

PURPOSES = tuple(_PURPOSES)

_MASK64 = (1 << 64) - 1


def stream(seed: int, purpose: str, iteration: int = 0) -> np.random.Generator:
    """Return the generator for (seed, purpose, iteration)."""
    if purpose not in _PURPOSES:
        raise ValueError(f"unknown stream purpose {purpose!r}")
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK64,
        spawn_key=(_PURPOSES[purpose], int(iteration)),
    )
    return np.random.Generator(np.random.Philox(ss))
