"""Counter-based random streams keyed by (seed, stream, walker id, draw index).

Each walker owns a Philox counter block ``[draw, walker_id, stream, 0]``
under the 128-bit key derived from the seed, so a walker's draws never depend
on how many other walkers exist or in which order they are processed.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

STREAM_SAMPLE = 1
STREAM_OBSERVER_A = 2
STREAM_OBSERVER_B = 3


def _key(seed: int) -> np.ndarray:
    seed = int(seed)
    return np.array([seed & MASK64, (seed >> 64) & MASK64], dtype=np.uint64)


def walker_uniforms(seed: int, stream: int, walker_ids, n_draws: int) -> np.ndarray:
    """Uniforms in [0, 1), shape ``(len(walker_ids), n_draws)``."""
    ids = np.asarray(walker_ids, dtype=np.int64).ravel()
    out = np.empty((ids.size, n_draws))
    key = _key(seed)
    for row, wid in enumerate(ids):
        counter = np.array([0, int(wid) & MASK64, int(stream) & MASK64, 0], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
        out[row] = gen.random(n_draws)
    return out
