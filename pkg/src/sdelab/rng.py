"""Counter-based random number streams for reproducible path ensembles.

Every simulated path owns a Philox stream keyed by ``(seed, 2 * path_index)``,
so an ensemble is a pure function of ``(seed, n_paths, n_steps)`` no matter how
paths are batched over chunks, processes or threads.  The odd keys
``(seed, 2 * path_index + 1)`` are reserved for auxiliary draws (Brownian-bridge
refinement near a boundary), which keeps the main increment sequence of a path
stable even when a run needs extra randomness.
"""

from __future__ import annotations

import numpy as np

_U64 = np.uint64
_MASK = (1 << 64) - 1


def _key(seed: int, stream: int) -> np.ndarray:
    return np.array([seed & _MASK, stream & _MASK], dtype=_U64)


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    """Main increment stream of one path."""
    return np.random.Generator(np.random.Philox(key=_key(seed, 2 * path_index)))


def refinement_generator(seed: int, path_index: int) -> np.random.Generator:
    """Auxiliary stream of one path (bridge refinement draws)."""
    return np.random.Generator(np.random.Philox(key=_key(seed, 2 * path_index + 1)))


def normal_block(seed: int, path_start: int, n_paths: int, n_steps: int) -> np.ndarray:
    """Standard-normal increments for paths ``path_start .. path_start+n_paths-1``.

    Returns an ``(n_paths, n_steps)`` array; row ``i`` is the first ``n_steps``
    draws of the stream of path ``path_start + i``.
    """
    out = np.empty((n_paths, n_steps))
    for i in range(n_paths):
        out[i] = path_generator(seed, path_start + i).standard_normal(n_steps)
    return out


def tagged_generator(seed: int, tag: str) -> np.random.Generator:
    """Stream for a named estimator (bootstrap resampling and the like).

    The tag is hashed into the second Philox key word, so distinct estimators
    sharing an experiment seed draw from independent streams.
    """
    h = 0xCBF29CE484222325
    for ch in tag.encode():
        h = ((h ^ ch) * 0x100000001B3) & _MASK
    return np.random.Generator(np.random.Philox(key=_key(seed, h | (1 << 63))))


def derive_seed(seed: int, index: int) -> int:
    """Deterministic per-horizon (or per-sub-run) seed derivation."""
    ss = np.random.SeedSequence(entropy=seed & _MASK, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
