"""Counter-based random streams.

Every random number is addressed by ``(seed, purpose, index)``: the 128-bit
Philox key holds the seed and a purpose tag, and the index picks one 64-bit
word of the counter sequence.  Any slice of a stream can therefore be
produced independently, and splitting the work into chunks (serially or on
threads) yields bit-identical output.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

_MASK64 = (1 << 64) - 1

# purpose tags
OUTCOMES = 0
KEEP = 1
JITTER = 2
DARK_BASE = 16

_CHUNK = 1 << 18  # words; multiple of the 4-word Philox block


def _bit_generator(seed: int, purpose: int) -> np.random.Philox:
    if seed < 0 or seed > _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Philox(key=np.array([seed, purpose], dtype=np.uint64))


def generator(seed: int, purpose: int) -> np.random.Generator:
    """Sequential generator for one purpose (used where counts are random)."""
    return np.random.Generator(_bit_generator(seed, purpose))


def uniforms(seed: int, purpose: int, start: int, count: int) -> np.ndarray:
    """Words ``start .. start+count-1`` of the stream as doubles in [0, 1)."""
    bg = _bit_generator(seed, purpose)
    skip = start % 4
    bg.advance(start // 4)
    return np.random.Generator(bg).random(skip + count)[skip:]


def uniforms_chunked(seed: int, purpose: int, count: int, workers: int = 1) -> np.ndarray:
    """Same values as ``uniforms(seed, purpose, 0, count)``, optionally on threads."""
    starts = list(range(0, count, _CHUNK))
    if workers <= 1 or len(starts) <= 1:
        return uniforms(seed, purpose, 0, count)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(lambda s: uniforms(seed, purpose, s, min(_CHUNK, count - s)), starts)
        return np.concatenate(list(parts))


def open_uniforms(u: np.ndarray) -> np.ndarray:
    """Map [0, 1) doubles into (0, 1) by moving them half a step up."""
    return u + 2.0**-54
