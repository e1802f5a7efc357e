"""Counter-based random streams.

Every stream is a Philox generator keyed by the master seed and a purpose
tag; the stream index occupies the high words of the 256-bit counter, so
streams never overlap and can be created in any order.
"""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag(purpose):
    return zlib.crc32(purpose.encode("ascii"))


def stream(seed, purpose, index=0, subindex=0):
    """Return an independent generator for ``(seed, purpose, index, subindex)``."""
    seed = int(seed)
    if seed < 0 or seed > _MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    key = np.array([seed, _tag(purpose)], dtype=np.uint64)
    counter = np.array([0, 0, int(subindex), int(index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
