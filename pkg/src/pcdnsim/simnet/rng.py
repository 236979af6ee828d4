"""Seeded randomness: one root seed, independent counter-based streams per
entity. Adding an entity never perturbs any other entity's draws because
each stream is keyed, not sequentially split.
"""

import numpy as np

from pcdnsim._kernels import MASK64, digest64


def stream(root_seed: int, label: str) -> np.random.Generator:
    """Independent generator for (root_seed, label)."""
    key = (digest64(label.encode()) << 64) | (root_seed & MASK64)
    return np.random.Generator(np.random.Philox(key=key))


class StreamSet:
    """Lazily-created named streams under one root seed."""

    def __init__(self, root_seed: int):
        self.root_seed = root_seed
        self._streams: dict[str, np.random.Generator] = {}

    def get(self, label: str) -> np.random.Generator:
        s = self._streams.get(label)
        if s is None:
            s = self._streams[label] = stream(self.root_seed, label)
        return s
