"""Keyed random streams.

Every stream is a Philox-4x64 counter generator whose 128-bit key is a SHA-256
digest of ``(root_seed, *path)``. Uniform and normal variates are produced
here from the raw 64-bit words instead of through ``numpy.random.Generator``
so the sequence does not depend on numpy's distribution code.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

_TWO_POW_M53 = 2.0 ** -53


def derive_key(root_seed: int, path) -> int:
    payload = json.dumps([int(root_seed), *[str(p) for p in path]], separators=(",", ":"))
    return int.from_bytes(hashlib.sha256(payload.encode("utf-8")).digest()[:16], "little")


class RandomStream:
    """Deterministic sub-stream addressed by ``(root_seed, path)``.

    >>> a = RandomStream(7, ("scene", "0", "lidar", "calibration"))
    >>> b = RandomStream(7, ("scene", "0", "lidar", "calibration"))
    >>> a.uniform(-1, 1, 3).tolist() == b.uniform(-1, 1, 3).tolist()
    True
    """

    def __init__(self, root_seed: int, path=()):
        if not -(2 ** 63) <= int(root_seed) < 2 ** 64:
            raise ValueError("root_seed must fit in 64 bits")
        self.root_seed = int(root_seed)
        self.path = tuple(str(p) for p in path)
        self._bits = np.random.Philox(key=derive_key(self.root_seed, self.path))

    def child(self, *parts) -> "RandomStream":
        return RandomStream(self.root_seed, self.path + tuple(parts))

    def random(self, size=None):
        """Uniform on [0, 1) with 53 random bits."""
        n = 1 if size is None else int(size)
        raw = self._bits.random_raw(n)
        out = (raw >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53
        return float(out[0]) if size is None else out

    def uniform(self, low: float, high: float, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def normal(self, sigma: float = 1.0, size=None):
        """Zero-mean Gaussian via Box-Muller; one pair of uniforms per variate."""
        n = 1 if size is None else int(size)
        u1 = 1.0 - self.random(n)
        u2 = self.random(n)
        z = np.array([math.sqrt(-2.0 * math.log(a)) * math.cos(2.0 * math.pi * b) for a, b in zip(u1, u2)])
        z = sigma * z
        return float(z[0]) if size is None else z
