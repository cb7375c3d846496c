"""Counter-based deterministic random streams.

Every source of randomness in the package draws from a `Stream`, which is a
keyed hash counter: the key is derived from a 64-bit seed plus a label path,
and each draw hashes the next counter value. Substreams are independent, so
adding one more entity to a simulation never reshuffles the draws of the
entities that already existed.
"""

from __future__ import annotations

import hashlib
import struct

_U64 = 2**64


class Stream:
    """One independent random stream, identified by (seed, *path)."""

    __slots__ = ("_key", "_counter")

    def __init__(self, seed: int, *path: object):
        material = repr((int(seed) % _U64,) + tuple(str(p) for p in path))
        self._key = hashlib.blake2b(material.encode("utf-8"), digest_size=32).digest()
        self._counter = 0

    def substream(self, *path: object) -> "Stream":
        child = Stream.__new__(Stream)
        material = self._key + repr(tuple(str(p) for p in path)).encode("utf-8")
        child._key = hashlib.blake2b(material, digest_size=32).digest()
        child._counter = 0
        return child

    def u64(self) -> int:
        block = hashlib.blake2b(
            struct.pack("<Q", self._counter), key=self._key, digest_size=8
        ).digest()
        self._counter += 1
        return struct.unpack("<Q", block)[0]

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (self.u64() / _U64) * (hi - lo)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in the closed interval [lo, hi]."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.u64() % (hi - lo + 1)

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p

    def choice(self, seq):
        if not seq:
            raise ValueError("choice from empty sequence")
        return seq[self.randint(0, len(seq) - 1)]

    def shuffle(self, items: list) -> list:
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.randint(0, i)
            out[i], out[j] = out[j], out[i]
        return out

    def sample(self, seq, k: int) -> list:
        if k > len(seq):
            raise ValueError("sample larger than population")
        return self.shuffle(list(seq))[:k]
