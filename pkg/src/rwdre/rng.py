"""Deterministic counter-mode randomness.

Every random quantity in this package is produced by hashing integer
coordinates (a stream key plus things like time level, lattice site, draw
index) through a 64-bit avalanche mix.  Values can therefore be regenerated
in O(1) at any coordinate, in any order, from any thread, without storing
generator state — which is what makes environment fields immutable and
shiftable for free, and makes every Monte Carlo run independent of batch
size and thread count.

The mixing function is the splitmix64 finalizer; multi-word inputs are
absorbed sequentially (multiply by an odd constant, xor into the state,
re-mix), which keeps distinct coordinate tuples from colliding through
cheap linear relations.  The same arithmetic is re-implemented inside the
numba kernels of ``_engines``; ``tests/test_rng.py`` pins the parity.

For bulk *sequential* sampling (e.g. Poisson initial occupancies) use
``Stream.generator()``, a numpy Philox generator keyed by the stream key:
a single vectorized draw call is deterministic and order-stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_ABSORB_MULT = np.uint64(0xD6E8FEB86659FD93)

_U64_MASK = (1 << 64) - 1


def _as_u64(x) -> np.ndarray:
    """View integers (possibly negative, possibly arrays) as wrapped uint64."""
    arr = np.asarray(x)
    if arr.dtype == np.uint64:
        return arr
    return arr.astype(np.int64, casting="unsafe").view(np.uint64)


def _unwrap(x):
    """Return 0-d array results as true numpy scalars (numba-friendly)."""
    return x[()] if isinstance(x, np.ndarray) and x.ndim == 0 else x


def mix64(x):
    """splitmix64 finalizer: a bijective avalanche mix of 64-bit words."""
    x = _as_u64(x)
    with np.errstate(over="ignore"):  # modular uint64 arithmetic is the point
        x = (x ^ (x >> np.uint64(30))) * _MIX1
        x = (x ^ (x >> np.uint64(27))) * _MIX2
        return x ^ (x >> np.uint64(31))


def hash_coords(key, *coords):
    """Hash integer coordinates into uint64 words.

    ``key`` is a uint64 stream key; each coordinate may be a scalar or an
    array (all broadcast together).  Absorption is sequential, so the
    result depends on coordinate order.
    """
    with np.errstate(over="ignore"):
        h = mix64(_as_u64(key) + _GOLDEN)
    for c in coords:
        h = extend_hash(h, c)
    return _unwrap(h)


def extend_hash(h, c):
    """Absorb one more coordinate into a ``hash_coords`` chain.

    ``hash_coords(key, a, b)`` equals ``extend_hash(hash_coords(key, a), b)``,
    so a shared coordinate prefix can be hashed once and extended per draw.
    """
    with np.errstate(over="ignore"):
        return _unwrap(mix64((_as_u64(h) ^ (_as_u64(c) * _ABSORB_MULT)) + _GOLDEN))


def u01(bits) -> np.ndarray:
    """Map uint64 words to float64 uniforms in [0, 1)."""
    return _unwrap((_as_u64(bits) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53))


def uniform_at(key, *coords) -> np.ndarray:
    """Uniform(0,1) variates addressed by integer coordinates."""
    return u01(hash_coords(key, *coords))


def fold_tag(tag) -> int:
    """Fold a string or integer tag into a uint64 word (stable across runs)."""
    if isinstance(tag, (int, np.integer)):
        return int(_as_u64(int(tag)))
    with np.errstate(over="ignore"):
        h = mix64(np.uint64(len(tag)) + _GOLDEN)
        for b in tag.encode("utf-8"):
            h = mix64((h ^ (np.uint64(b) * _ABSORB_MULT)) + _GOLDEN)
    return int(h)


@dataclass(frozen=True)
class Stream:
    """An addressable randomness source identified by a single uint64 key.

    ``child(*tags)`` derives an independent stream; tags may be strings
    ("env", "walk") or integers (replica index).  ``uniforms`` evaluates
    the counter-mode uniforms at integer coordinates; ``generator`` gives
    a numpy Philox generator for bulk sequential draws.
    """

    key: int

    @staticmethod
    def from_seed(seed: int) -> "Stream":
        with np.errstate(over="ignore"):
            return Stream(int(mix64(_as_u64(int(seed)) + _GOLDEN)))

    def child(self, *tags) -> "Stream":
        h = np.uint64(self.key & _U64_MASK)
        with np.errstate(over="ignore"):
            for t in tags:
                h = mix64((h ^ (np.uint64(fold_tag(t)) * _ABSORB_MULT)) + _GOLDEN)
        return Stream(int(h))

    def uniforms(self, *coords) -> np.ndarray:
        return uniform_at(np.uint64(self.key & _U64_MASK), *coords)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.key & _U64_MASK))
