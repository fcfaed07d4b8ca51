"""Counter-based random streams for reproducible parallel Monte Carlo.

Every random quantity in this package is a pure function of a 64-bit master
seed and a structured address (purpose tag, path index, step index, ...).
Streams never carry mutable state, so ensembles can be evaluated in any
order, in chunks of any size, and still produce bit-identical results.

The generator is the SplitMix64 finalizer applied to a key/counter pair,
vectorized over numpy uint64 arrays.
"""

from __future__ import annotations

import math

import numpy as np

U64 = np.uint64
_GOLDEN = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)
_MASK64 = 0xFFFFFFFFFFFFFFFF
_SCALE53 = float(2**-53)

# Domain-separation tags. Distinct tags give statistically independent
# stream families from the same master seed.
TAG_GRID_OFFSET = 0x0F
TAG_CELL = 0x1C
TAG_NOISE = 0x4E
TAG_BRIDGE_LOW = 0xB0
TAG_BRIDGE_HIGH = 0xB1
TAG_FIELD_SEED = 0xF5


def _as_u64(x) -> np.ndarray:
    """Coerce ints / int arrays to uint64, signed values taken mod 2**64."""
    if isinstance(x, (int, np.integer)):
        return np.asarray(int(x) & _MASK64, dtype=U64)
    a = np.asarray(x)
    if a.dtype.kind == "u":
        return a.astype(U64, copy=False)
    if a.dtype.kind == "i":
        return np.ascontiguousarray(a, dtype=np.int64).view(U64)
    raise TypeError(f"stream address words must be integers, got {a.dtype}")


def mix64(z) -> np.ndarray:
    """SplitMix64 finalizer on uint64 arrays (elementwise, wrapping)."""
    z = np.asarray(z, dtype=U64)
    z = (z ^ (z >> U64(30))) * _MIX1
    z = (z ^ (z >> U64(27))) * _MIX2
    return z ^ (z >> U64(31))


def derive_key(seed, *words) -> np.ndarray:
    """Fold (seed, word, word, ...) into a stream key.

    Words may be scalars or broadcastable integer arrays. The result
    broadcasts over all inputs; the (seed, words) tuple is the provenance
    of every draw made from the returned key.
    """
    key = mix64(_as_u64(seed) + _GOLDEN)
    for w in words:
        key = mix64(key ^ (_as_u64(w) + _GOLDEN))
    return key


def fold_word(key, word) -> np.ndarray:
    """Extend a key by one more address word (broadcasts)."""
    return mix64(np.asarray(key, dtype=U64) ^ (_as_u64(word) + _GOLDEN))


def words_at(key, index) -> np.ndarray:
    """index-th output word of the stream identified by key (broadcasts)."""
    idx = _as_u64(index)
    return mix64(np.asarray(key, dtype=U64) + (idx + U64(1)) * _GOLDEN)


def uniform_from(word) -> np.ndarray:
    """Map uint64 words to uniforms in [0, 1)."""
    return (np.asarray(word, dtype=U64) >> U64(11)).astype(np.float64) * _SCALE53


def uniform_open_from(word) -> np.ndarray:
    """Map uint64 words to uniforms in (0, 1] (safe for log())."""
    return ((np.asarray(word, dtype=U64) >> U64(11)) + U64(1)).astype(np.float64) * _SCALE53


def uniform_block(key, start: int, count: int) -> np.ndarray:
    """count uniforms in [0,1) at word indices start..start+count-1.

    key may be an array of shape (n,); the result then has shape (n, count).
    """
    key = np.asarray(key, dtype=U64)
    idx = np.arange(start, start + count, dtype=np.uint64)
    if key.ndim:
        return uniform_from(words_at(key[..., None], idx))
    return uniform_from(words_at(key, idx))


def normal_block(key, start: int, count: int) -> np.ndarray:
    """count standard normals at normal-indices start..start+count-1.

    Normals come in Box-Muller pairs anchored at even indices, so any
    sub-block of a stream is reproducible independently of how the
    surrounding block was partitioned.
    """
    key = np.asarray(key, dtype=U64)
    p0 = start >> 1
    p1 = (start + count - 1) >> 1
    npairs = p1 - p0 + 1
    widx = np.arange(2 * p0, 2 * p0 + 2 * npairs, dtype=np.uint64)
    w = words_at(key[..., None], widx) if key.ndim else words_at(key, widx)
    u1 = uniform_open_from(w[..., 0::2])
    u2 = uniform_from(w[..., 1::2])
    r = np.sqrt(-2.0 * np.log(u1))
    theta = (2.0 * math.pi) * u2
    out = np.empty(w.shape[:-1] + (2 * npairs,))
    out[..., 0::2] = r * np.cos(theta)
    out[..., 1::2] = r * np.sin(theta)
    lo = start - 2 * p0
    return out[..., lo:lo + count]


class NoiseStream:
    """Gaussian increment stream for one simulated path.

    Increment i (shape (dim,)) is a pure function of
    (master_seed, path_index, i); a path can therefore be extended or
    re-simulated without replaying earlier draws.
    """

    def __init__(self, master_seed: int, path_index: int, dim: int, step: float):
        self.master_seed = int(master_seed) & _MASK64
        self.path_index = int(path_index)
        self.dim = int(dim)
        self.step = float(step)
        self._key = derive_key(master_seed, TAG_NOISE, path_index)
        self._lo_key = derive_key(master_seed, TAG_BRIDGE_LOW, path_index)
        self._hi_key = derive_key(master_seed, TAG_BRIDGE_HIGH, path_index)

    def increments(self, i0: int, i1: int) -> np.ndarray:
        """Increments for steps i0..i1-1, shape (i1-i0, dim), N(0, step*I)."""
        n = i1 - i0
        z = normal_block(self._key, i0 * self.dim, n * self.dim)
        return math.sqrt(self.step) * z.reshape(n, self.dim)

    def bridge_uniforms(self, i0: int, i1: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-step uniforms in (0,1] for bridge minimum/maximum sampling."""
        idx = np.arange(i0, i1, dtype=np.uint64)
        u_lo = uniform_open_from(words_at(self._lo_key, idx))
        u_hi = uniform_open_from(words_at(self._hi_key, idx))
        return u_lo, u_hi


def field_seed_for_path(master_seed, path_index) -> np.ndarray:
    """Per-path environment seed: an independent realization for each path."""
    return derive_key(master_seed, TAG_FIELD_SEED, path_index)
