"""Classic Bloom filter over unsigned 64-bit element ids.

Bits are stored packed, least-significant bit first: bit ``b`` lives in
byte ``b // 8`` at position ``b % 8``. The same layout is used by the hex
serialization and by :class:`graphdna.dna.DnaMatrix`, so a filter's bytes
can be copied into a DNA row verbatim.

Hash positions come from a seeded 64-bit mixer (the SplitMix64 finalizer)
applied to the element id, i.e. to its 8-byte little-endian encoding read
back as an unsigned integer. Two schemes are available:

``double``
    h_t(x) = (h1(x) + t * h2(x)) mod c, the default.
``independent``
    k separately seeded hashes, used where the analysis assumes fully
    independent hash functions (see :mod:`graphdna.bounds`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

SCHEMES = ("double", "independent")


def mix64(x):
    """SplitMix64 finalizer, vectorized over uint64 arrays (wraps mod 2**64)."""
    z = np.asarray(x, dtype=np.uint64) + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _u64(seed) -> np.ndarray:
    if isinstance(seed, (int, np.integer)):
        return np.array(int(seed) & _MASK64, dtype=np.uint64)
    return np.asarray(seed, dtype=np.uint64)


def hash_positions(ids, k: int, c: int, seed=0, scheme: str = "double") -> np.ndarray:
    """Bit positions of ``ids`` under the family ``(seed, k, c, scheme)``.

    ``ids`` and ``seed`` broadcast against each other, which lets callers
    hash the same ids under many independent families at once. The result
    has shape ``broadcast(ids, seed).shape + (k,)`` and dtype int64.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown hash scheme {scheme!r}")
    x = np.asarray(ids)
    if x.dtype.kind == "i" and x.size and x.min() < 0:
        raise ValueError("element ids must be non-negative")
    x = x.astype(np.uint64)
    s = _u64(seed)
    with np.errstate(over="ignore"):
        if scheme == "double":
            a = mix64(s * np.uint64(2))
            b = mix64(s * np.uint64(2) + np.uint64(1))
            h1 = (mix64(x ^ a) % np.uint64(c)).astype(np.int64)
            if c > 1:
                # step in 1..c-1 so the k positions never all coincide
                h2 = (mix64(x ^ b) % np.uint64(c - 1)).astype(np.int64) + 1
            else:
                h2 = np.zeros_like(h1)
            t = np.arange(k, dtype=np.int64)
            return (h1[..., None] + t * h2[..., None]) % c
        cols = []
        for t in range(k):
            st = mix64(s ^ mix64(np.uint64(t + 1)))
            cols.append((mix64(x ^ st) % np.uint64(c)).astype(np.int64))
        return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class HashFamily:
    """k seeded hash functions onto ``{0..c-1}``."""

    k: int
    c: int
    master_seed: int = 0
    scheme: str = "double"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.c < 1:
            raise ValueError(f"c must be >= 1, got {self.c}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown hash scheme {self.scheme!r}")
        if not 0 <= int(self.master_seed) <= _MASK64:
            raise ValueError("master_seed must fit in 64 unsigned bits")

    def positions(self, ids) -> np.ndarray:
        return hash_positions(ids, self.k, self.c, self.master_seed, self.scheme)

    def __call__(self, x: int) -> list[int]:
        return [int(p) for p in self.positions(np.array([x]))[0]]


def estimate_cardinality(popcount, c: int, k: int):
    """-(c/k) * ln(1 - popcount/c); +inf for a saturated filter. Vectorized."""
    pop = np.asarray(popcount, dtype=np.float64)
    with np.errstate(divide="ignore"):
        est = -(c / k) * np.log1p(-pop / c)
    est = np.where(pop >= c, np.inf, est)
    return float(est) if est.ndim == 0 else est


def params_for(capacity: int, fpr: float) -> tuple[int, int]:
    """Sizing from the 1.44 * log2(1/fpr) bits-per-key rule.

    Returns ``(c, k)`` with c rounded up to a multiple of 8.
    """
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    if not 0.0 < fpr < 1.0:
        raise ValueError(f"fpr must lie in (0, 1), got {fpr}")
    bits_per_key = math.log2(1.0 / fpr)
    k = max(1, math.ceil(bits_per_key))
    c = math.ceil(capacity * 1.44 * bits_per_key)
    c = -(-c // 8) * 8
    return c, k


class BloomFilter:
    """Fixed-size Bloom filter with add / union / contains / size estimate."""

    def __init__(self, c: int, family: HashFamily):
        if c < 1:
            raise ValueError(f"c must be >= 1, got {c}")
        if family.c != c:
            raise ValueError(f"family maps onto {family.c} bits, filter has {c}")
        self.c = c
        self.family = family
        self.b = np.zeros((c + 7) // 8, dtype=np.uint8)

    @classmethod
    def create(cls, c: int, k: int, master_seed: int = 0, scheme: str = "double"):
        return cls(c, HashFamily(k, c, master_seed, scheme))

    @property
    def k(self) -> int:
        return self.family.k

    def _set(self, pos: np.ndarray) -> None:
        pos = np.asarray(pos, dtype=np.int64).ravel()
        np.bitwise_or.at(self.b, pos >> 3, (1 << (pos & 7)).astype(np.uint8))

    def add(self, x: int) -> None:
        self._set(self.family.positions(np.array([x])))

    def update(self, xs) -> None:
        """Add many elements at once."""
        self._set(self.family.positions(np.asarray(xs)))

    def contains(self, x: int) -> bool:
        return bool(self.contains_many(np.array([x]))[0])

    def contains_many(self, xs) -> np.ndarray:
        pos = self.family.positions(np.asarray(xs))
        hit = (self.b[pos >> 3] >> (pos & 7).astype(np.uint8)) & 1
        return hit.all(axis=-1)

    __contains__ = contains

    def union(self, other: "BloomFilter") -> None:
        """In-place bitwise OR of ``other`` into this filter."""
        if other.c != self.c or other.family != self.family:
            raise ValueError("union requires filters with identical size and hash family")
        np.bitwise_or(self.b, other.b, out=self.b)

    def popcount(self) -> int:
        return int(np.bitwise_count(self.b).sum())

    def estimate_size(self) -> float:
        return estimate_cardinality(self.popcount(), self.c, self.k)

    def bits(self) -> np.ndarray:
        """Unpacked boolean view of length c."""
        return np.unpackbits(self.b, bitorder="little")[: self.c].astype(bool)

    def copy(self) -> "BloomFilter":
        out = BloomFilter(self.c, self.family)
        out.b[:] = self.b
        return out

    def __eq__(self, other):
        if not isinstance(other, BloomFilter):
            return NotImplemented
        return self.family == other.family and np.array_equal(self.b, other.b)

    def __repr__(self):
        return f"BloomFilter(c={self.c}, k={self.k}, popcount={self.popcount()})"

    def to_hex(self) -> str:
        return self.b.tobytes().hex()

    def dumps(self) -> str:
        """Two-line record: ``c k master_seed`` header, then the bits in hex."""
        return f"{self.c} {self.k} {self.family.master_seed}\n{self.to_hex()}\n"

    @classmethod
    def loads(cls, text: str, scheme: str = "double") -> "BloomFilter":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if len(lines) != 2:
            raise ValueError("expected a header line and a hex line")
        try:
            c, k, seed = (int(v) for v in lines[0].split())
        except ValueError as exc:
            raise ValueError(f"bad bloom header {lines[0]!r}") from exc
        out = cls.create(c, k, seed, scheme)
        out.b[:] = hex_to_bytes(lines[1].strip(), c)
        return out


def hex_to_bytes(hex_row: str, c: int) -> np.ndarray:
    """Decode one hex-encoded bit row of width ``c``; padding bits must be 0."""
    nbytes = (c + 7) // 8
    if len(hex_row) != 2 * nbytes or hex_row != hex_row.lower():
        raise ValueError(f"hex row has {len(hex_row)} chars, expected {2 * nbytes} lowercase")
    try:
        raw = np.frombuffer(bytes.fromhex(hex_row), dtype=np.uint8)
    except ValueError as exc:
        raise ValueError("corrupt hex row") from exc
    if c % 8 and raw[-1] >> (c % 8):
        raise ValueError("bits set beyond the declared width")
    return raw.copy()
