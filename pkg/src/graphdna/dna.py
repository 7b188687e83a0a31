"""Graph DNA: per-node Bloom-filter signatures of d-hop neighborhoods.

Every node starts with a filter holding only itself. Each round, a node's
new filter is its own previous filter OR-ed with the previous filters of
its neighbors (ascending id order). After ``d`` rounds row ``i`` covers
every node within ``d`` hops of ``i``. Rounds are synchronous: round ``s``
reads only round ``s - 1``.

With a finite ``theta`` a node stops absorbing neighbors for the rest of a
round as soon as the estimated cardinality of its filter exceeds
``theta``; this keeps hub nodes from saturating.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .bloom import BloomFilter, HashFamily, estimate_cardinality, hex_to_bytes
from .errors import InputError

FORMAT_TAG = "DNA1"


@dataclass(frozen=True)
class DnaConfig:
    c: int = 500
    k: int = 4
    d: int = 1
    theta: float = math.inf
    master_seed: int = 0

    def __post_init__(self):
        if self.c < 1 or self.k < 1:
            raise ValueError("c and k must be >= 1")
        if self.d < 0:
            raise ValueError("depth d must be >= 0")
        if not self.theta > 0:
            raise ValueError("theta must be > 0 (use inf to disable)")

    @property
    def family(self) -> HashFamily:
        return HashFamily(self.k, self.c, self.master_seed)


class DnaMatrix:
    """Stacked packed bit rows, one Bloom filter per node."""

    def __init__(self, rows: np.ndarray, c: int, k: int, d: int,
                 theta: float = math.inf, master_seed: int = 0):
        rows = np.ascontiguousarray(rows, dtype=np.uint8)
        if rows.ndim != 2 or rows.shape[1] != (c + 7) // 8:
            raise InputError(f"rows have shape {rows.shape}, expected (n, {(c + 7) // 8})")
        self.rows = rows
        self.c = c
        self.k = k
        self.d = d
        self.theta = theta
        self.master_seed = master_seed

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def family(self) -> HashFamily:
        return HashFamily(self.k, self.c, self.master_seed)

    @property
    def config(self) -> DnaConfig:
        return DnaConfig(self.c, self.k, self.d, self.theta, self.master_seed)

    def popcounts(self) -> np.ndarray:
        return np.bitwise_count(self.rows).sum(axis=1, dtype=np.int64)

    @property
    def nnz(self) -> int:
        return int(self.popcounts().sum())

    def filter(self, i: int) -> BloomFilter:
        f = BloomFilter(self.c, self.family)
        f.b[:] = self.rows[i]
        return f

    def contains(self, i: int, x) -> bool | np.ndarray:
        """Membership of element(s) ``x`` in row ``i``."""
        scalar = np.ndim(x) == 0
        pos = self.family.positions(np.atleast_1d(x))
        row = self.rows[i]
        hit = ((row[pos >> 3] >> (pos & 7).astype(np.uint8)) & 1).all(axis=-1)
        return bool(hit[0]) if scalar else hit

    def common_bits(self, i: int, j: int) -> int:
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise IndexError(f"node out of range for n={self.n}")
        return int(np.bitwise_count(self.rows[i] & self.rows[j]).sum())

    def bits(self) -> np.ndarray:
        """Dense boolean n x c view."""
        return np.unpackbits(self.rows, axis=1, bitorder="little")[:, : self.c].astype(bool)

    def triplets(self) -> tuple[np.ndarray, np.ndarray]:
        """(node, bit) pairs of all set bits, sorted by node then bit."""
        node, bit = np.nonzero(self.bits())
        return node.astype(np.int64), bit.astype(np.int64)

    def to_csr(self) -> sp.csr_matrix:
        node, bit = self.triplets()
        data = np.ones(len(node), dtype=np.float64)
        return sp.csr_matrix((data, (node, bit)), shape=(self.n, self.c))

    def __eq__(self, other):
        if not isinstance(other, DnaMatrix):
            return NotImplemented
        return (self.config == other.config) and np.array_equal(self.rows, other.rows)

    def __repr__(self):
        return f"DnaMatrix(n={self.n}, c={self.c}, k={self.k}, d={self.d}, nnz={self.nnz})"

    def save(self, path) -> None:
        save(self, path)


def initial_rows(n: int, family: HashFamily) -> np.ndarray:
    """Depth-0 rows: node i's filter holds exactly {i}."""
    c = family.c
    rows = np.zeros((n, (c + 7) // 8), dtype=np.uint8)
    if n == 0:
        return rows
    pos = family.positions(np.arange(n))
    node = np.repeat(np.arange(n), family.k)
    flat = pos.ravel()
    np.bitwise_or.at(rows, (node, flat >> 3), (1 << (flat & 7)).astype(np.uint8))
    return rows


def propagate(prev: np.ndarray, indptr: np.ndarray, indices: np.ndarray,
              c: int, k: int, theta: float = math.inf) -> np.ndarray:
    """One synchronous round over a CSR neighbor structure."""
    new = prev.copy()
    deg = np.diff(indptr)
    if math.isinf(theta):
        has = np.flatnonzero(deg)
        if len(has):
            gathered = prev[indices]
            merged = np.bitwise_or.reduceat(gathered, indptr[has], axis=0)
            new[has] |= merged
        return new
    # neighbor slot t of every still-active node at once; a node leaves
    # the round as soon as its estimate exceeds theta
    active = np.flatnonzero(deg)
    t = 0
    while len(active):
        est = estimate_cardinality(np.bitwise_count(new[active]).sum(axis=1), c, k)
        active = active[np.asarray(est) <= theta]
        if not len(active):
            break
        new[active] |= prev[indices[indptr[active] + t]]
        t += 1
        active = active[deg[active] > t]
    return new


def encode(g, cfg: DnaConfig, *, on_round=None) -> DnaMatrix:
    """Run ``cfg.d`` propagation rounds over graph ``g``.

    ``on_round(s, rows)`` is called after each round, mainly for timing
    and diagnostics.
    """
    rows = initial_rows(g.n, cfg.family)
    indptr = np.asarray(g.indptr, dtype=np.int64)
    indices = np.asarray(g.indices, dtype=np.int64)
    for s in range(1, cfg.d + 1):
        rows = propagate(rows, indptr, indices, cfg.c, cfg.k, cfg.theta)
        if on_round is not None:
            on_round(s, rows)
    return DnaMatrix(rows, cfg.c, cfg.k, cfg.d, cfg.theta, cfg.master_seed)


def _fmt_theta(theta: float) -> str:
    return "inf" if math.isinf(theta) else repr(float(theta))


def save(b: DnaMatrix, path) -> None:
    """Header ``DNA1 n c k d theta master_seed`` then one hex row per node."""
    with open(path, "w") as fh:
        fh.write(f"{FORMAT_TAG} {b.n} {b.c} {b.k} {b.d} {_fmt_theta(b.theta)} {b.master_seed}\n")
        for row in b.rows:
            fh.write(row.tobytes().hex())
            fh.write("\n")


def load(path) -> DnaMatrix:
    with open(path) as fh:
        header = fh.readline()
        if not header.strip():
            raise InputError(f"{path}: empty DNA file")
        parts = header.split()
        if len(parts) != 7 or parts[0] != FORMAT_TAG:
            raise InputError(f"{path}: bad header {header.strip()!r}")
        try:
            n, c, k, d = (int(v) for v in parts[1:5])
            theta = float(parts[5])
            seed = int(parts[6])
        except ValueError as exc:
            raise InputError(f"{path}: bad header {header.strip()!r}") from exc
        lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) != n:
        raise InputError(f"{path}: header declares {n} rows, found {len(lines)}")
    rows = np.zeros((n, (c + 7) // 8), dtype=np.uint8)
    for i, ln in enumerate(lines):
        try:
            rows[i] = hex_to_bytes(ln, c)
        except ValueError as exc:
            raise InputError(f"{path}: row {i}: {exc}") from exc
    return DnaMatrix(rows, c, k, d, theta, seed)


def save_triplets(b: DnaMatrix, path) -> None:
    node, bit = b.triplets()
    with open(path, "w") as fh:
        fh.write(f"# n={b.n} c={b.c}\n")
        fh.writelines(f"{i} {j}\n" for i, j in zip(node, bit))
