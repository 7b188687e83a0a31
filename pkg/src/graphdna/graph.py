"""Undirected weighted user graphs.

Graphs are held as symmetric scipy CSR matrices with sorted column
indices and an empty diagonal. Besides ingestion and the Laplacian this
module provides the two ways of feeding deeper structure to a regularizer:
explicit sums of adjacency powers (:func:`power_combine`) and the
pseudo-node augmentation with a DNA matrix (:func:`augment`).
"""
from __future__ import annotations

import logging
import numpy as np
import scipy.sparse as sp

from .errors import InputError, NnzCapError

log = logging.getLogger(__name__)

DEFAULT_NNZ_CAP = 200_000_000


class SparseGraph:
    """Symmetric weighted adjacency over ``n`` nodes, no self-loops."""

    def __init__(self, adjacency: sp.spmatrix):
        a = sp.csr_matrix(adjacency, dtype=np.float64)
        if a.shape[0] != a.shape[1]:
            raise InputError(f"adjacency must be square, got {a.shape}")
        a.eliminate_zeros()
        a.sort_indices()
        self.adjacency = a

    @classmethod
    def from_edges(cls, rows, cols, weights=None, n=None) -> "SparseGraph":
        """Build from one-directional triplets; symmetrizes, keeps max weight."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        w = np.ones(len(rows)) if weights is None else np.asarray(weights, dtype=np.float64)
        if not (len(rows) == len(cols) == len(w)):
            raise InputError("edge arrays differ in length")
        if len(rows) and (rows.min() < 0 or cols.min() < 0):
            raise InputError("node ids must be non-negative")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InputError("edge weights must be finite and non-negative")
        top = int(max(rows.max(initial=-1), cols.max(initial=-1))) + 1
        if n is None:
            n = top
        elif top > n:
            raise InputError(f"node id {top - 1} out of range for n={n}")
        keep = rows != cols
        r = np.concatenate([rows[keep], cols[keep]])
        c = np.concatenate([cols[keep], rows[keep]])
        ww = np.concatenate([w[keep], w[keep]])
        # duplicates collapse to their max weight
        order = np.lexsort((-ww, c, r))
        r, c, ww = r[order], c[order], ww[order]
        first = np.ones(len(r), dtype=bool)
        first[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
        a = sp.csr_matrix((ww[first], (r[first], c[first])), shape=(n, n))
        return cls(a)

    @classmethod
    def empty(cls, n: int) -> "SparseGraph":
        return cls(sp.csr_matrix((n, n)))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def nnz(self) -> int:
        return self.adjacency.nnz

    @property
    def indptr(self) -> np.ndarray:
        return self.adjacency.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.adjacency.indices

    def degrees(self) -> np.ndarray:
        """Neighbor counts (unweighted)."""
        return np.diff(self.adjacency.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Both directions, sorted by (i, j)."""
        coo = self.adjacency.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order].astype(np.int64), coo.col[order].astype(np.int64), coo.data[order]

    def laplacian(self) -> sp.csr_matrix:
        return laplacian(self)

    def is_symmetric(self) -> bool:
        diff = self.adjacency - self.adjacency.T
        return diff.nnz == 0 or np.abs(diff.data).max() == 0

    def __eq__(self, other):
        if not isinstance(other, SparseGraph):
            return NotImplemented
        if self.adjacency.shape != other.adjacency.shape:
            return False
        return (self.adjacency != other.adjacency).nnz == 0

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, nnz={self.nnz})"


class AugmentedGraph(SparseGraph):
    """``[[G, B], [B^T, 0]]`` over n real nodes followed by c bit nodes."""

    def __init__(self, adjacency, base: SparseGraph, dna):
        super().__init__(adjacency)
        self.base = base
        self.dna = dna

    @property
    def n_real(self) -> int:
        return self.base.n

    @property
    def n_pseudo(self) -> int:
        return self.n - self.base.n


def erdos_renyi(n: int, p: float, rng=None) -> SparseGraph:
    """G(n, p): each of the n(n-1)/2 possible edges independently with prob p.

    The edge count is drawn from its binomial law and the edge set is then
    sampled uniformly without replacement, which is equivalent and avoids
    touching all pairs.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must lie in [0, 1], got {p}")
    rng = np.random.default_rng(rng)
    pairs = n * (n - 1) // 2
    m = int(rng.binomial(pairs, p)) if pairs else 0
    idx = np.sort(rng.choice(pairs, size=m, replace=False)) if m else np.zeros(0, np.int64)
    # unrank idx -> (i, j), i < j, in row-major upper-triangle order
    idx = idx.astype(np.int64)
    rows = np.arange(n, dtype=np.int64)
    starts = rows * (2 * n - rows - 1) // 2
    i = np.searchsorted(starts, idx, side="right") - 1
    start = starts[i]
    j = idx - start + i + 1
    return SparseGraph.from_edges(i, j, n=n)


def load_edges(path, n: int | None = None) -> SparseGraph:
    """Read ``i j [w]`` lines (0-based ids). ``#`` starts a comment.

    A leading ``# n=<count>`` comment declares the node count (so isolated
    trailing nodes survive a round trip) unless ``n`` is passed explicitly.
    """
    if n is None:
        n = read_declared_n(path)
    rows, cols, ws = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise InputError(f"{path}:{lineno}: expected 'i j [w]', got {line!r}")
            try:
                i, j = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: malformed line {line!r}") from exc
            if i < 0 or j < 0:
                raise InputError(f"{path}:{lineno}: negative node id")
            if n is not None and (i >= n or j >= n):
                raise InputError(f"{path}:{lineno}: node id out of range for n={n}")
            if w < 0 or not np.isfinite(w):
                raise InputError(f"{path}:{lineno}: invalid weight {w}")
            rows.append(i)
            cols.append(j)
            ws.append(w)
    return SparseGraph.from_edges(rows, cols, ws, n=n)


def save_edges(g: SparseGraph, path, both_directions: bool = True) -> None:
    """Triplet export ``i j w`` sorted by (i, j)."""
    r, c, w = g.triplets()
    if not both_directions:
        keep = r < c
        r, c, w = r[keep], c[keep], w[keep]
    with open(path, "w") as fh:
        fh.write(f"# n={g.n}\n")
        fh.writelines(f"{a} {b} {x:.17g}\n" for a, b, x in zip(r, c, w))


def read_declared_n(path) -> int | None:
    """Node count from a leading ``# n=<int>`` comment, if present."""
    with open(path) as fh:
        first = fh.readline().strip()
    if first.startswith("# n="):
        try:
            return int(first[4:])
        except ValueError:
            return None
    return None


def laplacian(g: SparseGraph) -> sp.csr_matrix:
    """L = D - W with D the weighted degrees."""
    w = g.adjacency
    deg = np.asarray(w.sum(axis=1)).ravel()
    return (sp.diags(deg, format="csr") - w).tocsr()


def _checked_product(a: sp.csr_matrix, b: sp.csr_matrix, cap: int, stage: str,
                     resident: int = 0, block_rows: int = 4096) -> sp.csr_matrix:
    """a @ b in row blocks, refusing once resident + produced nnz passes cap.

    Peak memory stays near one block beyond the cap check; nothing larger
    than ``cap`` entries is ever materialized.
    """
    blocks = []
    total = 0
    for lo in range(0, a.shape[0], block_rows):
        blk = (a[lo:lo + block_rows] @ b).tocsr()
        total += blk.nnz
        if resident + total > cap:
            raise NnzCapError(cap, resident + total, stage)
        blocks.append(blk)
    if not blocks:
        return sp.csr_matrix((a.shape[0], b.shape[1]))
    return sp.vstack(blocks, format="csr")


def power_combine(g: SparseGraph, weights, threshold: float = 0.0,
                  nnz_cap: int = DEFAULT_NNZ_CAP) -> SparseGraph:
    """Sum_i weights[i-1] * G^i with the diagonal dropped and small entries cut.

    Entries with ``|value| < threshold`` are removed. Powers are true matrix
    powers of the weighted adjacency, so entries count weighted walks.
    Raises :class:`NnzCapError` before any intermediate (the current power
    plus the running sum) grows past ``nnz_cap`` entries.
    """
    weights = [float(w) for w in weights]
    if not weights:
        raise ValueError("need at least one weight")
    if not all(np.isfinite(weights)):
        raise ValueError("weights must be finite")
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    a = g.adjacency
    power = a.copy()
    acc = a * weights[0] if weights[0] != 0.0 else sp.csr_matrix(a.shape)
    if acc.nnz > nnz_cap:
        raise NnzCapError(nnz_cap, acc.nnz, "G^1")
    for i, w in enumerate(weights[1:], start=2):
        resident = acc.nnz
        power = _checked_product(power, a, nnz_cap, f"G^{i}", resident=resident)
        log.debug("G^%d nnz=%d", i, power.nnz)
        if w != 0.0:
            acc = (acc + power * w).tocsr()
            if acc.nnz > nnz_cap:
                raise NnzCapError(nnz_cap, acc.nnz, f"sum up to G^{i}")
    acc = (acc - sp.diags(acc.diagonal())).tocsr()
    acc.eliminate_zeros()
    if threshold > 0:
        acc.data[np.abs(acc.data) < threshold] = 0.0
        acc.eliminate_zeros()
    return SparseGraph(acc)


def augment(g: SparseGraph, dna) -> AugmentedGraph:
    """Append the c bit positions of ``dna`` as pseudo-nodes (edge weight 1)."""
    if dna.n != g.n:
        raise InputError(f"DNA matrix has {dna.n} rows, graph has {g.n} nodes")
    b = dna.to_csr().astype(np.float64)
    full = sp.bmat([[g.adjacency, b], [b.T, None]], format="csr")
    return AugmentedGraph(full, base=g, dna=dna)
