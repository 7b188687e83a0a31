"""Synthetic ratings whose user factors were smoothed over a random graph.

User and item factors start i.i.d. standard normal. Over ``T`` synchronous
rounds each user factor becomes ``w * agg(neighbors) + (1 - w) * own``,
where ``agg`` is the neighbor mean (default) or the plain neighbor sum.
Ratings are the full product ``U V^T``, from which disjoint uniform
samples form the train / validation / test splits.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .graph import SparseGraph, erdos_renyi
from .ratings import SPLITS, RatingData


@dataclass(frozen=True)
class SynthConfig:
    n: int = 2000
    m: int = 500
    rank: int = 50
    w: float = 0.6
    T: int = 3
    p: float = 0.005
    train_frac: float = 0.05
    test_frac: float = 0.02
    valid_frac: float = 0.01
    seed: int = 0
    smoothing: str = "mean"

    def __post_init__(self):
        if not 0.0 <= self.w <= 1.0:
            raise ValueError("influence weight w must lie in [0, 1]")
        if min(self.train_frac, self.test_frac, self.valid_frac) < 0:
            raise ValueError("fractions must be >= 0")
        if self.train_frac + self.test_frac + self.valid_frac > 1.0:
            raise ValueError("train + validation + test fractions exceed 1")
        if self.smoothing not in ("mean", "sum"):
            raise ValueError("smoothing must be 'mean' or 'sum'")
        if self.T < 0 or self.rank < 1:
            raise ValueError("T must be >= 0 and rank >= 1")

    @classmethod
    def reference_scale(cls, **kw):
        """10,000 users, 2,000 items, rank 50, p = 0.001, 5% / 2% splits."""
        base = dict(n=10_000, m=2_000, rank=50, w=0.6, T=3, p=0.001,
                    train_frac=0.05, test_frac=0.02, valid_frac=0.0)
        base.update(kw)
        return cls(**base)

    def as_dict(self) -> dict:
        return asdict(self)


def smooth(U: np.ndarray, g: SparseGraph, w: float, T: int, smoothing: str = "mean") -> np.ndarray:
    """T rounds of neighbor smoothing, each reading the previous round only."""
    A = (g.adjacency != 0).astype(np.float64)
    deg = np.asarray(A.sum(axis=1)).ravel()
    for _ in range(T):
        agg = A @ U
        if smoothing == "mean":
            iso = deg == 0
            agg[~iso] /= deg[~iso, None]
            # a node without neighbors averages over nothing but itself
            agg[iso] = U[iso]
        U = w * agg + (1.0 - w) * U
    return U


def generate(cfg: SynthConfig) -> tuple[RatingData, SparseGraph, dict]:
    """Returns the sampled ratings, the user graph, and the latent factors."""
    rng = np.random.default_rng(cfg.seed)
    U = rng.standard_normal((cfg.n, cfg.rank))
    V = rng.standard_normal((cfg.m, cfg.rank))
    g = erdos_renyi(cfg.n, cfg.p, rng)
    U = smooth(U, g, cfg.w, cfg.T, cfg.smoothing)
    R = U @ V.T
    cells = cfg.n * cfg.m
    counts = [int(round(f * cells)) for f in (cfg.train_frac, cfg.valid_frac, cfg.test_frac)]
    total = sum(counts)
    flat = rng.choice(cells, size=total, replace=False)
    split = np.repeat(np.array([SPLITS.index("train"), SPLITS.index("validation"),
                                SPLITS.index("test")], dtype=np.int8), counts)
    order = np.argsort(flat, kind="stable")
    flat, split = flat[order], split[order]
    rows, cols = np.divmod(flat, cfg.m)
    data = RatingData(cfg.n, cfg.m, rows, cols, R[rows, cols], split, "explicit")
    return data, g, {"U": U, "V": V}


def split_disjointness(data: RatingData, cfg: SynthConfig | None = None, tol: float = 0.001) -> bool:
    """Train, validation and test cells are pairwise disjoint (and, given
    ``cfg``, each split's size is within ``tol`` of its configured fraction)."""
    key = data.rows * data.m + data.cols
    seen = {}
    for code in range(len(SPLITS)):
        seen[code] = set(key[data.split == code].tolist())
    for a in range(len(SPLITS)):
        for b in range(a + 1, len(SPLITS)):
            if seen[a] & seen[b]:
                return False
    if cfg is not None:
        cells = data.n * data.m
        fracs = {"train": cfg.train_frac, "validation": cfg.valid_frac, "test": cfg.test_frac}
        for name, f in fracs.items():
            if abs(data.count(name) / cells - f) > tol:
                return False
    return True
