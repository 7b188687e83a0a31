"""Sparse user x item observations with train / validation / test membership."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InputError

SPLITS = ("train", "validation", "test")
MODES = ("explicit", "implicit")


@dataclass
class RatingData:
    n: int
    m: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    split: np.ndarray
    mode: str = "explicit"

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.vals = np.asarray(self.vals, dtype=np.float64)
        self.split = np.asarray(self.split, dtype=np.int8)
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got {self.mode!r}")
        k = len(self.rows)
        if not (len(self.cols) == len(self.vals) == len(self.split) == k):
            raise InputError("rating arrays differ in length")
        if k:
            if self.rows.min() < 0 or self.rows.max() >= self.n:
                raise InputError(f"user index out of range for n={self.n}")
            if self.cols.min() < 0 or self.cols.max() >= self.m:
                raise InputError(f"item index out of range for m={self.m}")
            if self.split.min() < 0 or self.split.max() >= len(SPLITS):
                raise InputError("unknown split code")
        if self.mode == "implicit" and np.any(self.vals != 1.0):
            raise InputError("implicit data stores only the observed 1s")

    @classmethod
    def from_triplets(cls, n, m, rows, cols, vals, split=None, mode="explicit"):
        split = np.zeros(len(rows), dtype=np.int8) if split is None else split
        return cls(n, m, rows, cols, vals, split, mode)

    def __len__(self):
        return len(self.rows)

    def mask(self, split: str) -> np.ndarray:
        return self.split == SPLITS.index(split)

    def part(self, split: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = self.mask(split)
        return self.rows[m], self.cols[m], self.vals[m]

    def count(self, split: str) -> int:
        return int(self.mask(split).sum())

    def matrix(self, split: str = "train") -> sp.csr_matrix:
        r, c, v = self.part(split)
        out = sp.csr_matrix((v, (r, c)), shape=(self.n, self.m))
        out.sum_duplicates()
        out.sort_indices()
        return out

    def items_of(self, split: str = "train") -> list[np.ndarray]:
        """Per-user sorted item arrays for one split."""
        mat = self.matrix(split)
        return [mat.indices[mat.indptr[i]:mat.indptr[i + 1]] for i in range(self.n)]

    def with_split(self, split: np.ndarray) -> "RatingData":
        return RatingData(self.n, self.m, self.rows, self.cols, self.vals, split, self.mode)

    def save(self, path) -> None:
        """``n m mode`` header + ``i j r`` lines; ``<path>.<split>`` index lists."""
        with open(path, "w") as fh:
            fh.write(f"{self.n} {self.m} {self.mode}\n")
            fh.writelines(f"{i} {j} {r:.17g}\n" for i, j, r in zip(self.rows, self.cols, self.vals))
        for code, name in enumerate(SPLITS):
            idx = np.flatnonzero(self.split == code)
            with open(f"{path}.{name}", "w") as fh:
                fh.writelines(f"{t}\n" for t in idx)

    @classmethod
    def load(cls, path) -> "RatingData":
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 3:
                raise InputError(f"{path}: expected header 'n m mode'")
            try:
                n, m = int(header[0]), int(header[1])
            except ValueError as exc:
                raise InputError(f"{path}: bad header {' '.join(header)!r}") from exc
            mode = header[2]
            body = fh.read().split()
        if len(body) % 3:
            raise InputError(f"{path}: triplet lines must have exactly 3 fields")
        try:
            arr = np.array(body, dtype=np.float64).reshape(-1, 3)
        except ValueError as exc:
            raise InputError(f"{path}: non-numeric rating line") from exc
        if np.any(arr[:, :2] != np.floor(arr[:, :2])):
            raise InputError(f"{path}: indices must be integers")
        split = np.full(len(arr), -1, dtype=np.int8)
        found = False
        for code, name in enumerate(SPLITS):
            fn = f"{path}.{name}"
            if not os.path.exists(fn):
                continue
            found = True
            idx = np.loadtxt(fn, dtype=np.int64, ndmin=1)
            if len(idx) and (idx.min() < 0 or idx.max() >= len(arr)):
                raise InputError(f"{fn}: triplet index out of range")
            if np.any(split[idx] != -1):
                raise InputError(f"{fn}: triplet listed in more than one split")
            split[idx] = code
        if not found:
            split[:] = 0
        elif np.any(split == -1):
            raise InputError(f"{path}: some triplets belong to no split")
        return cls(n, m, arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64),
                   arr[:, 2], split, mode)


def to_implicit(data: RatingData, threshold: float) -> RatingData:
    """Keep entries with rating >= threshold as 1s; drop the rest."""
    keep = data.vals >= threshold
    return RatingData(data.n, data.m, data.rows[keep], data.cols[keep],
                      np.ones(int(keep.sum())), data.split[keep], "implicit")
