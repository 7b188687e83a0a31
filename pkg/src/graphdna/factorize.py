"""Graph-aware matrix factorization solvers.

Three objectives share the same alternating-minimization skeleton:

* GRMF, squared loss on observed ratings + (lambda/2)(|U|^2 + |V|^2)
  + mu * tr(U^T L U). Passing an :class:`~graphdna.graph.AugmentedGraph`
  adds one user row per DNA bit; those rows are dropped at prediction.
* Weighted MF for 0/1 data, where unobserved cells count as zeros with
  weight rho. The zero set is never materialized (Gram-matrix identity).
* Co-Factor, which fits a side matrix S (the graph G or a DNA matrix B)
  with its own item-side factors V' sharing U.

Every update is an exact minimization over one block (items, the side
factors, or all users), so objectives never increase. The user block of
the graph-regularized objectives couples rows through the Laplacian and is
solved by conjugate gradients preconditioned with the per-row r x r
blocks, warm-started from the current factors.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DivergenceError, InputError
from .graph import SparseGraph
from .ratings import RatingData

log = logging.getLogger(__name__)

LAMBDA_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclass
class TrainConfig:
    rank: int = 10
    lambda_l: float = 0.1
    lambda_g: float = 0.1
    rho: float = 0.01
    epochs: int = 40
    seed: int = 0
    cg_tol: float = 1e-10
    cg_maxiter: int = 200
    tol: float = 1e-9

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.lambda_l < 0 or self.lambda_g < 0:
            raise ValueError("regularization weights must be >= 0")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class FactorModel:
    U: np.ndarray
    V: np.ndarray
    n_users: int
    mode: str = "explicit"
    Vp: np.ndarray | None = None
    history: list = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def m(self) -> int:
        return self.V.shape[0]

    def _check(self, i, j=None):
        if not 0 <= i < self.n_users:
            raise IndexError(f"user {i} out of range for {self.n_users} users")
        if j is not None and not 0 <= j < self.m:
            raise IndexError(f"item {j} out of range for {self.m} items")

    def predict(self, i: int, j: int) -> float:
        self._check(i, j)
        return float(self.U[i] @ self.V[j])

    def predict_many(self, rows, cols) -> np.ndarray:
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        if len(rows) and (rows.max() >= self.n_users or rows.min() < 0):
            raise IndexError("user index out of range")
        return np.einsum("ij,ij->i", self.U[rows], self.V[cols])

    def scores(self, i: int) -> np.ndarray:
        self._check(i)
        return self.V @ self.U[i]

    def top_k(self, i: int, k: int, exclude=()) -> np.ndarray:
        """Items by descending score, ties to the lower id, ``exclude`` removed."""
        s = self.scores(i)
        order = np.lexsort((np.arange(self.m), -s))
        if len(exclude):
            order = order[~np.isin(order, exclude)]
        return order[:k]

    def save(self, path) -> None:
        vp = 0 if self.Vp is None else self.Vp.shape[0]
        with open(path, "w") as fh:
            fh.write(f"GDNAMODEL1 {self.U.shape[0]} {self.m} {self.rank} {self.n_users} {self.mode} {vp}\n")
            for mat in (self.U, self.V) + ((self.Vp,) if vp else ()):
                np.savetxt(fh, mat, fmt="%.17g")

    @classmethod
    def load(cls, path) -> "FactorModel":
        with open(path) as fh:
            head = fh.readline().split()
            if len(head) != 7 or head[0] != "GDNAMODEL1":
                raise InputError(f"{path}: not a model file")
            nu, m, r, n_users, mode, vp = int(head[1]), int(head[2]), int(head[3]), int(head[4]), head[5], int(head[6])
            flat = np.array(fh.read().split(), dtype=np.float64)
        if flat.size != (nu + m + vp) * r:
            raise InputError(f"{path}: expected {(nu + m + vp) * r} numbers, found {flat.size}")
        mats = flat.reshape(-1, r)
        U, V = mats[:nu].copy(), mats[nu:nu + m].copy()
        Vp = mats[nu + m:].copy() if vp else None
        return cls(U, V, n_users, mode, Vp)


def top_k(model: FactorModel, i: int, k: int, exclude=()) -> np.ndarray:
    return model.top_k(i, k, exclude)


def predict(model: FactorModel, i: int, j: int) -> float:
    return model.predict(i, j)


# ----------------------------------------------------------------------
# shared linear algebra

def _grouped_gram(keys: np.ndarray, n_groups: int, F: np.ndarray, weights=None) -> np.ndarray:
    """Sum of F[t] F[t]^T (optionally weighted) per group key -> (n_groups, r, r)."""
    r = F.shape[1]
    if len(keys) == 0:
        return np.zeros((n_groups, r, r))
    outer = (F[:, :, None] * F[:, None, :]).reshape(len(keys), r * r)
    w = np.ones(len(keys)) if weights is None else weights
    ind = sp.csr_matrix((w, (keys, np.arange(len(keys)))), shape=(n_groups, len(keys)))
    return np.asarray(ind @ outer).reshape(n_groups, r, r)


def _solve_rows(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return np.einsum("nij,nj->ni", np.linalg.pinv(A), b)


def _block_inverse(A: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.inv(A)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(A)


def _pcg(apply_a, b: np.ndarray, x0: np.ndarray, pinv: np.ndarray, tol: float, maxiter: int):
    """Block-Jacobi preconditioned CG on matrix-shaped unknowns."""
    x = x0.copy()
    r = b - apply_a(x)
    bnorm = np.linalg.norm(b) or 1.0
    z = np.einsum("nij,nj->ni", pinv, r)
    p = z.copy()
    rz = np.vdot(r, z)
    it = 0
    for it in range(maxiter):
        if np.linalg.norm(r) <= tol * bnorm or rz <= 0:
            break
        ap = apply_a(p)
        pap = np.vdot(p, ap)
        if pap <= 0:
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        z = np.einsum("nij,nj->ni", pinv, r)
        rz_new = np.vdot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it


def _laplacian_for(graph, n_rows: int):
    if graph is None:
        return None
    if graph.n != n_rows:
        raise InputError(f"graph has {graph.n} nodes, user factors have {n_rows} rows")
    return graph.laplacian()


def _user_rows(data: RatingData, graph) -> int:
    if graph is None:
        return data.n
    n_real = getattr(graph, "n_real", graph.n)
    if n_real != data.n:
        raise InputError(f"graph covers {n_real} users, ratings have {data.n}")
    return graph.n


def _init(n_rows: int, m: int, extra: int, cfg: TrainConfig, n_real: int):
    """Seeded N(0, 1/sqrt(r)) entries for real users, items and side factors.

    Pseudo-node rows start at zero: they carry no ratings, the first user
    sweep sets them exactly, and a zero start keeps an all-zero DNA run on
    the same objective trajectory as the plain-graph run."""
    rng = np.random.default_rng(cfg.seed)
    scale = 1.0 / math.sqrt(cfg.rank)
    U = rng.normal(0.0, scale, size=(n_real, cfg.rank))
    V = rng.normal(0.0, scale, size=(m, cfg.rank))
    Vp = rng.normal(0.0, scale, size=(extra, cfg.rank)) if extra else None
    if n_rows > n_real:
        U = np.vstack([U, np.zeros((n_rows - n_real, cfg.rank))])
    return U, V, Vp


class _Monitor:
    """Tracks the objective and aborts after 3 consecutive increases."""

    def __init__(self, tol: float, first: float):
        self.tol = tol
        self.history = [first]
        self.bad = 0

    def push(self, value: float) -> None:
        prev = self.history[-1]
        self.history.append(value)
        if not np.isfinite(value) or value > prev + self.tol * abs(prev):
            self.bad += 1
            if self.bad >= 3 or not np.isfinite(value):
                raise DivergenceError(
                    f"objective rose from {prev:.6g} to {value:.6g} ({self.bad} consecutive increases)",
                    self.history)
        else:
            self.bad = 0


# ----------------------------------------------------------------------
# GRMF

def _residual(data: RatingData, U, V):
    r, c, v = data.part("train")
    pred = np.einsum("ij,ij->i", U[r], V[c])
    return r, c, v - pred


def objective_grmf(model: FactorModel, data: RatingData, graph=None, cfg: TrainConfig | None = None) -> float:
    """Squared train loss + (lambda/2)(|U|^2+|V|^2) + mu tr(U^T L U)."""
    cfg = cfg or TrainConfig()
    U, V = model.U, model.V
    _, _, e = _residual(data, U, V)
    val = float(e @ e) + 0.5 * cfg.lambda_l * (float(np.sum(U * U)) + float(np.sum(V * V)))
    L = _laplacian_for(graph, U.shape[0])
    if L is not None:
        val += cfg.lambda_g * float(np.sum(U * (L @ U)))
    return val


def gradient_grmf(model: FactorModel, data: RatingData, graph=None, cfg: TrainConfig | None = None):
    cfg = cfg or TrainConfig()
    U, V = model.U, model.V
    r, c, e = _residual(data, U, V)
    E = sp.csr_matrix((e, (r, c)), shape=(U.shape[0], V.shape[0]))
    dU = -2.0 * (E @ V) + cfg.lambda_l * U
    dV = -2.0 * (E.T @ U) + cfg.lambda_l * V
    L = _laplacian_for(graph, U.shape[0])
    if L is not None:
        dU += 2.0 * cfg.lambda_g * (L @ U)
    return dU, dV


def _update_items(data: RatingData, U, n_items: int, lam: float, rho=None):
    r, c, v = data.part("train")
    rank = U.shape[1]
    if rho is None:
        A = _grouped_gram(c, n_items, U[r])
    else:
        Ur = U[:data.n]
        A = rho * (Ur.T @ Ur)[None] + (1.0 - rho) * _grouped_gram(c, n_items, U[r])
    A += 0.5 * lam * np.eye(rank)[None]
    b = np.asarray(sp.csr_matrix((v, (c, r)), shape=(n_items, U.shape[0])) @ U)
    return _solve_rows(A, b)


def _update_users(data: RatingData, U, V, L, cfg: TrainConfig, rho=None):
    r, c, v = data.part("train")
    n_rows, rank = U.shape
    if rho is None:
        A = _grouped_gram(r, n_rows, V[c])
    else:
        A = (1.0 - rho) * _grouped_gram(r, n_rows, V[c])
        A[:data.n] += rho * (V.T @ V)[None]
    A += 0.5 * cfg.lambda_l * np.eye(rank)[None]
    b = np.asarray(sp.csr_matrix((v, (r, c)), shape=(n_rows, V.shape[0])) @ V)
    if L is None or cfg.lambda_g == 0:
        return _solve_rows(A, b)
    mu = cfg.lambda_g
    P = A + mu * L.diagonal()[:, None, None] * np.eye(rank)[None]
    pinv = _block_inverse(P)

    def apply_a(X):
        return np.einsum("nij,nj->ni", A, X) + mu * (L @ X)

    X, iters = _pcg(apply_a, b, U, pinv, cfg.cg_tol, cfg.cg_maxiter)
    log.debug("user block CG iterations: %d", iters)
    return X


def _train_alternating(data, graph, cfg, objective, rho=None, mode="explicit"):
    n_rows = _user_rows(data, graph)
    if data.count("train") == 0:
        raise InputError("training split is empty")
    U, V, _ = _init(n_rows, data.m, 0, cfg, data.n)
    L = _laplacian_for(graph, n_rows)
    model = FactorModel(U, V, data.n, mode)
    mon = _Monitor(cfg.tol, objective(model, data, graph, cfg))
    for epoch in range(cfg.epochs):
        model.V = _update_items(data, model.U, data.m, cfg.lambda_l, rho)
        model.U = _update_users(data, model.U, model.V, L, cfg, rho)
        mon.push(objective(model, data, graph, cfg))
        log.debug("epoch %d objective %.10g", epoch + 1, mon.history[-1])
    model.history = mon.history
    return model


def train_grmf(data: RatingData, graph=None, cfg: TrainConfig | None = None) -> FactorModel:
    """Explicit-feedback GRMF; ``graph=None`` gives plain MF."""
    return _train_alternating(data, graph, cfg or TrainConfig(), objective_grmf)


# ----------------------------------------------------------------------
# weighted MF for implicit feedback

def objective_wmf(model: FactorModel, data: RatingData, graph=None, cfg: TrainConfig | None = None) -> float:
    """Observed 1s at weight 1, every other cell a 0 at weight rho."""
    cfg = cfg or TrainConfig()
    U, V = model.U, model.V
    rho = cfg.rho
    r, c, v = data.part("train")
    Ur = U[:data.n]
    pred = np.einsum("ij,ij->i", U[r], V[c])
    all_sq = float(np.sum((Ur.T @ Ur) * (V.T @ V)))
    val = rho * all_sq + float(np.sum((v - pred) ** 2 - rho * pred ** 2))
    val += 0.5 * cfg.lambda_l * (float(np.sum(U * U)) + float(np.sum(V * V)))
    L = _laplacian_for(graph, U.shape[0])
    if L is not None:
        val += cfg.lambda_g * float(np.sum(U * (L @ U)))
    return val


def gradient_wmf(model: FactorModel, data: RatingData, graph=None, cfg: TrainConfig | None = None):
    cfg = cfg or TrainConfig()
    U, V = model.U, model.V
    rho = cfg.rho
    r, c, v = data.part("train")
    pred = np.einsum("ij,ij->i", U[r], V[c])
    coef = -2.0 * (v - pred) - 2.0 * rho * pred
    C = sp.csr_matrix((coef, (r, c)), shape=(U.shape[0], V.shape[0]))
    Ur = U[:data.n]
    dU = C @ V + cfg.lambda_l * U
    dU[:data.n] += 2.0 * rho * Ur @ (V.T @ V)
    dV = C.T @ U + 2.0 * rho * V @ (Ur.T @ Ur) + cfg.lambda_l * V
    L = _laplacian_for(graph, U.shape[0])
    if L is not None:
        dU += 2.0 * cfg.lambda_g * (L @ U)
    return dU, dV


def train_wmf(data: RatingData, graph=None, cfg: TrainConfig | None = None) -> FactorModel:
    if data.mode != "implicit":
        raise InputError("weighted MF expects implicit (0/1) data")
    cfg = cfg or TrainConfig()
    return _train_alternating(data, graph, cfg, objective_wmf, rho=cfg.rho, mode="implicit")


# ----------------------------------------------------------------------
# Co-Factor

def side_matrix(side) -> sp.csr_matrix:
    """The co-factored matrix: graph adjacency (n x n) or DNA bits (n x c)."""
    if isinstance(side, SparseGraph):
        return side.adjacency
    if hasattr(side, "to_csr"):
        return side.to_csr()
    return sp.csr_matrix(side)


def objective_cofactor(model: FactorModel, data: RatingData, side, cfg: TrainConfig | None = None) -> float:
    cfg = cfg or TrainConfig()
    S = side_matrix(side).tocoo()
    U, V, Vp = model.U, model.V, model.Vp
    _, _, e = _residual(data, U, V)
    es = S.data - np.einsum("ij,ij->i", U[S.row], Vp[S.col])
    reg = float(np.sum(U * U)) + float(np.sum(V * V)) + float(np.sum(Vp * Vp))
    return float(e @ e) + float(es @ es) + 0.5 * cfg.lambda_l * reg


def gradient_cofactor(model: FactorModel, data: RatingData, side, cfg: TrainConfig | None = None):
    cfg = cfg or TrainConfig()
    S = side_matrix(side).tocoo()
    U, V, Vp = model.U, model.V, model.Vp
    r, c, e = _residual(data, U, V)
    E = sp.csr_matrix((e, (r, c)), shape=(U.shape[0], V.shape[0]))
    es = S.data - np.einsum("ij,ij->i", U[S.row], Vp[S.col])
    Es = sp.csr_matrix((es, (S.row, S.col)), shape=(U.shape[0], Vp.shape[0]))
    dU = -2.0 * (E @ V) - 2.0 * (Es @ Vp) + cfg.lambda_l * U
    dV = -2.0 * (E.T @ U) + cfg.lambda_l * V
    dVp = -2.0 * (Es.T @ U) + cfg.lambda_l * Vp
    return dU, dV, dVp


def train_cofactor(data: RatingData, side, cfg: TrainConfig | None = None) -> FactorModel:
    cfg = cfg or TrainConfig()
    S = side_matrix(side).tocoo()
    if S.shape[0] != data.n:
        raise InputError(f"side matrix has {S.shape[0]} rows, ratings have {data.n} users")
    if data.count("train") == 0:
        raise InputError("training split is empty")
    n_side = S.shape[1]
    U, V, Vp = _init(data.n, data.m, n_side, cfg, data.n)
    if Vp is None:
        Vp = np.zeros((0, cfg.rank))
    model = FactorModel(U, V, data.n, "explicit", Vp)
    r, c, v = data.part("train")
    rank = cfg.rank
    eye = 0.5 * cfg.lambda_l * np.eye(rank)[None]
    S_csr = S.tocsr()
    R_csr = sp.csr_matrix((v, (r, c)), shape=(data.n, data.m))
    mon = _Monitor(cfg.tol, objective_cofactor(model, data, S, cfg))
    for _ in range(cfg.epochs):
        model.V = _update_items(data, model.U, data.m, cfg.lambda_l)
        A = _grouped_gram(S.col, n_side, model.U[S.row]) + eye
        model.Vp = _solve_rows(A, np.asarray(S_csr.T @ model.U))
        A = _grouped_gram(r, data.n, model.V[c]) + _grouped_gram(S.row, data.n, model.Vp[S.col]) + eye
        b = np.asarray(R_csr @ model.V) + np.asarray(S_csr @ model.Vp)
        model.U = _solve_rows(A, b)
        mon.push(objective_cofactor(model, data, S, cfg))
    model.history = mon.history
    return model
