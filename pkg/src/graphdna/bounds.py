"""Monte-Carlo checks of the common-bit statistics of two Bloom filters.

Two nodes x, y have neighborhoods that split into ``A1 = N(x) - N(y)``,
``A2 = N(y) - N(x)`` and ``A3 = N(x) & N(y)``. ``Q`` is the number of bits
set in both filters. The closed-form envelopes

    gamma0 = c * (1 - exp(-k |A3| / c))
    gamma1 = c * (1 - exp(-k^2 |A1 ^ A2|^2 / (4 c^2) - k |A3| / (c - 1)))

bracket ``E[Q]`` when every (element, hash) pair lands independently and
uniformly, and ``Q`` obeys Chernoff tails because filter bits are
negatively associated. The harness samples ``Q`` under exactly that
assumption (a fresh, independently seeded family per trial) and, for
contrast, under one family shared by every trial as the encoder uses.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bloom import hash_positions

DEFAULT_C = (256, 1024, 4096)
DEFAULT_K = (2, 4, 7)
DEFAULT_SHARES = (1.0, 0.5, 0.1)


@dataclass(frozen=True)
class OverlapExperiment:
    c: int
    k: int
    a1: int
    a2: int
    a3: int
    trials: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if min(self.a1, self.a2, self.a3) < 0:
            raise ValueError("set sizes must be >= 0")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    @property
    def inter(self) -> int:
        return self.a3

    @property
    def symdiff(self) -> int:
        return self.a1 + self.a2


@dataclass
class QSummary:
    mean: float
    std: float
    se: float
    quantiles: dict
    samples: np.ndarray = field(repr=False)

    def tail_le(self, x: float) -> float:
        return float(np.mean(self.samples <= x))

    def tail_ge(self, x: float) -> float:
        return float(np.mean(self.samples >= x))


def gamma_bounds(c: int, k: int, inter: int, symdiff: int) -> tuple[float, float]:
    if c < 2:
        raise ValueError("c must be >= 2")
    g0 = c * -math.expm1(-k * inter / c)
    g1 = c * -math.expm1(-(k * k) * symdiff ** 2 / (4.0 * c * c) - k * inter / (c - 1))
    return g0, g1


def expected_q(c: int, k: int, a1: int, a2: int, a3: int) -> float:
    """Exact E[Q] under independent uniform hashing."""
    miss = lambda a: (1.0 - 1.0 / c) ** (k * a)  # noqa: E731
    p1, p2, p3 = 1 - miss(a1), 1 - miss(a2), 1 - miss(a3)
    return c * (1.0 - (1.0 - p1 * p2) * (1.0 - p3))


def chernoff_upper(delta: float, mu: float) -> float:
    """(e^delta / (1+delta)^(1+delta))^mu."""
    return math.exp(mu * (delta - (1 + delta) * math.log1p(delta)))


def chernoff_lower(delta: float, mu: float) -> float:
    """exp(-delta^2 mu / 3), the simplified lower-tail bound."""
    return math.exp(-delta * delta * mu / 3.0)


def _filters(pos: np.ndarray, c: int, members: np.ndarray) -> np.ndarray:
    """Boolean (trials, c) filters from positions (trials, N, k) of ``members``."""
    t = pos.shape[0]
    sel = pos[:, members, :].reshape(t, -1)
    out = np.zeros((t, c), dtype=bool)
    out[np.arange(t)[:, None], sel] = True
    return out


def _summarize(q: np.ndarray) -> QSummary:
    q = q.astype(np.float64)
    std = float(q.std(ddof=1)) if len(q) > 1 else 0.0
    qs = np.quantile(q, [0.01, 0.5, 0.99])
    return QSummary(float(q.mean()), std, std / math.sqrt(len(q)),
                    dict(zip(("p01", "p50", "p99"), map(float, qs))), q)


def empirical_q(exp: OverlapExperiment, chunk: int = 1000) -> QSummary:
    """Sample Q with an independently seeded hash family per trial."""
    rng = np.random.default_rng(exp.seed)
    n_all = exp.a1 + exp.a2 + exp.a3
    ids = np.arange(n_all, dtype=np.uint64)
    x_members = np.r_[np.arange(exp.a1), np.arange(exp.a1 + exp.a2, n_all)].astype(np.int64)
    y_members = np.arange(exp.a1, n_all, dtype=np.int64)
    out = np.empty(exp.trials, dtype=np.int64)
    for lo in range(0, exp.trials, chunk):
        t = min(chunk, exp.trials - lo)
        seeds = rng.integers(0, 2**63, size=t, dtype=np.int64).astype(np.uint64)
        if n_all == 0:
            out[lo:lo + t] = 0
            continue
        pos = hash_positions(ids[None, :], exp.k, exp.c, seeds[:, None], "independent")
        bx = _filters(pos, exp.c, x_members)
        by = _filters(pos, exp.c, y_members)
        out[lo:lo + t] = (bx & by).sum(axis=1)
    return _summarize(out)


def empirical_q_shared(exp: OverlapExperiment, master_seed: int = 0, chunk: int = 1000) -> QSummary:
    """Sample Q under one fixed double-hashing family, varying the element ids.

    This is the situation inside the encoder, where all nodes share a
    family; the independence assumption behind the envelope does not cover it.
    """
    rng = np.random.default_rng(exp.seed)
    n_all = exp.a1 + exp.a2 + exp.a3
    x_members = np.r_[np.arange(exp.a1), np.arange(exp.a1 + exp.a2, n_all)].astype(np.int64)
    y_members = np.arange(exp.a1, n_all, dtype=np.int64)
    out = np.empty(exp.trials, dtype=np.int64)
    for lo in range(0, exp.trials, chunk):
        t = min(chunk, exp.trials - lo)
        if n_all == 0:
            out[lo:lo + t] = 0
            continue
        # distinct-with-high-probability ids from a 62-bit space
        ids = rng.integers(0, 2**62, size=(t, n_all), dtype=np.int64)
        pos = hash_positions(ids, exp.k, exp.c, master_seed, "double")
        bx = _filters(pos, exp.c, x_members)
        by = _filters(pos, exp.c, y_members)
        out[lo:lo + t] = (bx & by).sum(axis=1)
    return _summarize(out)


@dataclass
class CovarianceReport:
    c: int
    k: int
    set_size: int
    trials: int
    max_cov: float
    max_pair: tuple
    se_at_max: float
    mean_offdiag: float
    expected_offdiag: float


def na_sanity(c: int, k: int, set_size: int, trials: int, seed: int = 0) -> CovarianceReport:
    """Pairwise covariances of one filter's bits across independent families.

    Negative association forces every off-diagonal covariance to be <= 0;
    the report gives the largest estimate and its standard error.
    """
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**63, size=trials, dtype=np.int64).astype(np.uint64)
    if set_size == 0:
        bits = np.zeros((trials, c))
    else:
        pos = hash_positions(np.arange(set_size, dtype=np.uint64)[None, :], k, c,
                             seeds[:, None], "independent")
        bits = _filters(pos, c, np.arange(set_size)).astype(np.float64)
    centered = bits - bits.mean(axis=0)
    cov = centered.T @ centered / max(trials - 1, 1)
    iu = np.triu_indices(c, 1)
    off = cov[iu]
    a = int(np.argmax(off))
    i, j = int(iu[0][a]), int(iu[1][a])
    prod = centered[:, i] * centered[:, j]
    se = float(prod.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    q1 = (1 - 1 / c) ** (k * set_size)
    q2 = (1 - 2 / c) ** (k * set_size)
    return CovarianceReport(c, k, set_size, trials, float(off[a]), (i, j), se,
                            float(off.mean()), q2 - q1 * q1)


def grid_points(cs=DEFAULT_C, ks=DEFAULT_K, shares=DEFAULT_SHARES):
    """(c, k, a1, a2, a3) with k * (|A3| + |A1 ^ A2|) <= c / 2.

    ``share`` is the fraction of the element budget placed in the
    intersection; the rest is split evenly between A1 and A2.
    """
    for c in cs:
        for k in ks:
            budget = c // (2 * k)
            for share in shares:
                a3 = int(round(share * budget))
                sd = budget - a3
                a1 = sd // 2
                yield c, k, a1, sd - a1, a3


def run_grid(cs=DEFAULT_C, ks=DEFAULT_K, shares=DEFAULT_SHARES, trials: int = 10_000,
             delta: float = 0.3, seed: int = 0, shared: bool = True) -> list[dict]:
    """One report row per grid point."""
    rows = []
    for idx, (c, k, a1, a2, a3) in enumerate(grid_points(cs, ks, shares)):
        exp = OverlapExperiment(c, k, a1, a2, a3, trials, seed + idx)
        g0, g1 = gamma_bounds(c, k, a3, a1 + a2)
        q = empirical_q(exp)
        row = dict(c=c, k=k, a1=a1, a2=a2, inter=a3, symdiff=a1 + a2,
                   gamma0=g0, expected_q=expected_q(c, k, a1, a2, a3), mean_q=q.mean,
                   se=q.se, gamma1=g1,
                   lower_tail=q.tail_le((1 - delta) * g0),
                   lower_bound=chernoff_lower(delta, g0),
                   upper_tail=q.tail_ge((1 + delta) * g1),
                   upper_bound=chernoff_upper(delta, g1))
        row["in_envelope"] = (g0 - 4 * q.se) <= q.mean <= (g1 + 4 * q.se)
        if shared:
            row["mean_q_shared"] = empirical_q_shared(exp, master_seed=seed).mean
        rows.append(row)
    return rows


def report_columns(shared: bool = True) -> list[str]:
    cols = ["c", "k", "inter", "symdiff", "gamma0", "expected_q", "mean_q", "se", "gamma1",
            "lower_tail", "lower_bound", "upper_tail", "upper_bound", "in_envelope"]
    if shared:
        cols.append("mean_q_shared")
    return cols


def experiment_dict(exp: OverlapExperiment) -> dict:
    return asdict(exp)
