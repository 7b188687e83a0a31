"""Rating and ranking metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, UndefinedMetricError


@dataclass
class EvalReport:
    values: dict = field(default_factory=dict)
    per_user: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.values[name]

    def lines(self) -> list[str]:
        """Machine-readable ``metric=value`` lines."""
        out = [f"{k}={v:.10g}" for k, v in self.values.items()]
        out += [f"{k}={v}" for k, v in self.counts.items()]
        return out

    def table(self, percent: bool = False) -> str:
        width = max((len(k) for k in self.values), default=6)
        rows = []
        for k, v in self.values.items():
            shown = v * 100 if percent and k != "rmse" else v
            rows.append(f"{k:<{width}}  {shown:>12.6f}")
        return "\n".join(rows)


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise InputError("prediction and truth lengths differ")
    if pred.size == 0:
        raise InputError("RMSE over an empty split")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def model_rmse(model, data, split: str = "test") -> float:
    r, c, v = data.part(split)
    return rmse(model.predict_many(r, c), v)


def rgg(rmse_no_graph: float, rmse_with_g: float, rmse_with_x: float) -> float:
    """Relative graph gain of information X, in percent."""
    denom = rmse_no_graph - rmse_with_g
    if not denom > 0:
        raise UndefinedMetricError(
            f"relative graph gain undefined: graph RMSE {rmse_with_g} does not beat {rmse_no_graph}")
    return ((rmse_no_graph - rmse_with_x) / denom - 1.0) * 100.0


def precision_at_k(rel: np.ndarray, k: int) -> float:
    return float(np.sum(rel[:k])) / k


def ndcg_at_k(rel: np.ndarray, k: int, n_relevant: int) -> float:
    """Binary gains, 1/log2(1 + rank) discounts, rank from 1."""
    top = rel[:k]
    disc = 1.0 / np.log2(np.arange(2, len(top) + 2))
    dcg = float(np.sum(top * disc))
    ideal = float(np.sum(1.0 / np.log2(np.arange(2, min(k, n_relevant) + 2))))
    return dcg / ideal if ideal > 0 else 0.0


def average_precision(rel: np.ndarray, n_relevant: int) -> float:
    hits = np.flatnonzero(rel)
    if n_relevant == 0:
        return 0.0
    prec = np.arange(1, len(hits) + 1) / (hits + 1)
    return float(prec.sum()) / n_relevant


def half_life_utility(gains: np.ndarray, neutral: float = 0.0, half_life: float = 5.0) -> float:
    """sum_l max(g_l - neutral, 0) / 2^((l - 1)/(half_life - 1)) over list positions l."""
    pos = np.arange(len(gains))
    return float(np.sum(np.maximum(gains - neutral, 0.0) / 2.0 ** (pos / (half_life - 1.0))))


def ranking_metrics(model, data, ks=(1, 5), neutral: float = 0.0, half_life: float = 5.0,
                    split: str = "test", exclude_splits=("train",), keep_per_user: bool = True) -> EvalReport:
    """MAP, HLU, P@k and NDCG@k over users with at least one relevant item.

    Each user's list ranks every item not in ``exclude_splits`` by
    descending score (ties to the lower item id); relevant items are the
    user's entries in ``split``.
    """
    relevant = data.items_of(split)
    excluded = [data.items_of(s) for s in exclude_splits]
    per = {"map": [], "hlu": []}
    for k in ks:
        per[f"p@{k}"] = []
        per[f"ndcg@{k}"] = []
    users = []
    skipped = 0
    for i in range(data.n):
        rel_items = relevant[i]
        if len(rel_items) == 0:
            skipped += 1
            continue
        drop = np.concatenate([e[i] for e in excluded]) if excluded else np.zeros(0, np.int64)
        ranked = model.top_k(i, model.m, exclude=drop)
        rel = np.isin(ranked, rel_items).astype(np.float64)
        n_rel = int(rel.sum())
        users.append(i)
        per["map"].append(average_precision(rel, n_rel))
        per["hlu"].append(half_life_utility(rel, neutral, half_life))
        for k in ks:
            per[f"p@{k}"].append(precision_at_k(rel, k))
            per[f"ndcg@{k}"].append(ndcg_at_k(rel, k, n_rel))
    if not users:
        raise UndefinedMetricError(f"no user has items in the {split!r} split")
    values = {name: float(np.mean(v)) for name, v in per.items()}
    report = EvalReport(values, counts={"users_evaluated": len(users), "users_skipped": skipped})
    if keep_per_user:
        report.per_user = {name: np.asarray(v) for name, v in per.items()}
        report.per_user["user"] = np.asarray(users)
    return report


def rating_report(model, data, split: str = "test") -> EvalReport:
    r, c, v = data.part(split)
    return EvalReport({"rmse": rmse(model.predict_many(r, c), v)}, counts={"pairs": len(v)})


def format_kv(values: dict) -> list[str]:
    out = []
    for k, v in values.items():
        if isinstance(v, float):
            out.append(f"{k}={'inf' if math.isinf(v) else f'{v:.10g}'}")
        else:
            out.append(f"{k}={v}")
    return out
