"""Ranking-quality metrics for a cost model and tuning-run statistics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class RankedList:
    """Items sorted by prediction (descending), ties by ascending linear index."""
    indices: np.ndarray
    predicted: np.ndarray
    measured: np.ndarray
    valid: np.ndarray

    def __len__(self):
        return int(self.indices.size)


def rank(predicted, measured, valid, indices=None) -> RankedList:
    predicted = np.asarray(predicted, dtype=np.float64)
    measured = np.asarray(measured, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if indices is None:
        indices = np.arange(predicted.size)
    indices = np.asarray(indices, dtype=np.int64)
    if not (predicted.shape == measured.shape == valid.shape == indices.shape):
        raise ValueError("predicted, measured, valid and indices must have equal shapes")
    order = np.lexsort((indices, -predicted))
    return RankedList(indices[order], predicted[order], measured[order], valid[order])


def pairwise_accuracy(pred, meas, valid, kind: str = "all", chunk: int = 2048) -> float:
    """Share of pairs whose predicted order agrees in sign with the measured order.

    Pairs of two invalid configurations are never counted.  ``kind`` narrows
    the counted pairs to valid-valid or valid-invalid ones.  A pair counts as
    correct only when ``sign(m_i - m_j) == sign(p_i - p_j)``, so a predicted
    tie against a measured difference is wrong.  Only rows of valid items are
    materialised, so the cost is O(n_valid * n).
    """
    pred = np.asarray(pred, dtype=np.float64)
    meas = np.asarray(meas, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    n = pred.size
    if not (meas.size == valid.size == n) or n < 2:
        raise ValueError("need at least two items of equal-length inputs")
    if kind not in ("all", "valid-valid", "valid-invalid"):
        raise ValueError(f"unknown pair kind {kind!r}")
    good = np.flatnonzero(valid)
    bad = np.flatnonzero(~valid)
    correct = total = 0
    if kind in ("all", "valid-valid"):
        c, t = _agreements(pred, meas, good, good, chunk, lower=True)
        correct, total = correct + c, total + t
    if kind in ("all", "valid-invalid"):
        c, t = _agreements(pred, meas, good, bad, chunk, lower=False)
        correct, total = correct + c, total + t
    if total == 0:
        raise ValueError("no countable pairs")
    return correct / total


def _agreements(pred, meas, rows, cols, chunk, lower):
    """(agreeing, counted) over rows x cols; ``lower`` keeps only row index > col index."""
    correct = total = 0
    if rows.size == 0 or cols.size == 0:
        return 0, 0
    step = max(1, (chunk * chunk) // max(1, cols.size))
    pc, mc = pred[cols][None, :], meas[cols][None, :]
    for start in range(0, rows.size, step):
        r = rows[start:start + step]
        agree = np.sign(pred[r][:, None] - pc) == np.sign(meas[r][:, None] - mc)
        if lower:
            mask = r[:, None] > cols[None, :]
            total += int(np.count_nonzero(mask))
            correct += int(np.count_nonzero(agree & mask))
        else:
            total += agree.size
            correct += int(np.count_nonzero(agree))
    return correct, total


def precision_at_n(rl: RankedList, n: int) -> float:
    if not 1 <= n <= len(rl):
        raise ValueError(f"n={n} outside [1, {len(rl)}]")
    return float(np.count_nonzero(rl.valid[:n])) / n


def dcg(relevance: Sequence[float], n: int) -> float:
    rel = np.asarray(relevance, dtype=np.float64)[:n]
    return float(np.sum(rel / np.log2(np.arange(2, rel.size + 2))))


def ndcg_at_n(rl: RankedList, n: int) -> float:
    """DCG of the predicted order over the DCG of the measured-descending order.

    Relevance is the measured throughput itself; position ``i`` (1-based) is
    discounted by ``log2(i + 1)``.
    """
    if not 1 <= n <= len(rl):
        raise ValueError(f"n={n} outside [1, {len(rl)}]")
    ideal = dcg(np.sort(rl.measured)[::-1], n)
    if ideal <= 0:
        raise ValueError("iDCG is zero: no item has positive measured score")
    return dcg(rl.measured, n) / ideal


# -- tuning statistics -------------------------------------------------------

@dataclass
class RunStatistics:
    trials_to_best: int
    convergence_curve: list[tuple[int, float]] = field(default_factory=list)
    found_best: bool = True
    timings: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        best = [b for _, b in self.convergence_curve]
        if any(b2 < b1 for b1, b2 in zip(best, best[1:])):
            raise ValueError("convergence curve must be non-decreasing")


@dataclass(frozen=True)
class AggregateStatistics:
    median: float
    q1: float
    q3: float
    iqr: float
    whisker_low: float
    whisker_high: float
    outliers: tuple[float, ...]
    n: int

    def to_dict(self) -> dict:
        return {"n": self.n, "median": self.median, "q1": self.q1, "q3": self.q3,
                "iqr": self.iqr, "whisker_low": self.whisker_low,
                "whisker_high": self.whisker_high, "outliers": list(self.outliers)}


def aggregate(values: Sequence[float]) -> AggregateStatistics:
    """Median, quartiles (linear interpolation) and box-plot whiskers/outliers."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot aggregate zero values")
    q1, med, q3 = (float(v) for v in np.percentile(x, [25, 50, 75]))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = x[(x >= lo_fence) & (x <= hi_fence)]
    outliers = tuple(float(v) for v in np.sort(x[(x < lo_fence) | (x > hi_fence)]))
    return AggregateStatistics(med, q1, q3, iqr, float(inside.min()), float(inside.max()),
                               outliers, int(x.size))


def aggregate_runs(runs: Sequence[RunStatistics]) -> AggregateStatistics:
    return aggregate([r.trials_to_best for r in runs])
