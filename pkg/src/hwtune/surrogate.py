"""Gradient-boosted regression trees over flattened knob features.

Trees are grown level by level.  For every level the gradient and count
histograms of all open nodes are built with a single ``bincount`` over
(node, feature, bin) keys, so a fit costs a handful of numpy calls per level
rather than per node.  Split candidates are the midpoints between
consecutive distinct training values of a feature; ties in gain go to the
lowest feature index and then the lowest threshold.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .searchspace import KnobKind, SearchSpace

MODEL_FORMAT_VERSION = 1
_MSE_SLACK = 1e-12


# -- features ---------------------------------------------------------------

def feature_table(space: SearchSpace) -> np.ndarray:
    """Feature matrix for every configuration of ``space``, row = linear index.

    Split knobs contribute log2 of the split value, other knobs their
    category index.
    """
    cols = []
    for i, knob in enumerate(space.knobs):
        coords = space.all_coords[:, i]
        if knob.kind is KnobKind.SPLIT:
            cols.append(np.log2(np.asarray(knob.values, dtype=np.float64))[coords])
        else:
            cols.append(coords.astype(np.float64))
    return np.stack(cols, axis=1)


def featurize(c: Sequence[int], space: SearchSpace) -> np.ndarray:
    """Feature vector of one configuration given by its knob values."""
    if len(c) != space.ndim:
        raise ValueError(f"configuration has {len(c)} values, space has {space.ndim} knobs")
    out = np.empty(space.ndim)
    for i, (knob, v) in enumerate(zip(space.knobs, c)):
        if int(v) not in knob.values:
            raise ValueError(f"value {v} not in knob {knob.name!r}")
        out[i] = np.log2(v) if knob.kind is KnobKind.SPLIT else knob.values.index(int(v))
    return out


# -- training set -------------------------------------------------------------

@dataclass
class TrainingSet:
    features: np.ndarray
    targets: np.ndarray
    indices: np.ndarray
    valid: np.ndarray

    def __len__(self):
        return int(self.targets.size)

    @classmethod
    def from_measurements(cls, features: np.ndarray, indices, valid, gflops) -> "TrainingSet":
        """Invalid rows get target 0; valid rows gflops / best gflops in the set."""
        indices = np.asarray(indices, dtype=np.int64)
        valid = np.asarray(valid, dtype=bool)
        gflops = np.asarray(gflops, dtype=np.float64)
        best = gflops[valid].max() if valid.any() else 0.0
        targets = np.zeros(indices.size)
        if best > 0:
            targets[valid] = gflops[valid] / best
        return cls(np.asarray(features)[indices], targets, indices, valid)


# -- model ----------------------------------------------------------------------

@dataclass
class Tree:
    feature: np.ndarray      # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @cached_property
    def depth(self) -> int:
        depth = np.zeros(self.feature.size, dtype=np.int64)
        for n in range(self.feature.size):
            if self.feature[n] >= 0:
                depth[self.left[n]] = depth[n] + 1
                depth[self.right[n]] = depth[n] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            f = self.feature[node]
            internal = f >= 0
            go_left = X[rows, np.maximum(f, 0)] <= self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_record(self, node: int = 0) -> dict:
        if self.feature[node] < 0:
            return {"leaf": float(self.value[node])}
        return {"feature": int(self.feature[node]), "threshold": float(self.threshold[node]),
                "left": self.to_record(int(self.left[node])),
                "right": self.to_record(int(self.right[node]))}

    @classmethod
    def from_record(cls, rec: dict) -> "Tree":
        feat, thr, left, right, val = [], [], [], [], []

        def visit(r):
            n = len(feat)
            feat.append(-1); thr.append(0.0); left.append(-1); right.append(-1)
            val.append(float(r.get("leaf", 0.0)))
            if "leaf" not in r:
                feat[n] = int(r["feature"])
                thr[n] = float(r["threshold"])
                left[n] = visit(r["left"])
                right[n] = visit(r["right"])
            return n

        visit(rec)
        return cls(np.array(feat, dtype=np.int64), np.array(thr), np.array(left, dtype=np.int64),
                   np.array(right, dtype=np.int64), np.array(val))


@dataclass
class GBTParams:
    n_trees: int = 50
    max_depth: int = 6
    learning_rate: float = 0.1
    min_samples_leaf: int = 2
    subsample: float = 1.0

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 0 or self.min_samples_leaf < 1:
            raise ValueError("invalid boosting hyperparameters")
        if not 0 < self.learning_rate <= 1 or not 0 < self.subsample <= 1:
            raise ValueError("learning_rate and subsample must lie in (0, 1]")


@dataclass
class SurrogateModel:
    params: GBTParams = field(default_factory=GBTParams)
    n_features: int | None = None
    base_score: float = 0.0
    trees: list[Tree] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)

    @property
    def fitted(self) -> bool:
        return self.n_features is not None

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if self.n_features is not None and X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            out += self.params.learning_rate * tree.predict(X)
        return out[0] if single else out

    def fit(self, ts: TrainingSet, seed: int = 0) -> "SurrogateModel":
        return fit(self, ts, seed)

    # -- persistence -----------------------------------------------------------
    def to_dict(self) -> dict:
        return {"format": "hwtune-gbt", "version": MODEL_FORMAT_VERSION,
                "params": asdict(self.params), "n_features": self.n_features,
                "base_score": self.base_score, "train_mse": self.train_mse,
                "trees": [t.to_record() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateModel":
        if d.get("format") != "hwtune-gbt" or d.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError("unsupported model file")
        return cls(GBTParams(**d["params"]), d["n_features"], float(d["base_score"]),
                   [Tree.from_record(r) for r in d["trees"]], list(d.get("train_mse", [])))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SurrogateModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict(model: SurrogateModel, fv: np.ndarray) -> float | np.ndarray:
    return model.predict(fv)


def predict_space(model: SurrogateModel, space: SearchSpace,
                  features: np.ndarray | None = None) -> np.ndarray:
    """Predictions for every configuration of ``space``, indexed by linear index.

    Each leaf of a tree covers an axis-aligned box of grid coordinates
    (features are monotone in the value index), so the prediction tensor is
    filled box by box instead of routing every configuration through every
    tree.  Agrees with ``model.predict(feature_table(space))``.
    """
    shape = tuple(int(c) for c in space.cardinalities)
    out = np.full(shape, model.base_score)
    if not model.trees:
        return out.ravel()
    if features is None:
        features = feature_table(space)
    # per knob, the feature value of each coordinate (monotone increasing)
    axis_values = [features[space.strides[k] * np.arange(card), k]
                   for k, card in enumerate(shape)]
    lr = model.params.learning_rate
    for tree in model.trees:
        stack = [(0, [0] * len(shape), list(shape))]
        while stack:
            node, lo, hi = stack.pop()
            f = tree.feature[node]
            if f < 0:
                out[tuple(slice(a, b) for a, b in zip(lo, hi))] += lr * tree.value[node]
                continue
            cut = int(np.searchsorted(axis_values[f], tree.threshold[node], side="right"))
            l_hi = list(hi); l_hi[f] = min(hi[f], max(lo[f], cut))
            r_lo = list(lo); r_lo[f] = max(lo[f], min(hi[f], cut))
            if l_hi[f] > lo[f]:
                stack.append((int(tree.left[node]), lo, l_hi))
            if hi[f] > r_lo[f]:
                stack.append((int(tree.right[node]), r_lo, hi))
    return out.ravel()


def _bin_features(X: np.ndarray):
    codes = np.empty(X.shape, dtype=np.int64)
    thresholds = []
    for f in range(X.shape[1]):
        uniq, inv = np.unique(X[:, f], return_inverse=True)
        codes[:, f] = inv
        thresholds.append((uniq[:-1] + uniq[1:]) / 2)
    return codes, thresholds


class _Binning:
    """Flat (feature, bin) layout shared by every tree of one fit."""

    def __init__(self, X: np.ndarray):
        codes, thresholds = _bin_features(X)
        self.n_feat = X.shape[1]
        self.n_bins = np.array([t.size + 1 for t in thresholds], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.n_bins)[:-1]])
        self.total = int(self.n_bins.sum())
        self.bin_feature = np.repeat(np.arange(self.n_feat), self.n_bins)
        self.last = np.zeros(self.total, dtype=bool)
        self.last[self.offsets + self.n_bins - 1] = True
        self.threshold = np.full(self.total, np.nan)
        for f, t in enumerate(thresholds):
            self.threshold[self.offsets[f]:self.offsets[f] + t.size] = t
        self.keyed = codes + self.offsets   # flat bin id per (row, feature)
        self.seg_end = self.offsets[1:] - 1


def _grow_tree(binning: _Binning, residual: np.ndarray, rows: np.ndarray,
               params: GBTParams) -> Tree:
    B = binning
    F, T = B.n_feat, B.total
    msl = params.min_samples_leaf
    cap = 2 ** (params.max_depth + 1) - 1
    feature = np.full(cap, -1, dtype=np.int64)
    split_bin = np.zeros(cap, dtype=np.int64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    n_nodes = 1

    r = residual[rows]
    keyed = B.keyed[rows]
    node_of = np.zeros(rows.size, dtype=np.int64)
    value[0] = r.mean()
    open_nodes = np.zeros(1, dtype=np.int64)
    local = np.full(cap, -1, dtype=np.int64)
    for _depth in range(params.max_depth):
        m = open_nodes.size
        local[:] = -1
        local[open_nodes] = np.arange(m)
        row_local = local[node_of]
        active = row_local >= 0
        keys = (row_local[active, None] * T + keyed[active]).ravel()
        g = np.bincount(keys, weights=np.repeat(r[active], F),
                        minlength=m * T).reshape(m, T)
        c = np.bincount(keys, minlength=m * T).reshape(m, T).astype(np.float64)
        # prefix sums restart at each feature boundary
        gl = np.cumsum(g, axis=1)
        cl = np.cumsum(c, axis=1)
        zero = np.zeros((m, 1))
        gl -= np.repeat(np.concatenate([zero, gl[:, B.seg_end]], axis=1), B.n_bins, axis=1)
        cl -= np.repeat(np.concatenate([zero, cl[:, B.seg_end]], axis=1), B.n_bins, axis=1)
        g_tot = gl[:, B.n_bins[0] - 1:B.n_bins[0]]
        c_tot = cl[:, B.n_bins[0] - 1:B.n_bins[0]]
        gr = g_tot - gl
        cr = c_tot - cl
        legal = (cl >= msl) & (cr >= msl) & ~B.last
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(legal, gl ** 2 / cl + gr ** 2 / cr - g_tot ** 2 / c_tot, -np.inf)
        # first maximum = lowest feature, then lowest threshold
        best = np.argmax(gain, axis=1)
        idx = np.arange(m)
        best_gain = gain[idx, best]
        do = np.isfinite(best_gain) & (best_gain > 1e-12 * np.maximum(1.0, c_tot[:, 0]))
        if not do.any():
            break
        nodes = open_nodes[do]
        fb = best[do]
        s = nodes.size
        lid = n_nodes + 2 * np.arange(s)
        rid = lid + 1
        n_nodes += 2 * s
        feature[nodes] = B.bin_feature[fb]
        split_bin[nodes] = fb
        left[nodes], right[nodes] = lid, rid
        j = idx[do]
        value[lid] = gl[j, fb] / cl[j, fb]
        value[rid] = gr[j, fb] / cr[j, fb]
        # route rows of the nodes just split
        moving = feature[node_of] >= 0
        moving &= left[node_of] >= n_nodes - 2 * s
        nid = node_of[moving]
        go_left = keyed[moving, feature[nid]] <= split_bin[nid]
        node_of[moving] = np.where(go_left, left[nid], right[nid])
        open_nodes = np.concatenate([lid, rid])
    thr = np.where(feature[:n_nodes] >= 0, B.threshold[split_bin[:n_nodes]], 0.0)
    return Tree(feature[:n_nodes].copy(), thr, left[:n_nodes].copy(),
                right[:n_nodes].copy(), value[:n_nodes].copy())


def fit(model: SurrogateModel, ts: TrainingSet, seed: int = 0) -> SurrogateModel:
    """Squared-error boosting; returns a new fitted model with ``model``'s params."""
    X = np.asarray(ts.features, dtype=np.float64)
    y = np.asarray(ts.targets, dtype=np.float64)
    if y.size == 0:
        raise ValueError("cannot fit on an empty training set")
    params = model.params
    rng = np.random.default_rng(seed)
    binning = _Binning(X)
    out = SurrogateModel(params, X.shape[1], float(y.mean()))
    pred = np.full(y.size, out.base_score)
    mse = float(np.mean((y - pred) ** 2))
    out.train_mse.append(mse)
    all_rows = np.arange(y.size)
    for _ in range(params.n_trees):
        if mse <= 0.0:
            break
        if params.subsample < 1.0:
            k = max(1, int(round(params.subsample * y.size)))
            rows = np.sort(rng.choice(y.size, size=k, replace=False))
        else:
            rows = all_rows
        tree = _grow_tree(binning, y - pred, rows, params)
        if tree.feature.size == 1 and params.subsample == 1.0:
            # a bare root leaf only shifts by the mean residual, which is ~0
            break
        leaf = tree.apply(X)
        pred = pred + params.learning_rate * tree.value[leaf]
        new_mse = float(np.mean((y - pred) ** 2))
        if params.subsample == 1.0 and new_mse > mse + _MSE_SLACK * max(1.0, mse):
            raise AssertionError(f"training MSE increased: {mse} -> {new_mse}")
        mse = new_mse
        out.trees.append(tree)
        out.train_mse.append(mse)
    return out


# -- controlled-ratio study -------------------------------------------------------

@dataclass(frozen=True)
class StudyCell:
    ratio: float
    sample_size: int
    n_valid: int
    ndcg: float
    precision: float
    accuracy_valid_invalid: float
    accuracy_valid_valid: float
    repeats: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StudyReport:
    workload_id: str
    n_at: int
    cells: list[StudyCell]

    def cell(self, ratio: float, sample_size: int) -> StudyCell:
        for c in self.cells:
            if np.isclose(c.ratio, ratio) and c.sample_size == sample_size:
                return c
        raise KeyError((ratio, sample_size))

    def to_dict(self) -> dict:
        return {"workload_id": self.workload_id, "n_at": self.n_at,
                "cells": [c.to_dict() for c in self.cells]}


def controlled_ratio_study(truth, space: SearchSpace, ratios: Sequence[float],
                           sample_sizes: Sequence[int], n_at: int, repeats: int,
                           seed: int = 0, params: GBTParams | None = None,
                           test_fraction: float = 0.25) -> StudyReport:
    """Model quality as a function of the valid share of its training data.

    Every repeat splits the whole space at random into a training pool and a
    held-out test set (``test_fraction``).  For each (ratio, size) a training
    set with exactly ``floor(ratio * size)`` valid rows is drawn from the
    pool, a model is fitted and ranked on the untouched test set.
    """
    from .metrics import ndcg_at_n, pairwise_accuracy, precision_at_n, rank

    truth.check_space(space)
    ratios = [float(r) for r in ratios]
    if any(not 0 < r < 1 for r in ratios):
        raise ValueError("ratios must lie strictly between 0 and 1")
    params = params or GBTParams()
    features = feature_table(space)
    valid_all, gflops = np.asarray(truth.valid), np.asarray(truth.gflops)
    n_test = int(round(test_fraction * space.size))
    if not 1 <= n_at <= n_test:
        raise ValueError(f"n_at={n_at} outside the test set size {n_test}")
    pool_valid = int(round(valid_all.sum() * (1 - test_fraction)))
    pool_invalid = space.size - n_test - pool_valid
    for r in ratios:
        for s in sample_sizes:
            nv = int(np.floor(r * s))
            # a random split can fall short of the expected counts; keep a margin
            if nv > 0.9 * pool_valid or s - nv > 0.9 * pool_invalid:
                raise ValueError(f"ratio {r} at size {s} is unrealizable for workload "
                                 f"{truth.workload_id}")

    rng = np.random.default_rng(seed)
    acc = {(r, s): [] for r in ratios for s in sample_sizes}
    for rep in range(repeats):
        perm = rng.permutation(space.size)
        test, pool = np.sort(perm[:n_test]), perm[n_test:]
        pv, pi = pool[valid_all[pool]], pool[~valid_all[pool]]
        tv = valid_all[test]
        for r in ratios:
            for s in sample_sizes:
                nv = int(np.floor(r * s))
                if nv > pv.size or s - nv > pi.size:
                    raise ValueError(f"ratio {r} at size {s} is unrealizable in repeat {rep}")
                rows = np.concatenate([rng.choice(pv, nv, replace=False),
                                       rng.choice(pi, s - nv, replace=False)])
                ts = TrainingSet.from_measurements(features, rows, valid_all[rows], gflops[rows])
                model = fit(SurrogateModel(params), ts, seed=int(rng.integers(2**31)))
                pred = model.predict(features[test])
                rl = rank(pred, gflops[test], tv, test)
                acc[(r, s)].append((
                    nv, ndcg_at_n(rl, n_at), precision_at_n(rl, n_at),
                    pairwise_accuracy(pred, gflops[test], tv, "valid-invalid"),
                    pairwise_accuracy(pred, gflops[test], tv, "valid-valid")))
    cells = []
    for (r, s), rows in acc.items():
        m = np.mean([x[1:] for x in rows], axis=0)
        cells.append(StudyCell(r, int(s), rows[0][0], *(float(v) for v in m), repeats))
    return StudyReport(truth.workload_id, n_at, cells)
