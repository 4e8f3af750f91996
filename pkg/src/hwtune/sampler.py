"""Validity presampling that follows grid locality, and spread-out batch selection."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .searchspace import SearchSpace, neighbor_array

DEFAULT_N_PARALLEL = 8


@dataclass
class PresampleSet:
    indices: np.ndarray      # in evaluation order
    valid: np.ndarray
    exhausted: bool = False

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.indices.shape != self.valid.shape:
            raise ValueError("indices and validity flags differ in length")
        if np.unique(self.indices).size != self.indices.size:
            raise ValueError("presample contains duplicate configurations")

    def __len__(self):
        return int(self.indices.size)

    @property
    def valid_subset(self) -> np.ndarray:
        return self.indices[self.valid]

    @property
    def invalid_subset(self) -> np.ndarray:
        return self.indices[~self.valid]

    @property
    def valid_fraction(self) -> float:
        return float(self.valid.mean()) if len(self) else 0.0

    def to_json(self) -> str:
        return json.dumps({"exhausted": self.exhausted,
                           "entries": [[int(i), bool(v)] for i, v in zip(self.indices, self.valid)]})

    @classmethod
    def from_json(cls, text: str) -> "PresampleSet":
        doc = json.loads(text)
        entries = doc["entries"]
        return cls(np.array([e[0] for e in entries], dtype=np.int64),
                   np.array([e[1] for e in entries], dtype=bool), bool(doc.get("exhausted", False)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PresampleSet":
        return cls.from_json(Path(path).read_text())


class _Pool:
    """Unvisited-point bookkeeping: a point is *seen* once it is in C or N."""

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.seen = np.zeros(size, dtype=bool)
        self.n_seen = 0
        self.rng = rng

    def mark(self, idx: np.ndarray) -> None:
        # idx must be distinct and currently unseen
        self.seen[idx] = True
        self.n_seen += int(idx.size)

    def random_unseen(self, k: int) -> np.ndarray:
        """Up to ``k`` distinct uniformly drawn unseen points (marked as seen)."""
        k = min(k, self.size - self.n_seen)
        if k <= 0:
            return np.zeros(0, dtype=np.int64)
        picked: list[int] = []
        if self.n_seen < self.size // 2:
            tries = 0
            while len(picked) < k and tries < 64 * k:
                tries += 1
                c = int(self.rng.integers(self.size))
                if not self.seen[c]:
                    self.seen[c] = True
                    picked.append(c)
        if len(picked) < k:
            free = np.flatnonzero(~self.seen)
            extra = self.rng.choice(free, size=k - len(picked), replace=False)
            self.seen[extra] = True
            picked.extend(int(e) for e in extra)
        self.n_seen += len(picked)
        return np.asarray(picked, dtype=np.int64)


def presample(n_samples: int, n_parallel: int, space: SearchSpace,
              check: Callable[[int], bool], seed: int = 0) -> PresampleSet:
    """Locality-driven validity sampling.

    Starting from ``n_parallel`` random points, each evaluated point that is
    valid pushes its unseen grid neighbours into the candidate pool; each
    invalid one pushes a single random unseen point.  The next batch is drawn
    uniformly from the pool.  The pool persists between batches and is topped
    up with random unseen points whenever it holds fewer than ``n_parallel``.
    ``check`` is called exactly once per configuration, in batch order.
    """
    if n_samples < 1 or n_parallel < 1:
        raise ValueError("n_samples and n_parallel must be >= 1")
    rng = np.random.default_rng(seed)
    target = min(n_samples, space.size)
    pool = _Pool(space.size, rng)
    order: list[int] = []
    flags: list[bool] = []
    candidates: list[int] = []

    batch = pool.random_unseen(n_parallel)
    while len(order) < target:
        for p in batch.tolist():
            ok = bool(check(p))
            order.append(p)
            flags.append(ok)
            if ok:
                nb = neighbor_array(p, space)
                nb = nb[~pool.seen[nb]]
                pool.mark(nb)
                candidates.extend(nb.tolist())
            else:
                candidates.extend(pool.random_unseen(1).tolist())
        if len(order) >= target:
            break
        if len(candidates) < n_parallel:
            candidates.extend(pool.random_unseen(n_parallel - len(candidates)).tolist())
        if not candidates:
            break
        k = min(n_parallel, len(candidates))
        pick = np.sort(rng.choice(len(candidates), size=k, replace=False))
        batch = np.asarray([candidates[i] for i in pick], dtype=np.int64)
        for i in pick[::-1]:
            candidates[i] = candidates[-1]
            candidates.pop()
    return PresampleSet(np.asarray(order, dtype=np.int64), np.asarray(flags, dtype=bool),
                        exhausted=len(order) >= space.size and n_samples > space.size)


# -- batch selection ------------------------------------------------------------

@dataclass
class InitialBatch:
    configs: np.ndarray
    valid_count: int
    invalid_count: int


def farthest_point_order(coords: np.ndarray, k: int, first: int,
                         indices: np.ndarray | None = None) -> np.ndarray:
    """Greedy k-center selection under Manhattan distance.

    ``first`` is a row of ``coords``.  Each following pick maximises the
    minimum distance to the rows already picked; ties go to the lowest
    ``indices`` value (row number when ``indices`` is omitted).  Returns row
    numbers in pick order.
    """
    coords = np.asarray(coords, dtype=np.int64)
    n = coords.shape[0]
    k = min(k, n)
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    tie = np.arange(n) if indices is None else np.asarray(indices)
    rank_of = np.empty(n, dtype=np.int64)
    rank_of[np.argsort(tie, kind="stable")] = np.arange(n)
    picked = [int(first)]
    dmin = np.abs(coords - coords[first]).sum(axis=1)
    dmin[first] = -1
    for _ in range(k - 1):
        top = dmin.max()
        cands = np.flatnonzero(dmin == top)
        nxt = int(cands[np.argmin(rank_of[cands])])
        picked.append(nxt)
        dmin = np.minimum(dmin, np.abs(coords - coords[nxt]).sum(axis=1))
        dmin[picked] = -1
    return np.asarray(picked, dtype=np.int64)


def _spread(space: SearchSpace, subset: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    if k <= 0 or subset.size == 0:
        return np.zeros(0, dtype=np.int64)
    first = int(rng.integers(subset.size))
    rows = farthest_point_order(space.coords_array(subset), k, first, indices=subset)
    return subset[rows]


def select_initial_batch(N: PresampleSet, space: SearchSpace, epoch_size: int,
                         max_valid: int, seed: int = 0) -> InitialBatch:
    """Balanced first epoch drawn from a presample.

    Takes ``min(|valid|, max_valid)`` valid and
    ``min(|invalid|, epoch_size - valid_count)`` invalid configurations, each
    group spread out by greedy farthest-point selection.
    """
    if epoch_size < 1:
        raise ValueError("epoch_size must be >= 1")
    valid, invalid = N.valid_subset, N.invalid_subset
    if valid.size == 0 and invalid.size == 0:
        raise ValueError("presample set is empty")
    n_valid = min(valid.size, max_valid, epoch_size)
    n_invalid = min(invalid.size, epoch_size - n_valid)
    rng = np.random.default_rng(seed)
    chosen_valid = _spread(space, valid, n_valid, rng)
    chosen_invalid = _spread(space, invalid, n_invalid, rng)
    return InitialBatch(np.concatenate([chosen_valid, chosen_invalid]), int(n_valid), int(n_invalid))
