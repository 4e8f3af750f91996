"""Knobs, the Cartesian-grid search space and grid-graph analysis of validity.

A search space is the Cartesian product of knob value lists.  Every
configuration has grid coordinates (one value *index* per knob) and a linear
index obtained by mixed-radix encoding with knob 0 as the most significant
digit.  Adjacency is defined on coordinates: two configurations are
neighbours when their coordinates differ by exactly one step in one knob.
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage


class KnobKind(str, enum.Enum):
    SPLIT = "Split"
    OTHER = "OtherOption"


@dataclass(frozen=True)
class Knob:
    name: str
    kind: KnobKind
    values: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", KnobKind(self.kind))
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        if not self.values:
            raise ValueError(f"knob {self.name!r} has no values")
        if len(set(self.values)) != len(self.values):
            raise ValueError(f"knob {self.name!r} has duplicate values")
        if any(v < 1 for v in self.values):
            raise ValueError(f"knob {self.name!r} values must be positive")
        if self.kind is KnobKind.SPLIT and list(self.values) != sorted(self.values):
            raise ValueError(f"split knob {self.name!r} values must be ascending")

    def __len__(self):
        return len(self.values)

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind.value, "values": list(self.values)}


@dataclass(frozen=True)
class SearchSpace:
    knobs: tuple[Knob, ...]
    workload_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "knobs", tuple(self.knobs))
        if not self.knobs:
            raise ValueError("a search space needs at least one knob")
        names = [k.name for k in self.knobs]
        if len(set(names)) != len(names):
            raise ValueError("knob names must be unique")

    # -- shape -----------------------------------------------------------
    @cached_property
    def cardinalities(self) -> np.ndarray:
        return np.array([len(k) for k in self.knobs], dtype=np.int64)

    @cached_property
    def strides(self) -> np.ndarray:
        # knob 0 is the most significant digit
        cards = self.cardinalities
        strides = np.ones(len(cards), dtype=np.int64)
        for i in range(len(cards) - 2, -1, -1):
            strides[i] = strides[i + 1] * cards[i + 1]
        return strides

    @property
    def size(self) -> int:
        return int(np.prod(self.cardinalities))

    @property
    def ndim(self) -> int:
        return len(self.knobs)

    @property
    def knob_names(self) -> list[str]:
        return [k.name for k in self.knobs]

    def knob_index(self, name: str) -> int:
        return self.knob_names.index(name)

    # -- index arithmetic ------------------------------------------------
    def to_coords(self, linear: int) -> tuple[int, ...]:
        linear = int(linear)
        if not 0 <= linear < self.size:
            raise IndexError(f"linear index {linear} out of range [0, {self.size})")
        return tuple(int(c) for c in (linear // self.strides) % self.cardinalities)

    def from_coords(self, coords: Sequence[int]) -> int:
        coords = np.asarray(coords, dtype=np.int64)
        if coords.shape != (self.ndim,):
            raise ValueError(f"expected {self.ndim} coordinates, got {coords.shape}")
        if np.any(coords < 0) or np.any(coords >= self.cardinalities):
            raise IndexError(f"coordinates {coords.tolist()} outside the grid")
        return int(coords @ self.strides)

    def coords_array(self, linear: np.ndarray) -> np.ndarray:
        """Vectorised ``to_coords``: (n,) linear indices -> (n, ndim) coords."""
        linear = np.asarray(linear, dtype=np.int64)
        return (linear[:, None] // self.strides) % self.cardinalities

    def linear_array(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords, dtype=np.int64) @ self.strides

    @cached_property
    def all_coords(self) -> np.ndarray:
        arr = self.coords_array(np.arange(self.size))
        arr.flags.writeable = False
        return arr

    @cached_property
    def value_table(self) -> np.ndarray:
        """(size, ndim) matrix of resolved knob values for every configuration."""
        cols = [np.asarray(k.values, dtype=np.int64)[self.all_coords[:, i]]
                for i, k in enumerate(self.knobs)]
        arr = np.stack(cols, axis=1)
        arr.flags.writeable = False
        return arr

    def config(self, linear: int) -> tuple[int, ...]:
        coords = self.to_coords(linear)
        return tuple(k.values[c] for k, c in zip(self.knobs, coords))

    def index_of(self, values: Sequence[int]) -> int:
        if len(values) != self.ndim:
            raise ValueError(f"expected {self.ndim} knob values, got {len(values)}")
        coords = []
        for knob, v in zip(self.knobs, values):
            try:
                coords.append(knob.values.index(int(v)))
            except ValueError:
                raise ValueError(f"value {v} not in knob {knob.name!r}") from None
        return self.from_coords(coords)

    def neighbors(self, linear: int) -> list[int]:
        return neighbors(self.to_coords(linear), self)

    # -- serialisation ---------------------------------------------------
    def to_dict(self) -> dict:
        return {"workload_id": self.workload_id,
                "knobs": [k.to_dict() for k in self.knobs]}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        knobs = [Knob(k["name"], KnobKind(k["kind"]), tuple(k["values"])) for k in d["knobs"]]
        return build_space(knobs, workload_id=str(d.get("workload_id", "")))

    @cached_property
    def space_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_space(knob_defs: Iterable[Knob], workload_id: str = "") -> SearchSpace:
    return SearchSpace(tuple(knob_defs), workload_id)


def to_coords(linear: int, space: SearchSpace) -> tuple[int, ...]:
    return space.to_coords(linear)


def from_coords(coords: Sequence[int], space: SearchSpace) -> int:
    return space.from_coords(coords)


def manhattan_distance(a: Sequence[int], b: Sequence[int]) -> int:
    if len(a) != len(b):
        raise ValueError(f"coordinate lengths differ: {len(a)} vs {len(b)}")
    return int(sum(abs(int(x) - int(y)) for x, y in zip(a, b)))


def neighbors(coords: Sequence[int], space: SearchSpace) -> list[int]:
    """Linear indices of all grid points at Manhattan distance exactly one."""
    base = space.from_coords(coords)
    out = []
    for k, (c, card, stride) in enumerate(zip(coords, space.cardinalities, space.strides)):
        if c > 0:
            out.append(base - int(stride))
        if c + 1 < card:
            out.append(base + int(stride))
    return sorted(out)


def neighbor_array(linear: int, space: SearchSpace) -> np.ndarray:
    coords = space.all_coords[linear] if space.size <= 10**6 else np.array(space.to_coords(linear))
    down = coords > 0
    up = coords + 1 < space.cardinalities
    return np.concatenate([linear - space.strides[down], linear + space.strides[up]])


# -- validity graph ---------------------------------------------------------

@dataclass
class GraphSummary:
    n_valid: int
    n_components: int
    largest_component: int
    size_histogram: dict[int, int]
    valid_valid_edges: int
    valid_any_edges: int
    shuffle_largest: list[int] = field(default_factory=list)
    shuffle_seed: int | None = None

    @property
    def shuffle_percentiles(self) -> dict[str, float]:
        if not self.shuffle_largest:
            return {}
        arr = np.asarray(self.shuffle_largest)
        return {f"p{q}": float(np.percentile(arr, q)) for q in (10, 50, 90)}

    def to_dict(self) -> dict:
        return {
            "n_valid": self.n_valid,
            "n_components": self.n_components,
            "largest_component": self.largest_component,
            "size_histogram": {str(k): v for k, v in sorted(self.size_histogram.items())},
            "valid_valid_edges": self.valid_valid_edges,
            "valid_any_edges": self.valid_any_edges,
            "shuffle": {"seed": self.shuffle_seed, "n": len(self.shuffle_largest),
                        "largest": self.shuffle_largest,
                        "percentiles": self.shuffle_percentiles},
        }


def _components(grid: np.ndarray) -> np.ndarray:
    structure = ndimage.generate_binary_structure(grid.ndim, 1)
    labels, n = ndimage.label(grid, structure=structure)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    return np.bincount(labels.ravel())[1:]


def _edge_counts(grid: np.ndarray) -> tuple[int, int]:
    vv = va = 0
    for ax in range(grid.ndim):
        n = grid.shape[ax]
        if n < 2:
            continue
        a = np.take(grid, np.arange(n - 1), axis=ax)
        b = np.take(grid, np.arange(1, n), axis=ax)
        vv += int(np.count_nonzero(a & b))
        va += int(np.count_nonzero(a | b))
    return vv, va


def validity_graph(space: SearchSpace, valid: np.ndarray, n_shuffles: int = 100,
                   seed: int = 0) -> GraphSummary:
    """Connected components of valid configurations under grid adjacency.

    ``valid`` is the dense validity mask indexed by linear index (a
    ``GroundTruthTable`` may be passed directly).  Components are built from
    valid-valid edges only.  The shuffle control permutes the labels
    ``n_shuffles`` times and records the largest component of each shuffle.
    """
    valid = getattr(valid, "valid", valid)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != (space.size,):
        raise ValueError(f"validity mask has {valid.size} entries, space has {space.size}")
    shape = tuple(int(c) for c in space.cardinalities)
    grid = valid.reshape(shape)
    sizes = _components(grid)
    hist: dict[int, int] = {}
    for s in sizes.tolist():
        hist[s] = hist.get(s, 0) + 1
    vv, va = _edge_counts(grid)

    rng = np.random.default_rng(seed)
    shuffled = []
    for _ in range(n_shuffles):
        perm = rng.permutation(valid).reshape(shape)
        comp = _components(perm)
        shuffled.append(int(comp.max()) if comp.size else 0)

    return GraphSummary(
        n_valid=int(valid.sum()),
        n_components=int(sizes.size),
        largest_component=int(sizes.max()) if sizes.size else 0,
        size_histogram=hist,
        valid_valid_edges=vv,
        valid_any_edges=va,
        shuffle_largest=shuffled,
        shuffle_seed=seed,
    )
