"""Synthetic Conv2D accelerator used as the measurement proxy.

The accelerator has three on-chip buffers (input, weight, accumulator) and a
GEMM core working on ``block x block`` channel tiles.  A configuration is
valid when every tile fits its buffer and, for the two high-reuse loop
orders, when the channel tile fits the compute array.  Valid configurations
get a deterministic throughput from a small analytic latency model.

All validity arithmetic is integer.  Throughput is computed from integers
with a fixed sequence of float operations so results are reproducible.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .searchspace import Knob, KnobKind, SearchSpace, build_space

CHANNEL_BLOCK = 16
MAX_CI_DIVISORS = 32
EXHAUSTIVE_BUDGET = 200_000

KNOB_ORDER = ("tile_b", "tile_h", "tile_w", "tile_ci", "tile_co",
              "loop_order", "h_threading", "oc_threading")

# relative pipeline efficiency of the four loop orders; orders 3 and 4 keep
# partial sums resident and are only legal for small channel tiles
ORDER_EFFICIENCY = (0.80, 0.86, 0.95, 1.00)


@dataclass(frozen=True)
class WorkloadSpec:
    id: str
    batch: int
    channel_out: int
    channel_in: int
    image_h: int
    image_w: int
    kernel_h: int
    kernel_w: int
    stride: tuple[int, int] = (1, 1)
    pad: tuple[int, int] = (0, 0)

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "stride", tuple(int(s) for s in self.stride))
        object.__setattr__(self, "pad", tuple(int(p) for p in self.pad))
        for name in ("batch", "channel_out", "channel_in", "image_h", "image_w",
                     "kernel_h", "kernel_w"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"workload {self.id}: {name} must be >= 1")
        if len(self.stride) != 2 or len(self.pad) != 2:
            raise ValueError(f"workload {self.id}: stride and pad need two entries")
        if min(self.stride) < 1 or min(self.pad) < 0:
            raise ValueError(f"workload {self.id}: bad stride/pad")

    @property
    def out_h(self) -> int:
        return (self.image_h + 2 * self.pad[0] - self.kernel_h) // self.stride[0] + 1

    @property
    def out_w(self) -> int:
        return (self.image_w + 2 * self.pad[1] - self.kernel_w) // self.stride[1] + 1

    @property
    def flops(self) -> int:
        return (2 * self.batch * self.out_h * self.out_w * self.channel_out
                * self.channel_in * self.kernel_h * self.kernel_w)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stride"] = list(self.stride)
        d["pad"] = list(self.pad)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadSpec":
        return cls(**{**d, "stride": tuple(d.get("stride", (1, 1))),
                      "pad": tuple(d.get("pad", (0, 0)))})


@dataclass(frozen=True)
class HardwareBudget:
    input_buffer_bytes: int = 32 * 1024
    weight_buffer_bytes: int = 256 * 1024
    accum_buffer_bytes: int = 128 * 1024
    elem_bytes: int = 1
    dma_setup_cycles: int = 64
    compute_lanes: int = 4          # in channel blocks
    block: int = CHANNEL_BLOCK
    pipeline_fill_cycles: int = 12
    clock_mhz: int = 100

    def __post_init__(self):
        for name, v in asdict(self).items():
            if int(v) < 1:
                raise ValueError(f"hardware budget {name} must be positive")

    def scaled(self, factor: float) -> "HardwareBudget":
        """Copy with all three buffer capacities multiplied by ``factor``."""
        d = asdict(self)
        for key in ("input_buffer_bytes", "weight_buffer_bytes", "accum_buffer_bytes"):
            d[key] = max(1, int(round(d[key] * factor)))
        return HardwareBudget(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HardwareBudget":
        return cls(**d)


@dataclass(frozen=True)
class MeasurementResult:
    valid: bool
    gflops: float = 0.0

    def __post_init__(self):
        if not self.valid and self.gflops != 0.0:
            raise ValueError("invalid measurement must have zero throughput")
        if self.gflops < 0:
            raise ValueError("throughput must be non-negative")


def divisors(n: int) -> list[int]:
    small = [d for d in range(1, int(n ** 0.5) + 1) if n % d == 0]
    return sorted(set(small + [n // d for d in small]))


def generate_space(w: WorkloadSpec, block: int = CHANNEL_BLOCK) -> SearchSpace:
    """Knob menu for a Conv2D workload.

    Channel tiles count ``block``-wide channel groups, so their values are
    divisors of ``channels // block``.
    """
    if w.out_h < 1 or w.out_w < 1:
        raise ValueError(f"workload {w.id}: output image is empty")
    for name in ("channel_in", "channel_out"):
        if getattr(w, name) % block:
            raise ValueError(f"workload {w.id}: {name} not a multiple of block {block}")
    split = KnobKind.SPLIT
    other = KnobKind.OTHER
    knobs = [
        Knob("tile_b", split, tuple(divisors(w.batch))),
        Knob("tile_h", split, tuple(divisors(w.out_h))),
        Knob("tile_w", split, tuple(divisors(w.out_w))),
        Knob("tile_ci", split, tuple(divisors(w.channel_in // block)[:MAX_CI_DIVISORS])),
        Knob("tile_co", split, tuple(divisors(w.channel_out // block))),
        Knob("loop_order", other, (1, 2, 3, 4)),
        Knob("h_threading", other, (1, 2)),
        Knob("oc_threading", other, (1, 2)),
    ]
    return build_space(knobs, workload_id=w.id)


def _columns(values):
    v = np.asarray(values, dtype=np.int64)
    if v.ndim == 1:
        v = v[None, :]
    if v.shape[1] != len(KNOB_ORDER):
        raise ValueError(f"configuration needs {len(KNOB_ORDER)} knob values")
    return [v[:, i] for i in range(v.shape[1])]


def footprints(values, w: WorkloadSpec, hw: HardwareBudget):
    """Input, weight and accumulator tile sizes in bytes (integer arrays)."""
    tb, th, tw, tci, tco, _, _, _ = _columns(values)
    sh, sw = w.stride
    blk = hw.block
    inp = tb * (tci * blk) * (th * sh + w.kernel_h) * (tw * sw + w.kernel_w) * hw.elem_bytes
    wgt = (tco * blk) * (tci * blk) * w.kernel_h * w.kernel_w * hw.elem_bytes
    acc = tb * (tco * blk) * th * tw * hw.elem_bytes
    return inp, wgt, acc


def validity_array(values, w: WorkloadSpec, hw: HardwareBudget) -> np.ndarray:
    tb, th, tw, tci, tco, order, _, _ = _columns(values)
    inp, wgt, acc = footprints(values, w, hw)
    ok = ((inp <= hw.input_buffer_bytes)
          & (wgt <= hw.weight_buffer_bytes)
          & (acc <= hw.accum_buffer_bytes))
    reuse_orders = order >= 3
    ok &= ~reuse_orders | (tci * tco <= hw.compute_lanes ** 2)
    return ok


def utilization(values, w: WorkloadSpec, hw: HardwareBudget) -> np.ndarray:
    """Fraction of peak GEMM throughput reached inside one tile, in (0, 1]."""
    tb, th, tw, tci, tco, order, hthr, octhr = _columns(values)
    inner = tb * th * tw * w.kernel_h * w.kernel_w
    spatial = inner / (inner + hw.pipeline_fill_cycles)
    order_eff = np.asarray(ORDER_EFFICIENCY)[order - 1]
    # virtual threads overlap load and compute when the threaded axis splits evenly
    h_eff = np.where(hthr == 2, np.where(th % 2 == 0, 1.10, 0.90), 1.0)
    oc_eff = np.where(octhr == 2, np.where(tco % 2 == 0, 1.06, 0.92), 1.0)
    return spatial * order_eff * h_eff * oc_eff / (1.10 * 1.06)


def tile_count(values, w: WorkloadSpec, hw: HardwareBudget) -> np.ndarray:
    tb, th, tw, tci, tco, _, _, _ = _columns(values)
    return ((w.batch // tb) * (w.out_h // th) * (w.out_w // tw)
            * ((w.channel_in // hw.block) // tci) * ((w.channel_out // hw.block) // tco))


def throughput_array(values, w: WorkloadSpec, hw: HardwareBudget) -> np.ndarray:
    """GFLOP/s for every row, ignoring validity."""
    compute_cycles = (w.batch * w.out_h * w.out_w * w.kernel_h * w.kernel_w
                      * (w.channel_in // hw.block) * (w.channel_out // hw.block))
    latency = hw.dma_setup_cycles * tile_count(values, w, hw) + compute_cycles / utilization(values, w, hw)
    return w.flops * (hw.clock_mhz * 1e6) / latency / 1e9


def check_validity(c: Sequence[int], w: WorkloadSpec, hw: HardwareBudget,
                   space: SearchSpace | None = None) -> bool:
    if space is not None:
        space.index_of(c)  # raises when c is not in the space
    return bool(validity_array(c, w, hw)[0])


def measure(c: Sequence[int], w: WorkloadSpec, hw: HardwareBudget) -> MeasurementResult:
    if not check_validity(c, w, hw):
        return MeasurementResult(False, 0.0)
    return MeasurementResult(True, float(throughput_array(c, w, hw)[0]))


class GroundTruthTable:
    """Exhaustive validity and throughput for every configuration of a space."""

    def __init__(self, workload_id: str, space_hash: str, valid: np.ndarray, gflops: np.ndarray):
        valid = np.asarray(valid, dtype=bool)
        gflops = np.asarray(gflops, dtype=np.float64)
        if valid.shape != gflops.shape or valid.ndim != 1:
            raise ValueError("valid and gflops must be 1-D arrays of equal length")
        if np.any(gflops[~valid] != 0) or np.any(gflops[valid] <= 0):
            raise ValueError("invalid entries must have zero throughput, valid ones positive")
        self.workload_id = str(workload_id)
        self.space_hash = space_hash
        self.valid = valid
        self.gflops = gflops
        self.valid.flags.writeable = False
        self.gflops.flags.writeable = False

    @property
    def size(self) -> int:
        return int(self.valid.size)

    @property
    def valid_ratio(self) -> float:
        return float(self.valid.mean())

    @property
    def best_gflops(self) -> float:
        return float(self.gflops.max())

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.gflops))

    def __getitem__(self, linear: int) -> MeasurementResult:
        return MeasurementResult(bool(self.valid[linear]), float(self.gflops[linear]))

    def __len__(self):
        return self.size

    def check_space(self, space: SearchSpace) -> None:
        if space.space_hash != self.space_hash or space.size != self.size:
            raise ValueError(f"ground truth for {self.workload_id} does not match the search space "
                             f"(hash {self.space_hash} vs {space.space_hash})")

    # -- files -----------------------------------------------------------
    def header(self) -> dict:
        return {"workload_id": self.workload_id, "space_hash": self.space_hash,
                "size": self.size, "valid_ratio": self.valid_ratio}

    def save(self, path: str | Path) -> Path:
        """Write as ``.json`` (dense entry list) or ``.npz`` (binary)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix == ".npz":
            with open(path, "wb") as fh:
                np.savez_compressed(fh, header=json.dumps(self.header(), sort_keys=True),
                                    valid=self.valid, gflops=self.gflops)
        else:
            doc = {**self.header(),
                   "entries": [[int(v), float(g)] for v, g in zip(self.valid, self.gflops)]}
            path.write_text(json.dumps(doc, separators=(",", ":")) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path, space: SearchSpace | None = None) -> "GroundTruthTable":
        path = Path(path)
        if path.suffix == ".npz":
            with np.load(path) as data:
                header = json.loads(str(data["header"]))
                valid, gflops = data["valid"], data["gflops"]
        else:
            doc = json.loads(path.read_text())
            header = doc
            entries = np.asarray(doc["entries"], dtype=np.float64).reshape(-1, 2)
            valid, gflops = entries[:, 0].astype(bool), entries[:, 1]
        table = cls(header["workload_id"], header["space_hash"], valid, gflops)
        if table.size != header["size"]:
            raise ValueError(f"{path}: header size {header['size']} but {table.size} entries")
        if space is not None:
            table.check_space(space)
        return table


def record_ground_truth(w: WorkloadSpec, hw: HardwareBudget,
                        budget: int = EXHAUSTIVE_BUDGET) -> GroundTruthTable:
    space = generate_space(w, hw.block)
    if space.size > budget:
        raise ValueError(f"workload {w.id}: space of {space.size} exceeds exhaustive budget {budget}")
    values = space.value_table
    valid = validity_array(values, w, hw)
    gflops = np.where(valid, throughput_array(values, w, hw), 0.0)
    return GroundTruthTable(w.id, space.space_hash, valid, gflops)
