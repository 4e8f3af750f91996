"""
Where the valid schedules live
==============================

Every workload in the bundled suite owns a discrete grid of schedules. Most
of the grid violates a buffer budget and cannot run at all. This walk-through
records the full ground truth for one workload and asks how the valid points
are arranged.
"""

import numpy as np

from hwtune.fixtures import load_suite
from hwtune.searchspace import validity_graph

suite = load_suite()
print("workloads:", ", ".join(suite.ids))

# Pick a mid-sized layer and enumerate it exhaustively.
entry = suite["48"]
space = entry.space()
truth = entry.record()
print(f"workload {entry.workload.id}: {space.size} schedules over {space.ndim} knobs")
for knob in space.knobs:
    print(f"  {knob.name:>12}: {list(knob.values)}")

print(f"valid share {truth.valid_ratio:.3f}, best {truth.best_gflops:.1f} GFLOP/s")

# Grid neighbours differ by one step in one knob. Valid schedules tend to
# sit next to other valid ones.
summary = validity_graph(space, truth.valid, n_shuffles=100, seed=1)
print(f"{summary.n_components} connected valid regions, largest {summary.largest_component}")
print("largest region after label shuffling:", summary.shuffle_percentiles)

# Fraction of a valid point's neighbours that are valid, against the base rate.
valid_idx = np.flatnonzero(truth.valid)
share = np.mean([truth.valid[space.neighbors(int(i))].mean() for i in valid_idx])
print(f"valid neighbours of a valid point: {share:.2f} (base rate {truth.valid_ratio:.2f})")
