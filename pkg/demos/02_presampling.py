"""
Presampling for validity
========================

Before any tuning starts, a cheap validity check can be run on a sample of
the space. Growing the sample around known valid points finds far more of
them than uniform sampling would.
"""

import numpy as np

from hwtune.fixtures import load_suite
from hwtune.sampler import presample, select_initial_batch

suite = load_suite()
entry = suite["17"]
space = entry.space()
truth = entry.record()
is_valid = lambda i: bool(truth.valid[i])  # noqa: E731

print(f"workload {entry.workload.id}: |S| = {space.size}, valid share {truth.valid_ratio:.4f}")

# %%
# Presample 1000 points in parallel groups of 50 and compare with the base rate.
yields = []
for seed in range(5):
    N = presample(1000, 50, space, is_valid, seed=seed)
    yields.append(N.valid_fraction)
    print(f"seed {seed}: {N.valid_subset.size:4d} valid of {len(N)}")
print(f"mean yield {np.mean(yields):.3f}, {np.mean(yields) / truth.valid_ratio:.1f}x the base rate")

# %%
# The first tuning epoch mixes well-spread valid and invalid points.
batch = select_initial_batch(N, space, epoch_size=50, max_valid=40, seed=0)
print(f"initial batch: {batch.valid_count} valid, {batch.invalid_count} invalid")
assert truth.valid[batch.configs[:batch.valid_count]].all()
