"""
Tuning with and without validity knowledge
==========================================

The same simulated-annealing tuner runs twice per seed: once unmodified and
once seeded with a presample, a balanced first epoch and a score penalty on
known invalid schedules. We count how many trials each needs to reach the
optimum.
"""

import numpy as np

from hwtune.fixtures import load_suite
from hwtune.metrics import aggregate
from hwtune.surrogate import feature_table
from hwtune.tuner import TunerConfig, run_tuning

suite = load_suite()
entry = suite["8"]
space, truth = entry.space(), entry.record()
features = feature_table(space)

results = {}
for mode in ("baseline", "enhanced"):
    runs = [run_tuning(space, truth, TunerConfig(mode=mode, seed=s), features=features)
            for s in range(5)]
    results[mode] = [r.stats.trials_to_best for r in runs]
    a = aggregate(results[mode])
    print(f"{mode:>9}: trials to best {results[mode]}  median {a.median:.0f}  IQR {a.iqr:.0f}")

ratio = np.median(results["enhanced"]) / np.median(results["baseline"])
print(f"median ratio enhanced / baseline: {ratio:.2f}")

# For the full suite at 20 seeds, use the command line:
#   hwtune plan --out runs/ --format csv --format svg
