"""The nine acceptance criteria at their stated tolerances.

Criteria 4, 5 and 8 share one full-suite experiment (13 workloads x 2 modes
x 20 runs, about a quarter of an hour on one core).  Set
``HWTUNE_ACCEPTANCE_DIR`` to keep its run files between sessions; finished
runs are then skipped.
"""
import itertools
import math
import os
import time

import numpy as np
import pytest

from hwtune.fixtures import load_suite
from hwtune.harness import ExperimentPlan, run_plan
from hwtune.metrics import ndcg_at_n, pairwise_accuracy, precision_at_n, rank
from hwtune.sampler import presample
from hwtune.searchspace import Knob, KnobKind, build_space, validity_graph
from hwtune.surrogate import controlled_ratio_study
from hwtune.tuner import TunerConfig, run_tuning

SUITE = load_suite()


# -- brute-force references for criterion 1 ----------------------------------

def _sign(x):
    return (x > 0) - (x < 0)


def ref_accuracy(p, m, v):
    ok = total = 0
    for i, j in itertools.combinations(range(len(p)), 2):
        if v[i] or v[j]:
            total += 1
            ok += _sign(float(m[i]) - float(m[j])) == _sign(float(p[i]) - float(p[j]))
    return ok / total if total else None


def ref_order(p):
    return sorted(range(len(p)), key=lambda i: (-float(p[i]), i))


def ref_precision(p, v, n):
    return sum(bool(v[i]) for i in ref_order(p)[:n]) / n


def ref_dcg(rel):
    return sum(r / math.log2(k + 2) for k, r in enumerate(rel))


def ref_ndcg(p, m, n):
    dcg = ref_dcg([float(m[i]) for i in ref_order(p)[:n]])
    ideal = max(ref_dcg([float(m[i]) for i in perm])
                for perm in itertools.permutations(range(len(m)), n))
    return dcg / ideal if ideal > 0 else None


def test_criterion_1_metric_oracles(criterion):
    rng = np.random.default_rng(2024)
    lib_time = 0.0
    worst = 0.0
    for _ in range(1000):
        size = int(rng.integers(2, 9))
        v = rng.random(size) < 0.6
        m = np.where(v, rng.integers(1, 6, size) / 2, 0.0)
        p = rng.integers(-4, 5, size) / 3
        n = int(rng.integers(1, size + 1))
        acc, prec, nd = ref_accuracy(p, m, v), ref_precision(p, v, n), ref_ndcg(p, m, n)
        t0 = time.perf_counter()
        got_acc = pairwise_accuracy(p, m, v) if acc is not None else None
        rl = rank(p, m, v)
        got_prec = precision_at_n(rl, n)
        got_nd = ndcg_at_n(rl, n) if nd is not None else None
        lib_time += time.perf_counter() - t0
        if acc is not None:
            worst = max(worst, abs(got_acc - acc))
        worst = max(worst, abs(got_prec - prec))
        if nd is not None:
            worst = max(worst, abs(got_nd - nd))
    # the clock covers the library calls; the permutation references are excluded
    elapsed = lib_time
    ok = worst <= 1e-12 and elapsed < 5
    assert criterion(1, ok, f"max deviation {worst:.1e} over 1000 instances, {elapsed:.1f}s")


def test_criterion_2_presample_contract(criterion):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    failures = []
    for case in range(50):
        while True:
            cards = rng.integers(2, 12, size=int(rng.integers(2, 5)))
            if 100 <= np.prod(cards) <= 10_000:
                break
        sp = build_space([Knob(f"k{i}", KnobKind.OTHER, tuple(range(1, int(c) + 1)))
                          for i, c in enumerate(cards)])
        center = rng.integers(0, cards)
        valid = np.abs(sp.all_coords - center).sum(axis=1) <= int(rng.integers(1, 6))
        n = int(rng.integers(1, sp.size + 1))
        par = int(rng.integers(1, 17))
        calls = []

        def check(i):
            calls.append(i)
            return bool(valid[i])

        a = presample(n, par, sp, check, seed=case)
        b = presample(n, par, sp, lambda i: bool(valid[i]), seed=case)
        if len(set(calls)) != len(calls):
            failures.append((case, "double evaluation"))
        if not n <= len(a) < n + par:
            failures.append((case, f"|N|={len(a)} for n={n}, p={par}"))
        if not np.array_equal(a.indices, b.indices):
            failures.append((case, "not deterministic"))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 10
    assert criterion(2, ok, f"50 spaces, {len(failures)} violations, {elapsed:.1f}s")


def test_criterion_3_presample_yield(criterion):
    t0 = time.perf_counter()
    lines, bad, exempt = [], [], []
    for e in SUITE:
        sp, truth = e.space(), e.record()
        budget = min(1000, sp.size)
        if budget == sp.size:
            # the presample is the whole space, so its valid fraction is the ratio itself
            exempt.append(e.workload.id)
            continue
        frac = np.mean([presample(budget, 8, sp, lambda i: bool(truth.valid[i]),
                                  seed=s).valid_fraction for s in range(20)])
        gain = frac / truth.valid_ratio
        lines.append(f"{e.workload.id}:{gain:.2f}x")
        if gain < 1.5:
            bad.append(e.workload.id)
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 60
    assert criterion(3, ok, f"yield {' '.join(lines)}; exhaustive (exempt): {exempt}; "
                            f"{elapsed:.0f}s")


@pytest.fixture(scope="module")
def suite_experiment(tmp_path_factory):
    out = os.environ.get("HWTUNE_ACCEPTANCE_DIR") or tmp_path_factory.mktemp("suite")
    plan = ExperimentPlan.from_suite(repeats=20, base_seed=0, output_dir=out)
    t0 = time.perf_counter()
    report = run_plan(plan)
    return report, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_4_convergence(criterion, suite_experiment):
    report, elapsed = suite_experiment
    ratios = report.ratios()
    for wid, (med, iqr) in ratios.items():
        b, e = report.cell(wid, "baseline").aggregate, report.cell(wid, "enhanced").aggregate
        print(f"  workload {wid:>3}: baseline median {b.median:6.1f} IQR {b.iqr:6.1f} | "
              f"enhanced median {e.median:6.1f} IQR {e.iqr:6.1f} | ratio {med:.3f}")
    mean_ratio = float(np.mean([r[0] for r in ratios.values()]))
    wins = sum(report.cell(w, "enhanced").aggregate.median
               <= report.cell(w, "baseline").aggregate.median for w in ratios)
    ok = mean_ratio <= 0.7 and wins >= 11
    assert criterion(4, ok, f"mean median ratio {mean_ratio:.3f} (<= 0.7), enhanced <= baseline "
                            f"on {wins}/13 (>= 11), experiment {elapsed / 60:.1f} min")


@pytest.mark.slow
def test_criterion_5_robustness(criterion, suite_experiment):
    report, _ = suite_experiment
    iqr = [r[1] for r in report.ratios().values()]
    mean_iqr = float(np.mean(iqr))
    detail = " ".join(f"{w}:{r[1]:.2f}" for w, r in report.ratios().items())
    assert criterion(5, mean_iqr <= 0.8, f"mean IQR ratio {mean_iqr:.3f} (<= 0.8); {detail}")


@pytest.mark.slow
def test_criterion_6_bell_curve(criterion):
    ratios = (0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95)
    t0 = time.perf_counter()
    cells, used, skipped = [], [], []
    for e in SUITE:
        try:
            rep = controlled_ratio_study(e.record(), e.space(), ratios, [200], n_at=50,
                                         repeats=10, seed=int(e.workload.id))
        except ValueError:
            # too few valid (or invalid) configurations for ratio 0.95 at size 200
            skipped.append(e.workload.id)
            continue
        used.append(e.workload.id)
        cells.append({r: rep.cell(r, 200) for r in ratios})

    def mean(metric, r):
        return float(np.mean([getattr(c[r], metric) for c in cells]))

    nd = {r: mean("ndcg", r) for r in (0.05, 0.5, 0.95)}
    prec = {r: mean("precision", r) for r in (0.1, 0.9)}
    vi = {r: mean("accuracy_valid_invalid", r) for r in (0.1, 0.9)}
    elapsed = time.perf_counter() - t0
    ok = (nd[0.5] >= nd[0.05] and nd[0.5] >= nd[0.95] and prec[0.9] < prec[0.1]
          and vi[0.9] < vi[0.1] and elapsed < 300)
    for wid, c in zip(used, cells):
        print(f"  workload {wid:>3}: nDCG " + " ".join(f"{c[r].ndcg:.2f}" for r in ratios)
              + f" | prec@50 {c[0.1].precision:.2f}->{c[0.9].precision:.2f}")
    assert criterion(6, ok, f"over {len(used)} workloads (skipped {skipped}): nDCG@0.05/0.5/0.95 "
                            f"{nd[0.05]:.3f}/{nd[0.5]:.3f}/{nd[0.95]:.3f}, precision 0.1->0.9 "
                            f"{prec[0.1]:.3f}->{prec[0.9]:.3f}, valid-invalid accuracy "
                            f"{vi[0.1]:.3f}->{vi[0.9]:.3f}, {elapsed:.0f}s")


def test_criterion_7_clustering(criterion):
    bad, lines = [], []
    for e in SUITE:
        g = validity_graph(e.space(), e.record().valid, n_shuffles=100, seed=1)
        p90 = float(np.percentile(g.shuffle_largest, 90))
        lines.append(f"{e.workload.id}:{g.largest_component}/{p90:.0f}")
        if not g.largest_component > p90:
            bad.append(e.workload.id)
    assert criterion(7, not bad, "largest/shuffle-p90 " + " ".join(lines))


@pytest.mark.slow
def test_criterion_8_no_known_invalids(criterion, suite_experiment):
    report, _ = suite_experiment
    counts = [n for wid in report.workload_ids
              for n in report.cell(wid, "enhanced").known_invalid_measured]
    ok = len(counts) == 13 * 20 and sum(counts) == 0
    assert criterion(8, ok, f"{sum(counts)} known-invalid measurements after the first epoch "
                            f"over {len(counts)} enhanced runs")


def test_criterion_9_determinism(criterion):
    e = SUITE["107"]
    sp, truth = e.space(), e.record()
    same = []
    for mode in ("baseline", "enhanced"):
        cfg = TunerConfig(mode=mode, seed=123)
        same.append(run_tuning(sp, truth, cfg).log_lines().encode()
                    == run_tuning(sp, truth, cfg).log_lines().encode())
    assert criterion(9, all(same), "repeated runs give byte-identical logs in both modes")
