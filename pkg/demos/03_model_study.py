"""
How the valid share of training data shapes the cost model
==========================================================

A gradient-boosted tree model is trained on samples with a fixed share of
valid schedules, then scored on held-out configurations. Too few valid rows
starve the model of throughput signal. Too many leave it blind to the
invalid region.
"""

from hwtune.fixtures import load_suite
from hwtune.harness import ExperimentReport, emit_report, run_study

suite = load_suite()
entries = [suite[w] for w in ("8", "17", "42")]
studies = run_study(entries, ratios=(0.05, 0.3, 0.5, 0.7, 0.95), sample_sizes=(200,),
                    n_at=50, repeats=3, seed=0)

print(f"{'wid':>4} {'ratio':>5} {'ndcg':>6} {'prec':>6} {'acc v/i':>8}")
for study in studies:
    for cell in study.cells:
        print(f"{study.workload_id:>4} {cell.ratio:5.2f} {cell.ndcg:6.3f} "
              f"{cell.precision:6.3f} {cell.accuracy_valid_invalid:8.3f}")

# Write the figure and the table next to this script.
for path in emit_report(ExperimentReport(studies=studies), "svg", "demo_out"):
    print("wrote", path)
