"""Command line entry point: ``hwtune <command> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .fixtures import load_suite
from .harness import STUDY_RATIOS, ExperimentPlan, ExperimentReport, collect_report, emit_report, \
    run_plan, run_study
from .oracle import GroundTruthTable
from .sampler import DEFAULT_N_PARALLEL, PresampleSet, presample
from .tuner import Mode, TunerConfig, run_tuning


def _suite(args):
    return load_suite(args.manifest)


def _entry(args):
    suite = _suite(args)
    try:
        return suite[args.workload]
    except KeyError:
        raise SystemExit(f"unknown workload {args.workload!r}; choose from {', '.join(suite.ids)}")


def _emit_text(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _truth(entry, path: str | None) -> GroundTruthTable:
    if path:
        return GroundTruthTable.load(path, entry.space())
    return entry.record()


def cmd_gen_space(args) -> int:
    space = _entry(args).space()
    _emit_text(json.dumps(space.to_dict(), indent=1) + "\n", args.out)
    return 0


def cmd_record_truth(args) -> int:
    entry = _entry(args)
    truth = entry.record()
    out = args.out or f"truth_{entry.workload.id}.npz"
    truth.save(out)
    print(json.dumps({**truth.header(), "best_gflops": truth.best_gflops, "path": str(out)}))
    return 0


def cmd_presample(args) -> int:
    entry = _entry(args)
    space = entry.space()
    truth = _truth(entry, args.truth)
    n = args.samples or min(1000, space.size)
    result = presample(n, args.parallel, space, lambda i: bool(truth.valid[i]), seed=args.seed)
    _emit_text(result.to_json() + "\n", args.out)
    print(f"presampled {len(result)} configurations, valid fraction {result.valid_fraction:.4f} "
          f"(space ratio {truth.valid_ratio:.4f})", file=sys.stderr)
    return 0


def _tuner_config(args, mode) -> TunerConfig:
    return TunerConfig(mode=mode, total_trials=args.trials, epoch_size=args.epoch_size,
                       seed=args.seed)


def cmd_tune(args) -> int:
    entry = _entry(args)
    space = entry.space()
    truth = _truth(entry, args.truth)
    pre = PresampleSet.load(args.presample) if args.presample else None
    run = run_tuning(space, truth, _tuner_config(args, args.mode), presample_set=pre)
    if args.out:
        run.write_log(args.out)
    summary = {"workload_id": entry.workload.id, "mode": args.mode,
               "seed": args.seed, "trials_to_best": run.stats.trials_to_best,
               "found_best": run.stats.found_best, "best_gflops": run.records[-1].best_so_far,
               "optimum_gflops": truth.best_gflops}
    print(json.dumps(summary))
    return 0


def _workload_ids(args, suite) -> list[str]:
    ids = args.workload or suite.ids
    unknown = [i for i in ids if i not in suite.ids]
    if unknown:
        raise SystemExit(f"unknown workload(s) {unknown}")
    return ids


def cmd_study(args) -> int:
    suite = _suite(args)
    ids = _workload_ids(args, suite)
    ratios = [float(r) for r in args.ratios.split(",")]
    sizes = [int(s) for s in args.sizes.split(",")]
    studies = run_study([suite[i] for i in ids], ratios, sizes, args.n_at, args.repeats, args.seed)
    report = ExperimentReport(studies=studies)
    for fmt in args.format:
        for p in emit_report(report, fmt, args.out):
            print(p)
    return 0


def _progress(done, total, spec):
    print(f"[{done}/{total}] workload {spec.workload_id} {spec.config.mode.value} "
          f"seed {spec.config.seed}", file=sys.stderr)


def cmd_plan(args) -> int:
    suite = _suite(args)
    ids = _workload_ids(args, suite)
    modes = args.mode or [m.value for m in Mode]
    plan = ExperimentPlan(tuple(suite[i] for i in ids),
                          tuple(_tuner_config(args, m) for m in modes),
                          repeats=args.repeats, base_seed=args.seed, output_dir=Path(args.out))
    report = run_plan(plan, progress=None if args.quiet else _progress)
    for fmt in args.format:
        for p in emit_report(report, fmt, Path(args.out) / "report"):
            print(p)
    return 0


def cmd_report(args) -> int:
    plan = ExperimentPlan.load(args.out)
    report = collect_report(plan)
    dest = Path(args.dest) if args.dest else Path(args.out) / "report"
    for fmt in args.format:
        for p in emit_report(report, fmt, dest):
            print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hwtune",
                                description="Validity-aware auto-tuning experiments on a "
                                            "synthetic accelerator.")
    p.add_argument("--manifest", help="suite manifest JSON (default: bundled suite)")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, workload=True):
        sp = sub.add_parser(name, help=help_text)
        if workload:
            sp.add_argument("--workload", required=True, help="suite workload id, e.g. 48")
        sp.set_defaults(func=fn)
        return sp

    def tuning_flags(sp):
        sp.add_argument("--trials", type=int, default=750)
        sp.add_argument("--epoch-size", type=int, default=50)
        sp.add_argument("--seed", type=int, default=0)

    sp = add("gen-space", cmd_gen_space, "print a workload's search space as JSON")
    sp.add_argument("--out")

    sp = add("record-truth", cmd_record_truth, "exhaustively record ground truth")
    sp.add_argument("--out", help="output file (.npz or .json)")

    sp = add("presample", cmd_presample, "run validity presampling")
    sp.add_argument("--samples", type=int, help="budget (default min(1000, |S|))")
    sp.add_argument("--parallel", type=int, default=DEFAULT_N_PARALLEL)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--truth", help="recorded truth file (default: record on the fly)")
    sp.add_argument("--out")

    sp = add("tune", cmd_tune, "one tuning run")
    sp.add_argument("--mode", choices=[m.value for m in Mode], default="enhanced")
    tuning_flags(sp)
    sp.add_argument("--truth")
    sp.add_argument("--presample", help="presample JSON to reuse (enhanced mode)")
    sp.add_argument("--out", help="write the JSON-lines run log here")

    sp = add("study", cmd_study, "controlled-ratio model study", workload=False)
    sp.add_argument("--workload", action="append")
    sp.add_argument("--ratios", default=",".join(str(r) for r in STUDY_RATIOS))
    sp.add_argument("--sizes", default="200")
    sp.add_argument("--n-at", type=int, default=50)
    sp.add_argument("--repeats", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", action="append", choices=["csv", "json", "svg"])

    sp = add("plan", cmd_plan, "run (or resume) a full experiment", workload=False)
    sp.add_argument("--workload", action="append", help="repeatable; default: whole suite")
    sp.add_argument("--mode", action="append", choices=[m.value for m in Mode])
    sp.add_argument("--repeats", type=int, default=20)
    tuning_flags(sp)
    sp.add_argument("--out", required=True, help="experiment directory")
    sp.add_argument("--format", action="append", choices=["csv", "json", "svg"])
    sp.add_argument("--quiet", action="store_true")

    sp = add("report", cmd_report, "rebuild reports from an experiment directory",
             workload=False)
    sp.add_argument("--out", required=True, help="experiment directory")
    sp.add_argument("--dest", help="report directory (default <out>/report)")
    sp.add_argument("--format", action="append", choices=["csv", "json", "svg"])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if hasattr(args, "format") and not args.format:
        args.format = ["csv"]
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"hwtune: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
