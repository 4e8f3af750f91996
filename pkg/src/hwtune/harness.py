"""Experiment orchestration: repeated tuning runs, model studies, reports.

Layout of an experiment directory::

    plan.json                       the plan, written once
    truth/truth_<id>.npz            recorded ground truth per workload
    runs/<id>/<mode>-s<seed>-<key>.jsonl           one line per trial
    runs/<id>/<mode>-s<seed>-<key>.summary.json    trials-to-best etc.
    runs/<id>/<mode>-s<seed>-<key>.presample.json  Enhanced runs only
    runs/<id>/<mode>-s<seed>-<key>.timing.json     wall-clock phases

Everything except the timing sidecars is a deterministic function of the
plan, so a rerun skips finished runs and leaves those files untouched.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fixtures import MANIFEST_VERSION, SuiteEntry, SuiteManifest, load_suite, parse_manifest
from .metrics import AggregateStatistics, RunStatistics, aggregate_runs
from .oracle import GroundTruthTable
from .surrogate import StudyReport, controlled_ratio_study, feature_table
from .tuner import Mode, TunerConfig, run_tuning

WORKERS_ENV = "HWTUNE_WORKERS"
PLAN_FILE = "plan.json"
STUDY_RATIOS = (0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be >= 1")
        return n
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


# -- plan -----------------------------------------------------------------------

@dataclass(frozen=True)
class RunSpec:
    entry: SuiteEntry
    config: TunerConfig
    space_hash: str

    @property
    def workload_id(self) -> str:
        return self.entry.workload.id

    @property
    def key(self) -> str:
        doc = {"workload": self.entry.workload.to_dict(), "budget": self.entry.budget.to_dict(),
               "space": self.space_hash, "config": self.config.to_dict()}
        return hashlib.sha256(_dumps(doc).encode()).hexdigest()[:12]

    @property
    def stem(self) -> str:
        return f"{self.config.mode.value}-s{self.config.seed}-{self.key}"


@dataclass(frozen=True)
class ExperimentPlan:
    """Workloads x tuner configurations x repeats.

    Run ``g`` (counting workloads, then modes, then repeats) gets seed
    ``base_seed + g``, so no two runs of a plan share a seed.
    """
    workloads: tuple[SuiteEntry, ...]
    modes: tuple[TunerConfig, ...] = (TunerConfig(mode=Mode.BASELINE),
                                      TunerConfig(mode=Mode.ENHANCED))
    repeats: int = 20
    base_seed: int = 0
    output_dir: Path = Path("experiment")

    def __post_init__(self):
        object.__setattr__(self, "workloads", tuple(self.workloads))
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not self.workloads or not self.modes:
            raise ValueError("a plan needs at least one workload and one mode")
        ids = [e.workload.id for e in self.workloads]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate workload in plan")
        names = [m.mode.value for m in self.modes]
        if len(set(names)) != len(names):
            raise ValueError("each mode may appear once per plan")

    @classmethod
    def from_suite(cls, ids: Sequence[str] | None = None, manifest: SuiteManifest | None = None,
                   **kwargs) -> "ExperimentPlan":
        manifest = manifest or load_suite()
        ids = list(ids) if ids else manifest.ids
        return cls(tuple(manifest[i] for i in ids), **kwargs)

    def runs(self) -> list[RunSpec]:
        out = []
        g = 0
        for entry in self.workloads:
            space_hash = entry.space().space_hash
            for mode_cfg in self.modes:
                for _ in range(self.repeats):
                    out.append(RunSpec(entry, mode_cfg.with_seed(self.base_seed + g), space_hash))
                    g += 1
        return out

    def to_dict(self) -> dict:
        return {"manifest": {"version": MANIFEST_VERSION, "workloads": [
                    {"workload": e.workload.to_dict(), "budget": e.budget.to_dict(),
                     "ratio_band": list(e.ratio_band), "reference_ratio": e.reference_ratio,
                     "reference_size": e.reference_size} for e in self.workloads]},
                "modes": [m.to_dict() for m in self.modes],
                "repeats": self.repeats, "base_seed": self.base_seed}

    @classmethod
    def from_dict(cls, d: dict, output_dir: str | Path) -> "ExperimentPlan":
        manifest = parse_manifest(d["manifest"], require_full_suite=False)
        return cls(manifest.entries, tuple(TunerConfig.from_dict(m) for m in d["modes"]),
                   int(d["repeats"]), int(d["base_seed"]), Path(output_dir))

    @classmethod
    def load(cls, output_dir: str | Path) -> "ExperimentPlan":
        output_dir = Path(output_dir)
        path = output_dir / PLAN_FILE
        if not path.exists():
            raise FileNotFoundError(f"no {PLAN_FILE} in {output_dir}")
        return cls.from_dict(json.loads(path.read_text()), output_dir)


# -- report ---------------------------------------------------------------------

@dataclass
class CellResult:
    workload_id: str
    mode: str
    runs: list[RunStatistics]
    seeds: list[int]
    known_invalid_measured: list[int]
    best_gflops: float

    @property
    def aggregate(self) -> AggregateStatistics:
        return aggregate_runs(self.runs)


@dataclass
class ExperimentReport:
    cells: list[CellResult] = field(default_factory=list)
    studies: list[StudyReport] = field(default_factory=list)

    def cell(self, workload_id: str, mode: str | Mode) -> CellResult:
        mode = Mode(mode).value
        for c in self.cells:
            if c.workload_id == str(workload_id) and c.mode == mode:
                return c
        raise KeyError((workload_id, mode))

    @property
    def workload_ids(self) -> list[str]:
        return list(dict.fromkeys(c.workload_id for c in self.cells))

    @property
    def modes(self) -> list[str]:
        return list(dict.fromkeys(c.mode for c in self.cells))

    def is_empty(self) -> bool:
        return not any(c.runs for c in self.cells) and not self.studies

    def ratios(self, num: str = "enhanced", den: str = "baseline") -> dict[str, tuple[float, float]]:
        """Per workload: (median ratio, IQR ratio) of ``num`` over ``den``."""
        out = {}
        for wid in self.workload_ids:
            a, b = self.cell(wid, num).aggregate, self.cell(wid, den).aggregate
            med = a.median / b.median
            iqr = a.iqr / b.iqr if b.iqr > 0 else (1.0 if a.iqr == 0 else float("inf"))
            out[wid] = (med, iqr)
        return out

    def to_dict(self) -> dict:
        return {
            "cells": [{"workload_id": c.workload_id, "mode": c.mode, "seeds": c.seeds,
                       "trials_to_best": [r.trials_to_best for r in c.runs],
                       "found_best": [r.found_best for r in c.runs],
                       "known_invalid_measured": c.known_invalid_measured,
                       "best_gflops": c.best_gflops,
                       "aggregate": c.aggregate.to_dict()} for c in self.cells],
            "studies": [s.to_dict() for s in self.studies],
        }


# -- running --------------------------------------------------------------------

@lru_cache(maxsize=32)
def _truth_for(entry: SuiteEntry, truth_dir: str | None) -> GroundTruthTable:
    space = entry.space()
    if truth_dir is not None:
        path = Path(truth_dir) / f"truth_{entry.workload.id}.npz"
        if path.exists():
            return GroundTruthTable.load(path, space)
        truth = entry.record()
        truth.save(path)
        return truth
    return entry.record()


@lru_cache(maxsize=32)
def _features_for(entry: SuiteEntry) -> np.ndarray:
    return feature_table(entry.space())


def _paths(output_dir: Path, spec: RunSpec) -> dict[str, Path]:
    base = output_dir / "runs" / spec.workload_id / spec.stem
    return {kind: base.with_name(base.name + suffix) for kind, suffix in
            (("log", ".jsonl"), ("summary", ".summary.json"),
             ("presample", ".presample.json"), ("timing", ".timing.json"))}


def _execute(spec: RunSpec, output_dir: str) -> str:
    """Run one cell unless its files exist; returns the run stem."""
    out = Path(output_dir)
    paths = _paths(out, spec)
    if paths["summary"].exists() and paths["log"].exists():
        return spec.stem
    truth = _truth_for(spec.entry, str(out / "truth"))
    run = run_tuning(spec.entry.space(), truth, spec.config, features=_features_for(spec.entry))
    paths["log"].parent.mkdir(parents=True, exist_ok=True)
    if run.presample is not None:
        run.presample.save(paths["presample"])
    paths["timing"].write_text(_dumps(run.stats.timings) + "\n")
    run.write_log(paths["log"])
    # the summary goes last: its presence marks the run complete
    summary = {"workload_id": spec.workload_id, "mode": spec.config.mode.value,
               "seed": spec.config.seed, "trials_to_best": run.stats.trials_to_best,
               "found_best": run.stats.found_best,
               "known_invalid_measured": run.known_invalid_measured,
               "best_gflops": truth.best_gflops, "config": spec.config.to_dict()}
    paths["summary"].write_text(_dumps(summary) + "\n")
    return spec.stem


def _read_run(output_dir: Path, spec: RunSpec) -> tuple[RunStatistics, dict]:
    paths = _paths(output_dir, spec)
    summary = json.loads(paths["summary"].read_text())
    curve = []
    with open(paths["log"]) as fh:
        for line in fh:
            rec = json.loads(line)
            curve.append((rec["trial"], rec["best_so_far"]))
    timings = json.loads(paths["timing"].read_text()) if paths["timing"].exists() else {}
    stats = RunStatistics(summary["trials_to_best"], curve, summary["found_best"], timings)
    return stats, summary


def collect_report(plan: ExperimentPlan) -> ExperimentReport:
    """Assemble the report from the run files of a (possibly partial) plan."""
    cells: dict[tuple[str, str], CellResult] = {}
    for spec in plan.runs():
        key = (spec.workload_id, spec.config.mode.value)
        cell = cells.setdefault(key, CellResult(key[0], key[1], [], [], [], 0.0))
        if not _paths(plan.output_dir, spec)["summary"].exists():
            continue
        stats, summary = _read_run(plan.output_dir, spec)
        cell.runs.append(stats)
        cell.seeds.append(spec.config.seed)
        cell.known_invalid_measured.append(summary["known_invalid_measured"])
        cell.best_gflops = summary["best_gflops"]
    return ExperimentReport(list(cells.values()))


def run_plan(plan: ExperimentPlan, workers: int | None = None,
             progress=None) -> ExperimentReport:
    """Execute every missing run of ``plan`` and return the full report.

    Runs already present in ``plan.output_dir`` are skipped, so an
    interrupted plan resumes where it stopped.  ``workers`` defaults to the
    ``HWTUNE_WORKERS`` environment variable or the available CPU count.
    """
    out = plan.output_dir
    out.mkdir(parents=True, exist_ok=True)
    plan_text = json.dumps(plan.to_dict(), indent=1, sort_keys=True) + "\n"
    plan_path = out / PLAN_FILE
    if plan_path.exists():
        if plan_path.read_text() != plan_text:
            raise ValueError(f"{out} holds a different plan; use a fresh output directory")
    else:
        plan_path.write_text(plan_text)
    for entry in plan.workloads:
        _truth_for(entry, str(out / "truth"))  # record once, before fan-out

    specs = plan.runs()
    todo = [s for s in specs if not _paths(out, s)["summary"].exists()]
    workers = workers or default_workers()
    if workers <= 1 or len(todo) <= 1:
        for i, spec in enumerate(todo):
            _execute(spec, str(out))
            if progress:
                progress(i + 1, len(todo), spec)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_execute, s, str(out)) for s in todo]
            for i, (spec, fut) in enumerate(zip(todo, futures)):
                fut.result()
                if progress:
                    progress(i + 1, len(todo), spec)
    return collect_report(plan)


def run_study(entries: Iterable[SuiteEntry], ratios: Sequence[float] = STUDY_RATIOS,
              sample_sizes: Sequence[int] = (200,), n_at: int = 50, repeats: int = 10,
              seed: int = 0) -> list[StudyReport]:
    """Controlled-ratio model study for each workload, seeded per workload."""
    reports = []
    for i, entry in enumerate(entries):
        truth = _truth_for(entry, None)
        reports.append(controlled_ratio_study(truth, entry.space(), ratios, sample_sizes,
                                              n_at, repeats, seed=seed + i))
    return reports


# -- emission -------------------------------------------------------------------

AGGREGATE_FIELDS = ("workload_id", "mode", "n", "median", "q1", "q3", "iqr",
                    "whisker_low", "whisker_high", "outliers")
STUDY_FIELDS = ("workload_id", "ratio", "sample_size", "n_valid", "ndcg", "precision",
                "accuracy_valid_invalid", "accuracy_valid_valid", "repeats")


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def aggregate_rows(report: ExperimentReport) -> list[list]:
    rows = []
    for c in report.cells:
        if not c.runs:
            continue
        a = c.aggregate
        rows.append([c.workload_id, c.mode, a.n, repr(a.median), repr(a.q1), repr(a.q3),
                     repr(a.iqr), repr(a.whisker_low), repr(a.whisker_high),
                     ";".join(repr(v) for v in a.outliers)])
    return rows


def study_rows(report: ExperimentReport) -> list[list]:
    return [[s.workload_id, c.ratio, c.sample_size, c.n_valid, repr(c.ndcg), repr(c.precision),
             repr(c.accuracy_valid_invalid), repr(c.accuracy_valid_valid), c.repeats]
            for s in report.studies for c in s.cells]


def box_gid(c: CellResult) -> str:
    """Element id carrying the exact box statistics of one cell."""
    a = c.aggregate
    return (f"box|{c.workload_id}|{c.mode}|median={a.median!r}|q1={a.q1!r}|q3={a.q3!r}"
            f"|whisker_low={a.whisker_low!r}|whisker_high={a.whisker_high!r}")


def emit_report(report: ExperimentReport, fmt: str, out_dir: str | Path) -> list[Path]:
    """Write the report as ``csv``, ``json`` or ``svg`` files; returns the paths."""
    if fmt not in ("csv", "json", "svg"):
        raise ValueError(f"unknown report format {fmt!r}")
    if report.is_empty():
        raise ValueError("report holds no runs and no study results")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "csv":
        if any(c.runs for c in report.cells):
            p = out / "aggregates.csv"
            p.write_text(_csv_text(AGGREGATE_FIELDS, aggregate_rows(report)))
            written.append(p)
        if report.studies:
            p = out / "study.csv"
            p.write_text(_csv_text(STUDY_FIELDS, study_rows(report)))
            written.append(p)
    elif fmt == "json":
        p = out / "report.json"
        p.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
        written.append(p)
    else:
        from . import plots
        if any(c.runs for c in report.cells):
            written.append(plots.boxplot_svg(report, out / "trials_to_best.svg"))
            for wid in report.workload_ids:
                written.append(plots.convergence_svg(report, wid, out / f"convergence_{wid}.svg"))
        if report.studies:
            written.append(plots.study_svg(report, out / "study.svg"))
    return written
