"""The calibrated 13-workload Conv2D suite and its manifest file.

Each manifest entry carries the workload shape, the hardware budget that was
calibrated for it and the band its recorded valid ratio must land in.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .oracle import (GroundTruthTable, HardwareBudget, WorkloadSpec, generate_space,
                     record_ground_truth, validity_array)

MANIFEST_VERSION = "1"
SUITE_IDS = ("3", "5", "8", "17", "42", "48", "53", "59", "76", "78", "92", "106", "107")
BAND_LOW, BAND_HIGH = 0.6, 1.6

# id: (batch, channel_out, (h, w), (kh, kw), channel_in, stride, pad, space size, valid ratio)
REFERENCE_SHAPES = {
    "3": (1, 32, (79, 341), (10, 5), 32, (2, 2), (0, 0), 768, 0.060),
    "5": (4, 32, (79, 341), (10, 5), 32, (2, 2), (0, 0), 3072, 0.068),
    "8": (1, 64, (12, 120), (3, 3), 32, (1, 1), (1, 1), 9216, 0.067),
    "17": (1, 256, (56, 56), (3, 3), 128, (1, 1), (1, 1), 20480, 0.027),
    "42": (1, 64, (56, 56), (3, 3), 64, (1, 1), (1, 1), 9216, 0.047),
    "48": (1, 1024, (14, 14), (1, 1), 256, (2, 2), (0, 0), 2240, 0.151),
    "53": (2, 128, (28, 28), (3, 3), 128, (1, 1), (1, 1), 18433, 0.035),
    "59": (2, 512, (7, 7), (1, 1), 2048, (2, 2), (3, 3), 6145, 0.008),
    "76": (1, 64, (112, 112), (1, 1), 64, (1, 1), (0, 0), 14400, 0.088),
    "78": (1, 64, (56, 56), (1, 1), 256, (1, 1), (0, 0), 15361, 0.099),
    "92": (2, 64, (112, 112), (1, 1), 64, (1, 1), (0, 0), 28800, 0.082),
    "106": (2, 2048, (14, 14), (1, 1), 1024, (2, 2), (0, 0), 7169, 0.122),
    "107": (2, 512, (7, 7), (1, 1), 2048, (1, 1), (0, 0), 6144, 0.231),
}


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SuiteEntry:
    workload: WorkloadSpec
    budget: HardwareBudget
    ratio_band: tuple[float, float]
    reference_ratio: float
    reference_size: int

    def record(self) -> GroundTruthTable:
        return record_ground_truth(self.workload, self.budget)

    def space(self):
        return generate_space(self.workload, self.budget.block)


@dataclass(frozen=True)
class SuiteManifest:
    version: str
    entries: tuple[SuiteEntry, ...]

    def __getitem__(self, workload_id) -> SuiteEntry:
        for e in self.entries:
            if e.workload.id == str(workload_id):
                return e
        raise KeyError(f"workload {workload_id} not in suite")

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    @property
    def ids(self) -> list[str]:
        return [e.workload.id for e in self.entries]

    def to_dict(self) -> dict:
        return {"version": self.version, "workloads": [
            {"workload": e.workload.to_dict(), "budget": e.budget.to_dict(),
             "ratio_band": list(e.ratio_band), "reference_ratio": e.reference_ratio,
             "reference_size": e.reference_size}
            for e in self.entries]}


def reference_workloads() -> list[WorkloadSpec]:
    out = []
    for wid, (b, co, (h, w), (kh, kw), ci, stride, pad, _, _) in REFERENCE_SHAPES.items():
        out.append(WorkloadSpec(wid, b, co, ci, h, w, kh, kw, stride, pad))
    return out


def valid_ratio(w: WorkloadSpec, hw: HardwareBudget) -> float:
    space = generate_space(w, hw.block)
    return float(validity_array(space.value_table, w, hw).mean())


def calibrate_budget(w: WorkloadSpec, target: float, base: HardwareBudget | None = None,
                     factors: np.ndarray | None = None) -> HardwareBudget:
    """Scale the buffer capacities of ``base`` until the valid ratio is closest to ``target``.

    The ratio is a step function of the scale, so a log-spaced grid is
    scanned and the scale with the smallest log-ratio error wins (ties go to
    the smaller scale).
    """
    base = base or HardwareBudget()
    if factors is None:
        factors = np.geomspace(1 / 1024, 64, 641)
    best, best_err = None, np.inf
    for f in factors:
        hw = base.scaled(float(f))
        r = valid_ratio(w, hw)
        if r <= 0:
            continue
        err = abs(np.log(r / target))
        if err < best_err - 1e-12:
            best, best_err = hw, err
    if best is None:
        raise ValueError(f"workload {w.id}: no scale produces a valid configuration")
    return best


def build_manifest(base: HardwareBudget | None = None) -> SuiteManifest:
    entries = []
    for w in reference_workloads():
        ref_size, ref_ratio = REFERENCE_SHAPES[w.id][7], REFERENCE_SHAPES[w.id][8]
        hw = calibrate_budget(w, ref_ratio, base)
        entries.append(SuiteEntry(w, hw, (round(BAND_LOW * ref_ratio, 6), round(BAND_HIGH * ref_ratio, 6)),
                                  ref_ratio, ref_size))
    return SuiteManifest(MANIFEST_VERSION, tuple(entries))


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ManifestError(f"{where}: missing field {key!r}")
    return d[key]


def parse_manifest(doc: dict, require_full_suite: bool = True) -> SuiteManifest:
    if not isinstance(doc, dict):
        raise ManifestError("manifest: top level must be an object")
    version = str(_require(doc, "version", "manifest"))
    items = _require(doc, "workloads", "manifest")
    if not isinstance(items, list):
        raise ManifestError("manifest: field 'workloads' must be a list")
    entries = []
    for i, item in enumerate(items):
        where = f"workloads[{i}]"
        wd = _require(item, "workload", where)
        bd = _require(item, "budget", where)
        band = _require(item, "ratio_band", where)
        try:
            w = WorkloadSpec.from_dict(wd)
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"{where}.workload: {exc}") from None
        try:
            hw = HardwareBudget.from_dict(bd)
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"{where}.budget: {exc}") from None
        if not (isinstance(band, list) and len(band) == 2 and band[0] <= band[1]):
            raise ManifestError(f"{where}.ratio_band: expected [low, high]")
        entries.append(SuiteEntry(w, hw, (float(band[0]), float(band[1])),
                                  float(item.get("reference_ratio", np.mean(band))),
                                  int(item.get("reference_size", 0))))
    manifest = SuiteManifest(version, tuple(entries))
    if require_full_suite:
        missing = sorted(set(SUITE_IDS) - set(manifest.ids), key=int)
        if missing:
            raise ManifestError(f"manifest: missing workloads {missing}")
    return manifest


def load_suite(path: str | Path | None = None) -> SuiteManifest:
    """Load a suite manifest; without ``path`` the bundled calibrated suite is used."""
    if path is None:
        text = resources.files("hwtune.data").joinpath("suite.json").read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from None
    return parse_manifest(doc)


def golden_truth(workload_id: str) -> GroundTruthTable:
    ref = resources.files("hwtune.data").joinpath("golden", f"truth_{workload_id}.json")
    with resources.as_file(ref) as p:
        return GroundTruthTable.load(p)


GOLDEN_IDS = ("3", "48")


def write_bundled_data(data_dir: str | Path, manifest: SuiteManifest | None = None) -> SuiteManifest:
    """Regenerate ``suite.json`` and the golden truth tables under ``data_dir``."""
    data_dir = Path(data_dir)
    manifest = manifest or build_manifest()
    (data_dir / "golden").mkdir(parents=True, exist_ok=True)
    (data_dir / "suite.json").write_text(json.dumps(manifest.to_dict(), indent=1) + "\n")
    for wid in GOLDEN_IDS:
        manifest[wid].record().save(data_dir / "golden" / f"truth_{wid}.json")
    return manifest
