import copy
import json

import numpy as np
import pytest

from hwtune.fixtures import (GOLDEN_IDS, SUITE_IDS, REFERENCE_SHAPES, ManifestError, calibrate_budget,
                             golden_truth, load_suite, parse_manifest, reference_workloads,
                             valid_ratio)
from hwtune.oracle import generate_space


@pytest.fixture(scope="module")
def suite():
    return load_suite()


@pytest.fixture(scope="module")
def ratios(suite):
    return {e.workload.id: valid_ratio(e.workload, e.budget) for e in suite}


def test_bundled_suite_has_all_workloads(suite):
    assert suite.ids == list(SUITE_IDS)


def test_space_sizes_near_reference(suite):
    for e in suite:
        size = generate_space(e.workload).size
        assert 0.5 * e.reference_size <= size <= 1.5 * e.reference_size, e.workload.id


def test_ratios_inside_bands(suite, ratios):
    for e in suite:
        lo, hi = e.ratio_band
        assert lo <= ratios[e.workload.id] <= hi, e.workload.id


def test_suite_ratio_summary(ratios):
    r = np.array(list(ratios.values()))
    assert np.all((r > 0) & (r < 0.5))
    assert 0.03 <= r.mean() <= 0.20


def test_calibration_reproduces_bundled_budget(suite):
    e = suite["48"]
    assert calibrate_budget(e.workload, e.reference_ratio) == e.budget


def test_golden_tables_match_oracle(suite):
    for wid in GOLDEN_IDS:
        fresh = suite[wid].record()
        golden = golden_truth(wid)
        golden.check_space(suite[wid].space())
        np.testing.assert_array_equal(golden.valid, fresh.valid)
        np.testing.assert_allclose(golden.gflops, fresh.gflops, rtol=1e-12)


def test_reference_rows_become_workloads():
    ws = reference_workloads()
    assert [w.id for w in ws] == list(REFERENCE_SHAPES)
    assert ws[0].stride == (2, 2)


@pytest.fixture
def doc(suite):
    return json.loads(json.dumps(suite.to_dict()))


def test_manifest_roundtrip(doc, suite):
    assert parse_manifest(doc) == suite


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d.pop("version"), "version"),
    (lambda d: d["workloads"][2].pop("budget"), "budget"),
    (lambda d: d["workloads"][0]["workload"].update(batch=0), "workload"),
    (lambda d: d["workloads"][1].update(ratio_band=[0.3]), "ratio_band"),
])
def test_manifest_errors_name_field(doc, mutate, field):
    mutate(doc)
    with pytest.raises(ManifestError, match=field):
        parse_manifest(doc)


def test_manifest_requires_full_suite(doc):
    short = copy.deepcopy(doc)
    short["workloads"] = short["workloads"][:3]
    with pytest.raises(ManifestError, match="missing"):
        parse_manifest(short)
    assert len(parse_manifest(short, require_full_suite=False)) == 3


def test_load_suite_rejects_bad_json(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{not json")
    with pytest.raises(ManifestError):
        load_suite(p)


def test_strided_padded_workload_dimensions(suite):
    w = suite["59"].workload
    assert (w.batch, w.channel_out, w.channel_in) == (2, 512, 2048)
    assert (w.image_h, w.image_w, w.kernel_h, w.kernel_w) == (7, 7, 1, 1)
    assert w.stride == (2, 2) and w.pad == (3, 3)
    assert (w.out_h, w.out_w) == (7, 7)


def test_sparsest_and_densest_workloads(ratios):
    assert min(ratios, key=ratios.get) == "59"
    assert max(ratios, key=ratios.get) == "107"
