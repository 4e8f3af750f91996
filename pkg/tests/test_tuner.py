import numpy as np
import pytest

from hwtune.fixtures import golden_truth, load_suite
from hwtune.oracle import GroundTruthTable
from hwtune.sampler import PresampleSet
from hwtune.searchspace import Knob, KnobKind, build_space
from hwtune.surrogate import GBTParams, SurrogateModel
from hwtune.tuner import (Mode, TunerConfig, TunerState, biased_score, biased_scores,
                          run_tuning, sa_select_batch)


def grid(*cards):
    return build_space([Knob(f"k{i}", KnobKind.OTHER, tuple(range(1, c + 1)))
                        for i, c in enumerate(cards)], workload_id="g")


def table(space, valid, gflops):
    return GroundTruthTable("g", space.space_hash, np.asarray(valid, bool),
                            np.where(valid, gflops, 0.0))


@pytest.fixture(scope="module")
def w48():
    return load_suite()["48"].space(), golden_truth("48")


def state_with(size, valid=(), invalid=()):
    st = TunerState.fresh(size, GBTParams())
    st.known_valid[list(valid)] = True
    st.known_invalid[list(invalid)] = True
    st.bias_valid, st.bias_invalid = 0.1, -1e6
    return st


def test_biased_score_rules():
    st = state_with(4, valid=[1], invalid=[2])
    preds = np.array([0.5, 0.5, 0.9, 0.2])
    assert biased_score(st, 0, preds) == 0.5
    assert biased_score(st, 1, preds) == pytest.approx(0.6)
    assert biased_score(st, 2, preds) == -1e6
    np.testing.assert_allclose(biased_scores(preds, st), [0.5, 0.6, -1e6, 0.2])
    # untrained model, unknown config
    assert biased_score(st, 3, features=np.zeros((4, 1))) == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        TunerConfig(epoch_size=100, total_trials=50)
    with pytest.raises(ValueError):
        TunerConfig(bias_valid=-1)
    with pytest.raises(ValueError):
        TunerConfig(sa_initial_temp=0)
    cfg = TunerConfig(mode="enhanced", seed=3)
    assert TunerConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.valid_cap == 25


def test_sa_returns_all_remaining():
    sp = grid(3, 3)
    measured = np.zeros(9, bool)
    measured[[0, 4, 8]] = True
    rng = np.random.default_rng(0)
    got = sa_select_batch(np.zeros(9), measured, sp, 6, rng, TunerConfig())
    assert sorted(got.tolist()) == [1, 2, 3, 5, 6, 7]


def test_sa_finds_true_top_k_on_tiny_space():
    sp = grid(6, 5, 4, 4)   # 480 configurations
    rng = np.random.default_rng(1)
    valid = rng.random(sp.size) < 0.3
    g = np.where(valid, rng.random(sp.size) + 0.1, 0.0)
    st = state_with(sp.size, valid=np.flatnonzero(valid), invalid=np.flatnonzero(~valid))
    scores = biased_scores(g / g.max(), st)
    measured = np.zeros(sp.size, bool)
    batch = sa_select_batch(scores, measured, sp, 20, np.random.default_rng(2), TunerConfig())
    assert set(batch.tolist()) == set(np.argsort(-g)[:20].tolist())


def test_sa_is_seeded():
    sp = grid(8, 8, 8)
    scores = np.random.default_rng(0).random(sp.size)
    m = np.zeros(sp.size, bool)
    a = sa_select_batch(scores, m, sp, 30, np.random.default_rng(5), TunerConfig())
    b = sa_select_batch(scores, m, sp, 30, np.random.default_rng(5), TunerConfig())
    np.testing.assert_array_equal(a, b)
    assert len(set(a.tolist())) == 30


@pytest.mark.parametrize("mode", ["baseline", "enhanced"])
def test_full_run_contracts(w48, mode):
    sp, truth = w48
    cfg = TunerConfig(mode=mode, total_trials=300, seed=9)
    run = run_tuning(sp, truth, cfg)
    idx = [r.index for r in run.records]
    assert len(idx) == len(set(idx)) == 300
    assert [r.trial for r in run.records] == list(range(1, 301))
    best = [r.best_so_far for r in run.records]
    assert best == list(np.maximum.accumulate([r.gflops for r in run.records]))
    if run.stats.found_best:
        assert run.records[run.stats.trials_to_best - 1].gflops == truth.best_gflops
    else:
        assert run.stats.trials_to_best == 301
    if mode == "enhanced":
        known_invalid = set(run.presample.invalid_subset.tolist())
        assert known_invalid & set(idx[:50])   # balanced first epoch
        assert not known_invalid & set(idx[50:])
        assert run.known_invalid_measured == 0
        assert len(run.presample) >= 1000


def test_run_log_is_byte_identical(w48, tmp_path):
    sp, truth = w48
    cfg = TunerConfig(mode="enhanced", total_trials=200, seed=4)
    run_tuning(sp, truth, cfg).write_log(tmp_path / "a.jsonl")
    run_tuning(sp, truth, cfg).write_log(tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    other = run_tuning(sp, truth, cfg.with_seed(5)).log_lines()
    assert other != (tmp_path / "a.jsonl").read_text()


def test_single_valid_in_first_epoch():
    sp = grid(4, 4, 4)
    valid = np.zeros(sp.size, bool)
    valid[17] = True
    truth = table(sp, valid, 3.0)
    pre = PresampleSet([17, 3, 5], [True, False, False])
    run = run_tuning(sp, truth, TunerConfig(mode="enhanced", epoch_size=10, total_trials=40),
                     presample_set=pre)
    assert run.stats.trials_to_best <= 10


def test_sentinel_when_optimum_missed():
    sp = grid(10, 10, 10)
    valid = np.zeros(sp.size, bool)
    valid[[5, 999]] = True
    truth = table(sp, valid, np.where(np.arange(sp.size) == 999, 2.0, 1.0))
    run = run_tuning(sp, truth, TunerConfig(epoch_size=5, total_trials=10, seed=0))
    if not run.stats.found_best:
        assert run.stats.trials_to_best == 11


def test_truncated_last_epoch():
    sp = grid(10, 10)
    truth = table(sp, np.ones(100, bool), np.arange(100) + 1.0)
    run = run_tuning(sp, truth, TunerConfig(epoch_size=30, total_trials=70, seed=2))
    assert len(run.records) == 70


def test_budget_beyond_space_measures_everything():
    sp = grid(5, 4)
    truth = table(sp, np.arange(20) % 3 == 0, np.arange(20) + 1.0)
    run = run_tuning(sp, truth, TunerConfig(epoch_size=8, total_trials=50, seed=1))
    assert sorted(r.index for r in run.records) == list(range(20))
    assert run.stats.found_best


def test_baseline_ignores_presample_and_bias(w48):
    sp, truth = w48
    pre = PresampleSet([0, 1], [False, False])
    a = run_tuning(sp, truth, TunerConfig(total_trials=150, seed=3), presample_set=pre)
    b = run_tuning(sp, truth, TunerConfig(total_trials=150, seed=3))
    assert a.log_lines() == b.log_lines()
    assert a.presample is None


def test_wrong_truth_rejected(w48):
    sp, truth = w48
    with pytest.raises(ValueError):
        run_tuning(grid(3, 3), truth, TunerConfig(epoch_size=2, total_trials=4))


def test_timings_recorded(w48):
    sp, truth = w48
    run = run_tuning(sp, truth, TunerConfig(mode="enhanced", total_trials=200, seed=1))
    t = run.stats.timings
    assert {"presample", "init-select", "fit", "measure-lookup", "sa-select", "total"} <= set(t)
    parts = sum(v for k, v in t.items() if k != "total")
    assert abs(parts - t["total"]) <= 0.1 * t["total"]


def test_untrained_model_scores_zero():
    m = SurrogateModel()
    assert m.predict(np.zeros(3)) == 0.0


def test_enhanced_stops_when_only_known_invalids_remain():
    sp = grid(6, 6)
    valid = np.arange(36) < 8
    truth = table(sp, valid, np.arange(36) + 1.0)
    pre = PresampleSet(np.arange(36), valid)
    run = run_tuning(sp, truth, TunerConfig(mode="enhanced", epoch_size=6, total_trials=30,
                                            seed=0), presample_set=pre)
    idx = [r.index for r in run.records]
    assert set(idx[6:]) <= set(range(8))
    assert run.known_invalid_measured == 0
    assert run.stats.found_best and len(idx) < 30
