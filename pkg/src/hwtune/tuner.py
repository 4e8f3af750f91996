"""Epoch-based auto-tuning loop with an optional validity-aware start.

Each epoch measures a batch against the ground-truth table, refits the
surrogate on everything measured so far and lets simulated annealing over
the surrogate's (biased) scores propose the next batch.

``Mode.BASELINE`` starts from a uniform random batch with an untrained model.
``Mode.ENHANCED`` presamples validity first, starts from a balanced,
spread-out batch and biases the annealing scores with the known validity.
"""
from __future__ import annotations

import enum
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .metrics import RunStatistics
from .oracle import GroundTruthTable
from .sampler import DEFAULT_N_PARALLEL, PresampleSet, presample, select_initial_batch
from .searchspace import SearchSpace
from .surrogate import GBTParams, SurrogateModel, TrainingSet, feature_table, fit, predict_space


class Mode(str, enum.Enum):
    BASELINE = "baseline"
    ENHANCED = "enhanced"


@dataclass(frozen=True)
class TunerConfig:
    mode: Mode = Mode.BASELINE
    epoch_size: int = 50
    total_trials: int = 750
    sa_steps: int = 200
    sa_population: int = 128
    sa_initial_temp: float = 1.0
    sa_cooling: float = 0.98
    bias_valid: float = 0.1
    bias_invalid: float = -1e6
    eps_greedy: float = 0.05            # share of each batch drawn at random
    presample_budget: int = 1000
    n_parallel: int = DEFAULT_N_PARALLEL
    max_valid: int | None = None        # None: half an epoch
    gbt: GBTParams = field(default_factory=GBTParams)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if isinstance(self.gbt, dict):
            object.__setattr__(self, "gbt", GBTParams(**self.gbt))
        if not 1 <= self.epoch_size <= self.total_trials:
            raise ValueError("need 1 <= epoch_size <= total_trials")
        if self.sa_initial_temp <= 0 or not 0 < self.sa_cooling <= 1:
            raise ValueError("temperature must be positive and cooling in (0, 1]")
        if not self.bias_invalid < 0 < self.bias_valid:
            raise ValueError("need bias_invalid < 0 < bias_valid")
        if self.sa_steps < 0 or self.sa_population < 1:
            raise ValueError("bad annealing schedule")
        if not 0 <= self.eps_greedy <= 1:
            raise ValueError("eps_greedy must lie in [0, 1]")

    @property
    def valid_cap(self) -> int:
        return self.epoch_size // 2 if self.max_valid is None else self.max_valid

    def with_seed(self, seed: int) -> "TunerConfig":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TunerConfig":
        return cls(**d)


@dataclass
class TunerState:
    measured: np.ndarray            # bool mask over linear indices
    known_valid: np.ndarray
    known_invalid: np.ndarray
    model: SurrogateModel
    bias_valid: float = 0.0
    bias_invalid: float = 0.0
    trial_count: int = 0
    best_index: int = -1
    best_gflops: float = 0.0

    @classmethod
    def fresh(cls, size: int, gbt: GBTParams) -> "TunerState":
        z = np.zeros(size, dtype=bool)
        return cls(z.copy(), z.copy(), z.copy(), SurrogateModel(gbt))

    def bias_vector(self) -> np.ndarray:
        bias = np.zeros(self.measured.size)
        bias[self.known_valid] = self.bias_valid
        bias[self.known_invalid] = self.bias_invalid
        return bias


def biased_scores(predictions: np.ndarray, state: TunerState) -> np.ndarray:
    """Surrogate predictions with the known-validity bias applied.

    Known invalid configurations score ``bias_invalid`` (the prediction is
    dropped), known valid ones get ``bias_valid`` added.
    """
    scores = np.asarray(predictions, dtype=np.float64) + state.bias_vector()
    scores[state.known_invalid] = state.bias_invalid
    return scores


def biased_score(state: TunerState, c: int, predictions: np.ndarray | None = None,
                 features: np.ndarray | None = None) -> float:
    if state.known_invalid[c]:
        return float(state.bias_invalid)
    if predictions is not None:
        p = float(predictions[c])
    elif state.model.fitted:
        p = float(state.model.predict(features[c]))
    else:
        p = 0.0
    return p + (state.bias_valid if state.known_valid[c] else 0.0)


def sa_select_batch(scores: np.ndarray, measured: np.ndarray, space: SearchSpace, k: int,
                    rng: np.random.Generator, cfg: TunerConfig,
                    avoid: np.ndarray | None = None) -> np.ndarray:
    """Anneal a population of walkers over ``scores`` and return the top ``k`` unmeasured.

    A proposal changes one knob coordinate of a walker to a uniformly drawn
    different value.  Acceptance is Metropolis with temperature
    ``initial * cooling**t``.  Every visited configuration is a candidate;
    candidates are ranked by score with random tie-breaking.  Configurations
    flagged in ``avoid`` are never returned.  When the walk yields fewer than
    ``k`` candidates, random eligible configurations fill the batch, so the
    batch is shorter than ``k`` only when the eligible pool runs dry.
    """
    eligible = ~measured if avoid is None else ~measured & ~avoid
    free = np.flatnonzero(eligible)
    if free.size <= k:
        order = np.lexsort((rng.random(free.size), -scores[free]))
        return free[order]
    cards = space.cardinalities
    strides = space.strides
    mutable = np.flatnonzero(cards > 1)
    pop = min(cfg.sa_population, free.size)
    cur = rng.choice(free, size=pop, replace=False)
    cur_score = scores[cur]
    visited = [cur]
    coords = space.coords_array(cur)
    rows = np.arange(pop)
    if mutable.size:
        temp = cfg.sa_initial_temp
        for _ in range(cfg.sa_steps):
            knob = mutable[rng.integers(mutable.size, size=pop)]
            card = cards[knob]
            old = coords[rows, knob]
            new = (old + rng.integers(1, card)) % card
            prop = cur + (new - old) * strides[knob]
            prop_score = scores[prop]
            delta = np.minimum(prop_score - cur_score, 0.0)
            accept = (prop_score >= cur_score) | (rng.random(pop) < np.exp(delta / temp))
            cur = np.where(accept, prop, cur)
            cur_score = np.where(accept, prop_score, cur_score)
            coords[rows[accept], knob[accept]] = new[accept]
            visited.append(prop)
            temp *= cfg.sa_cooling
    cand = np.unique(np.concatenate(visited))
    cand = cand[eligible[cand]]
    order = np.lexsort((rng.random(cand.size), -scores[cand]))
    batch = cand[order[:k]]
    if batch.size < k:
        batch = np.concatenate([batch, random_eligible(eligible, batch, k - batch.size, rng)])
    return batch


def random_eligible(eligible: np.ndarray, taken: np.ndarray, k: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Up to ``k`` distinct random configurations from ``eligible`` outside ``taken``."""
    mask = eligible.copy()
    mask[taken] = False
    pool = np.flatnonzero(mask)
    return rng.choice(pool, size=min(k, pool.size), replace=False)


@dataclass
class TrialRecord:
    trial: int
    index: int
    valid: bool
    gflops: float
    best_so_far: float

    def to_json(self) -> str:
        return json.dumps({"trial": self.trial, "index": self.index, "valid": self.valid,
                           "gflops": self.gflops, "best_so_far": self.best_so_far})


@dataclass
class TuningRun:
    records: list[TrialRecord]
    stats: RunStatistics
    presample: PresampleSet | None = None
    known_invalid_measured: int = 0     # in annealing-selected epochs only

    def log_lines(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def write_log(self, path: str | Path) -> None:
        Path(path).write_text(self.log_lines())


class _Clock:
    def __init__(self):
        self.phases: dict[str, float] = {}

    def add(self, name: str, t0: float) -> float:
        now = time.perf_counter()
        self.phases[name] = self.phases.get(name, 0.0) + (now - t0)
        return now


def run_tuning(space: SearchSpace, truth: GroundTruthTable, cfg: TunerConfig,
               presample_set: PresampleSet | None = None,
               features: np.ndarray | None = None) -> TuningRun:
    """One tuning run; bit-reproducible from (space, truth, cfg, presample_set).

    Stops after ``total_trials`` measurements, or earlier in Enhanced mode once
    every unmeasured configuration is a known invalid.
    """
    truth.check_space(space)
    clock = _Clock()
    t_start = t = time.perf_counter()
    seq = np.random.SeedSequence(cfg.seed)
    pre_rng, init_rng, sa_rng = (np.random.default_rng(s) for s in seq.spawn(3))
    size = space.size
    state = TunerState.fresh(size, cfg.gbt)

    if cfg.mode is Mode.ENHANCED:
        if presample_set is None:
            budget = min(cfg.presample_budget, size)
            presample_set = presample(budget, cfg.n_parallel, space,
                                      lambda i: bool(truth.valid[i]),
                                      seed=int(pre_rng.integers(2**63)))
            t = clock.add("presample", t)
        state.known_valid[presample_set.valid_subset] = True
        state.known_invalid[presample_set.invalid_subset] = True
        state.bias_valid, state.bias_invalid = cfg.bias_valid, cfg.bias_invalid
        init = select_initial_batch(presample_set, space, cfg.epoch_size, cfg.valid_cap,
                                    seed=int(init_rng.integers(2**63)))
        batch = init.configs
        t = clock.add("init-select", t)
    else:
        # the unmodified loop: no validity knowledge, no bias
        presample_set = None
        assert state.bias_valid == 0.0 and state.bias_invalid == 0.0
        assert not state.known_valid.any() and not state.known_invalid.any()
        batch = init_rng.choice(size, size=min(cfg.epoch_size, size), replace=False)
        t = clock.add("init-select", t)

    if features is None:
        features = feature_table(space)
        t = clock.add("fit", t)

    budget = min(cfg.total_trials, size)
    records: list[TrialRecord] = []
    measured_idx: list[int] = []
    best_target = truth.best_gflops
    first_best = None
    known_invalid_measured = 0
    epoch = 0
    while True:
        batch = batch[: budget - state.trial_count]
        for c in batch.tolist():
            if state.measured[c]:
                raise AssertionError(f"configuration {c} proposed twice")
            state.measured[c] = True
            if epoch > 0:
                # epoch 0 holds presampled invalids on purpose
                known_invalid_measured += int(state.known_invalid[c])
            g = float(truth.gflops[c])
            state.trial_count += 1
            if g > state.best_gflops:
                state.best_gflops, state.best_index = g, c
            if first_best is None and g == best_target:
                first_best = state.trial_count
            measured_idx.append(c)
            records.append(TrialRecord(state.trial_count, c, bool(truth.valid[c]), g,
                                       state.best_gflops))
        t = clock.add("measure-lookup", t)
        if state.trial_count >= budget:
            break
        idx = np.asarray(measured_idx, dtype=np.int64)
        ts = TrainingSet.from_measurements(features, idx, truth.valid[idx], truth.gflops[idx])
        state.model = fit(state.model, ts, seed=cfg.seed + epoch)
        preds = predict_space(state.model, space, features)
        t = clock.add("fit", t)
        scores = biased_scores(preds, state)
        k = min(cfg.epoch_size, budget - state.trial_count)
        avoid = state.known_invalid if cfg.mode is Mode.ENHANCED else None
        n_rand = int(np.count_nonzero(sa_rng.random(k) < cfg.eps_greedy))
        batch = sa_select_batch(scores, state.measured, space, k - n_rand, sa_rng, cfg,
                                avoid=avoid)
        if n_rand:
            eligible = ~state.measured if avoid is None else ~state.measured & ~avoid
            batch = np.concatenate([batch, random_eligible(eligible, batch, n_rand, sa_rng)])
        if batch.size == 0:
            break   # only known-invalid configurations remain
        t = clock.add("sa-select", t)
        epoch += 1

    clock.phases["total"] = time.perf_counter() - t_start
    found = first_best is not None
    stats = RunStatistics(
        trials_to_best=first_best if found else cfg.total_trials + 1,
        convergence_curve=[(r.trial, r.best_so_far) for r in records],
        found_best=found,
        timings=clock.phases,
    )
    return TuningRun(records, stats, presample_set, known_invalid_measured)
