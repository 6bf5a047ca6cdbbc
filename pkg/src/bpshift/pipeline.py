"""End-to-end helpers: cohorts, training sets, model specs and evaluated runs.

These wrap the dataset, model and training modules into the handful of
calls the CLI, the acceptance suite and the demo scripts share.
"""

from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    BP_SCALE,
    InputType,
    SegmentCache,
    assemble,
    balanced_sample,
    build_test_I,
    build_test_II,
    check_disjoint,
    make_split,
    pair_table,
    split_patients,
)
from .evaluation import evaluate
from .ingest import by_patient, records_from_rows
from .labeling import BpType
from .models import desk_preset, paper_preset
from .synth import gen_cohort, preset
from .training import cross_validate, fit


@dataclass
class Cohorts:
    """Patient-disjoint groups, each ``{patient_id: ordered records}``."""

    train: dict
    test1: dict
    test2: dict
    dropped: list = field(default_factory=list)

    def __post_init__(self):
        check_disjoint(train=list(self.train), test1=list(self.test1), test2=list(self.test2))

    @property
    def fs(self):
        first = next(iter(self.train.values()))
        return first[0].ppg.fs

    def ids(self):
        return {"train": list(self.train), "test1": list(self.test1), "test2": list(self.test2)}


def cohorts_from_patients(patients, n_train, n_test1, n_test2, seed=0, dropped=()):
    roles = split_patients(list(patients), n_train, n_test1, n_test2, seed)
    pick = {role: {p: patients[p] for p in pids} for role, pids in roles.items()}
    return Cohorts(pick["train"], pick["test1"], pick["test2"], list(dropped))


def synthetic_cohorts(preset_name="learnable", n_train=50, n_test1=5, n_test2=5, segments=60,
                      seed=0, **overrides):
    """Generate a synthetic cohort and split it into patient-disjoint groups."""
    n = n_train + n_test1 + n_test2
    cfg = preset(preset_name, n_patients=n, segments_per_patient=segments, seed=seed, **overrides)
    rows, truth = gen_cohort(cfg)
    records, dropped = records_from_rows(rows)
    return cohorts_from_patients(by_patient(records), n_train, n_test1, n_test2, seed, dropped)


def model_spec(arch, input_type, seconds, fs=125.0, include_initial_bp=True, preset_name="desk",
               **overrides):
    """Desk or published-settings :class:`ModelSpec` for an input configuration."""
    it = InputType.parse(input_type)
    make = desk_preset if preset_name == "desk" else paper_preset
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if "widths" in overrides:
        overrides["widths"] = tuple(overrides["widths"])
    return make(arch, it.channels, int(round(seconds * fs)), n_features=it.n_features,
                include_initial_bp=include_initial_bp, **overrides)


@dataclass
class Setting:
    """Everything that defines one training set."""

    input_type: str = "sdppg"
    bp_type: str = "mbp"
    threshold: float = 20.0
    seconds: int = 7
    include_initial_bp: bool = True
    per_class: int = 2000
    test_per_class: int = 300
    seed: int = 0
    bp_scale: float = BP_SCALE


class Caches:
    """One :class:`SegmentCache` per (seconds, input type)."""

    def __init__(self):
        self._c = {}

    def get(self, seconds, input_type):
        key = (int(seconds), InputType.parse(input_type))
        if key not in self._c:
            self._c[key] = SegmentCache(*key)
        return self._c[key]


def training_set(cohorts, s, cache=None):
    """Balanced training pool of the train cohort for setting ``s``."""
    cache = cache or SegmentCache(s.seconds, s.input_type)
    table = pair_table(cohorts.train, usable=cache.ok)
    ids = balanced_sample(table.labels(s.bp_type, s.threshold), s.per_class, s.seed)
    out = assemble(table, ids, cohorts.train, s.input_type, s.seconds, s.bp_type, s.threshold,
                   s.include_initial_bp, cache, s.bp_scale)
    out.info["pairs_available"] = len(table)
    return out


def test_sets(cohorts, s, cache=None, with_test2=True):
    cache = cache or SegmentCache(s.seconds, s.input_type)
    out = {}
    if cohorts.test1:
        out["test1"] = build_test_I(cohorts.test1, s.input_type, s.seconds, s.bp_type,
                                    s.threshold, s.test_per_class, s.seed + 1,
                                    s.include_initial_bp, exclude=list(cohorts.train), cache=cache)
    if with_test2 and cohorts.test2:
        out["test2"] = build_test_II(cohorts.test2, s.input_type, s.seconds, s.bp_type,
                                     s.threshold, s.include_initial_bp,
                                     exclude=list(cohorts.train) + list(cohorts.test1), cache=cache)
    return out


@dataclass
class RunResult:
    spec: object
    result: object
    reports: dict
    train_set: object = None

    @property
    def model(self):
        return self.result.model


def train_on(train_examples, spec, seed=0, folds=5, cv=False):
    """Fold-0 (80/20) training, or full cross-validation keeping the best fold."""
    split = make_split(np.arange(len(train_examples)), folds, seed)
    if cv:
        cvr = cross_validate(spec, train_examples, split, seed)
        return cvr.folds[cvr.best_fold]
    tr, va = split.fold(0)
    return fit(spec, train_examples.subset(tr), train_examples.subset(va), seed=seed)


def run(cohorts, arch, s, spec_overrides=None, preset_name="desk", caches=None, with_test2=True,
        folds=5, cv=False):
    """Sample, train and evaluate one configuration."""
    caches = caches or Caches()
    cache = caches.get(s.seconds, s.input_type)
    train_examples = training_set(cohorts, s, cache)
    spec = model_spec(arch, s.input_type, s.seconds, cohorts.fs, s.include_initial_bp,
                      preset_name, **(spec_overrides or {}))
    result = train_on(train_examples, spec, s.seed, folds, cv)
    meta = {"arch": arch, "seed": s.seed, "preset": preset_name}
    reports = {name: evaluate(result.model, ex, meta)
               for name, ex in test_sets(cohorts, s, cache, with_test2).items()}
    return RunResult(spec, result, reports, train_examples)


__all__ = [
    "BpType",
    "Caches",
    "Cohorts",
    "RunResult",
    "Setting",
    "cohorts_from_patients",
    "model_spec",
    "run",
    "synthetic_cohorts",
    "test_sets",
    "train_on",
    "training_set",
]
