"""Acceptance criteria, one test per criterion, each at its stated tolerance.

Every test appends a PASS/FAIL line to ``conftest.ACCEPTANCE_LINES``; the
lines are printed in the terminal summary. Oracles here are independent of
the library code they check: brute-force loops, exact rational arithmetic,
literal architecture counts and analytic generator ground truth.

The training criteria run at desk scale on one CPU; see the README for the
sizes and approximate run times.
"""

import os
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

import bpshift.nn.functional as F
from bpshift.cli import main
from bpshift.evaluation import SweepCohorts, metrics, threshold_sweep
from bpshift.fiducials import extract_features, locate_fiducials
from bpshift.labeling import THRESHOLD_GRID, BpType, ChangeLabel, enumerate_pairs, label_patient
from bpshift.models import KINDS, ModelSpec, build_model
from bpshift.nn import concat
from bpshift.nn.tensor import exp
from bpshift.pipeline import Caches, Setting, model_spec, run, synthetic_cohorts, train_on
from bpshift.signal_core import SampledSignal, SegmentRecord, second_derivative, segment_bp_summary
from bpshift.synth import gen_beat, gen_patient, preset, truth_features
from conftest import ACCEPTANCE_LINES
from gradcheck import max_rel_error


def record(name, passed, detail):
    ACCEPTANCE_LINES.append((bool(passed), name, detail))
    assert passed, f"{name}: {detail}"


# -- gradients -----------------------------------------------------------------------


def _grad_cases(rng):
    x_pr = rng.normal(size=(3, 4, 5))
    x_pr = np.where(np.abs(x_pr) < 0.1, 0.5, x_pr)  # keep probes off the PReLU kink
    target = rng.integers(0, 3, size=4)
    mask_seed = int(rng.integers(1 << 30))
    return {
        "dense": (F.dense, [rng.normal(size=(3, 6)), rng.normal(size=(4, 6)), rng.normal(size=4)]),
        "conv1d": (F.conv1d, [rng.normal(size=(2, 3, 12)), rng.normal(size=(4, 3, 3)),
                              rng.normal(size=4)]),
        "instance_norm": (F.instance_norm, [rng.normal(size=(2, 3, 10)), rng.normal(size=3),
                                            rng.normal(size=3)]),
        "prelu": (F.prelu, [x_pr, rng.uniform(0.05, 0.5, size=(4, 1))]),
        "dropout": (lambda x: F.dropout(x, 0.3, True, np.random.default_rng(mask_seed)),
                    [rng.normal(size=(4, 6))]),
        "global_average_pool": (F.global_average_pool, [rng.normal(size=(2, 3, 8))]),
        "max_pool": (lambda x: F.max_pool(x, 2, 2), [rng.normal(size=(2, 3, 10))]),
        "softmax": (F.softmax, [rng.normal(size=(4, 3))]),
        "softmax_attention": (F.softmax_attention, [rng.normal(size=(2, 3, 6))]),
        "cross_entropy": (lambda z: F.cross_entropy(z, target), [rng.normal(size=(4, 3))]),
        "concat": (lambda a, b: concat([a, b], axis=1),
                   [rng.normal(size=(2, 3)), rng.normal(size=(2, 2))]),
        "arithmetic": (lambda a, b: (a * b - a + b * b).mean(axis=0),
                       [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]),
        "exp": (exp, [rng.normal(size=(3, 4))]),
    }


def test_gradient_suite():
    start = time.perf_counter()
    worst = {}
    for inst in range(10):
        for name, (fn, arrays) in _grad_cases(np.random.default_rng(inst)).items():
            worst[name] = max(worst.get(name, 0.0), max_rel_error(fn, arrays, seed=inst))
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if v >= (1e-4 if k == "instance_norm" else 1e-6)}
    record("gradient suite", not bad and elapsed < 60,
           f"{len(worst)} ops x 10 instances, worst norm {worst['instance_norm']:.1e}, "
           f"worst other {max(v for k, v in worst.items() if k != 'instance_norm'):.1e}, "
           f"{elapsed:.1f} s" + (f", failing {sorted(bad)}" if bad else ""))


# -- labeling --------------------------------------------------------------------------


def _brute_force(sbp, dbp, bp_type, threshold):
    series = {"sbp": sbp, "dbp": dbp, "mbp": [(s + 2.0 * d) / 3.0 for s, d in zip(sbp, dbp)]}
    x = series[bp_type]
    out = []
    for a in range(len(x)):
        for b in range(a + 1, len(x)):
            d = x[b] - x[a]
            label = "Spike" if d > threshold else "Dip" if d < -threshold else "Stable"
            out.append((a + 1, b - a, d, label))
    return out


def test_labeling_oracle():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    mismatches = checked = 0
    covered = set()
    for k in range(1000):
        n = int(rng.integers(2, 51))
        if k % 4 == 0:  # integer readings so some deltas land exactly on a threshold
            dbp = rng.integers(50, 90, size=n).astype(float)
            sbp = dbp + rng.integers(30, 60, size=n)
        else:
            dbp = rng.uniform(50, 90, size=n)
            sbp = dbp + rng.uniform(30, 60, size=n)
        sbp, dbp = [float(v) for v in sbp], [float(v) for v in dbp]
        order = rng.permutation(n)  # records arrive shuffled; labelling sorts by index
        segs = [SegmentRecord("P", int(i) + 1, SampledSignal(np.zeros(4), 125.0),
                              sbp[i], dbp[i]) for i in order]
        for t in BpType:
            grid = THRESHOLD_GRID[t]
            th = float(grid[k % len(grid)])
            covered.add((t.value, th))
            got = [(p.i, p.j, p.delta[t], ChangeLabel(p.label[t]).title)
                   for p in label_patient(segs, t, th)]
            checked += 1
            mismatches += got != _brute_force(sbp, dbp, t.value, th)
    elapsed = time.perf_counter() - start
    full = sum(len(g) for g in THRESHOLD_GRID.values())
    record("labeling oracle", mismatches == 0 and len(covered) == full and elapsed < 60,
           f"{checked} patient labelings, {mismatches} mismatches, "
           f"{len(covered)}/{full} (type, threshold) cells, {elapsed:.1f} s")


def test_pair_count_law():
    wrong = [n for n in range(2, 501) if len(enumerate_pairs(n)) != n * (n - 1) // 2]
    record("pair-count law", not wrong, f"N = 2..500, {len(wrong)} counts off")


# -- signal summaries -------------------------------------------------------------------


def test_mbp_identity():
    cfg = preset("learnable", n_patients=50, segments_per_patient=20, seed=11)
    worst, n = 0.0, 0
    for p in range(cfg.n_patients):
        rows, _ = gen_patient(cfg, p)
        for row in rows:
            sbp, dbp, mbp = segment_bp_summary(SampledSignal(row["abp"], row["fs"]))
            worst = max(worst, abs(mbp - (sbp + 2 * dbp) / 3))
            n += 1
    record("MBP identity", n == 1000 and worst <= 1e-9, f"{n} segments, max gap {worst:.1e}")


# -- metrics -------------------------------------------------------------------------


def _exact_metrics(cm):
    total = sum(sum(r) for r in cm)
    out = {"accuracy": Fraction(sum(cm[k][k] for k in range(3)), total)}
    prec, rec, f1 = [], [], []
    for k in range(3):
        tp = cm[k][k]
        fp = sum(cm[r][k] for r in range(3)) - tp
        fn = sum(cm[k]) - tp
        p = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        r = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        prec.append(p)
        rec.append(r)
        f1.append(2 * p * r / (p + r) if p + r else Fraction(0))
    out.update(precision=prec, recall=rec, f1=f1, macro_f1=sum(f1) / 3)
    return out


def test_metrics_oracle():
    rng = np.random.default_rng(5)
    exact_bad = float_worst = 0
    for k in range(100):
        cm = rng.integers(0, 40, size=(3, 3))
        if k % 10 == 0:
            cm[:, k % 3] = 0  # a class never predicted: 0/0 precision
        cm[0, 0] += 1
        cm = [[int(v) for v in row] for row in cm]
        want = _exact_metrics(cm)
        got = metrics(np.array(cm))
        pairs = [(got.accuracy, want["accuracy"]), (got.macro_f1, want["macro_f1"])]
        for key in ("precision", "recall", "f1"):
            pairs += list(zip(getattr(got, key), want[key]))
        for g, w in pairs:
            # The library's float must be the correctly rounded value of the
            # exact rational, or within 1e-12 of it.
            exact_bad += Fraction(g) != w and abs(Fraction(g) - w) > Fraction(1, 10**12)
            float_worst = max(float_worst, abs(g - float(w)))
        exact_bad += Fraction(got.accuracy) != Fraction(float(want["accuracy"]))
    record("metrics oracle", exact_bad == 0 and float_worst < 1e-12,
           f"100 matrices, accuracy exact to rounding, max float gap {float_worst:.1e}")


# -- architectures ---------------------------------------------------------------------


# Literal layer / convolutional-layer counts of the published architecture table.
ARCH_COUNTS = {"mlp": (4, 0), "cnn": (4, 3), "resnet": (11, 10), "encoder": (5, 3)}


def test_architecture_conformance():
    got = {}
    for kind in KINDS:
        for bp in (True, False):
            spec = ModelSpec(kind=kind, in_channels=2, length=32, widths=(4, 4, 4), hidden=8,
                             include_initial_bp=bp)
            got[(kind, bp)] = build_model(spec).layer_counts()
    bad = {k: v for k, v in got.items() if v != ARCH_COUNTS[k[0]]}
    record("architecture conformance", not bad,
           ", ".join(f"{k} {ARCH_COUNTS[k][0]}/{ARCH_COUNTS[k][1]}" for k in KINDS)
           + (f"; mismatches {bad}" if bad else ""))


# -- fiducials -----------------------------------------------------------------------


def test_fiducial_recovery():
    rng = np.random.default_rng(0)
    ok = 0
    errors = {}
    for k in range(1000):
        sbp = rng.uniform(95, 170)
        beat = gen_beat(rng.uniform(55, 95), (sbp, sbp - rng.uniform(35, 55)), seed=k,
                        morph_jitter=0.01)
        try:
            got = extract_features(locate_fiducials(
                second_derivative(SampledSignal(beat.ppg, beat.fs)))).to_dict()
        except Exception:
            continue
        ok += 1
        for name, want in truth_features(beat.fiducials).items():
            errors.setdefault(name, []).append(abs(got[name] - want) / abs(want))
    medians = {n: float(np.median(v)) for n, v in errors.items()}
    worst = max(medians.values())
    record("fiducial recovery", ok >= 950 and worst <= 0.02,
           f"{ok}/1000 beats located, worst per-feature median relative error {worst:.2%}")


# -- training criteria -------------------------------------------------------------------


LEARN = Setting(input_type="sdppg", bp_type="mbp", threshold=20.0, seconds=3, per_class=2000,
                test_per_class=300, seed=0)
LEARN_EPOCHS = 20


@pytest.fixture(scope="module")
def learnable():
    return synthetic_cohorts("learnable", n_train=50, n_test1=10, n_test2=5, segments=60, seed=0)


@pytest.fixture(scope="module")
def caches():
    return Caches()


@pytest.mark.slow
def test_desk_scale_learnability(learnable, caches):
    start = time.perf_counter()
    acc = {}
    for arch in ("encoder", "mlp"):
        r = run(learnable, arch, LEARN, spec_overrides={"epochs": LEARN_EPOCHS}, caches=caches,
                with_test2=False)
        acc[arch] = 100 * r.reports["test1"].balanced_accuracy
    minutes = (time.perf_counter() - start) / 60
    passed = (acc["encoder"] >= 80 and acc["mlp"] >= 60 and acc["encoder"] >= acc["mlp"] + 5
              and minutes < 30)
    record("desk-scale learnability", passed,
           f"Encoder {acc['encoder']:.1f}%, MLP {acc['mlp']:.1f}% balanced accuracy on Test-I "
           f"(need >= 80, >= 60, gap >= 5), {minutes:.1f} min")


CONTROL = Setting(input_type="sdppg", bp_type="mbp", threshold=20.0, seconds=3, per_class=600,
                  test_per_class=300, seed=0, include_initial_bp=False)


@pytest.mark.slow
def test_negative_control():
    cohorts = synthetic_cohorts("control", n_train=30, n_test1=10, n_test2=0, segments=60, seed=1)
    caches = Caches()
    acc = {}
    for arch in KINDS:
        r = run(cohorts, arch, CONTROL, spec_overrides={"epochs": 8}, caches=caches,
                with_test2=False)
        acc[arch] = 100 * r.reports["test1"].accuracy
    passed = all(abs(a - 100 / 3) <= 5 for a in acc.values())
    record("negative control", passed,
           ", ".join(f"{k} {v:.1f}%" for k, v in acc.items()) + " (need 33.3 +/- 5)")


SWEEP_PER_CLASS = 1000
SWEEP_EPOCHS = 15


@pytest.mark.slow
def test_sweep_shape(learnable):
    c = learnable
    sc = SweepCohorts(c.train, c.test1, c.test2, "sdppg", 3, True)
    spec = model_spec("encoder", "sdppg", 3, c.fs, True, epochs=SWEEP_EPOCHS)

    def train_fn(examples, threshold, seed):
        return train_on(examples, spec, seed).model

    rows = threshold_sweep(sc, "mbp", train_fn, per_class=SWEEP_PER_CLASS, test_per_class=100,
                           seed=0)
    stable = [r["stable_fraction_test2"] for r in rows]
    base = [r["always_stable_accuracy_test2"] for r in rows]
    ok_rows = [r for r in rows if r["status"] == "ok"]
    acc = [100 * r["test2"]["accuracy"] for r in ok_rows]
    mono = all(b >= a for a, b in zip(stable, stable[1:])) and all(
        b >= a for a, b in zip(base, base[1:]))
    drops = [a - b for a, b in zip(acc, acc[1:])]
    trend = len(acc) >= 3 and max(drops, default=0) <= 3
    record("sweep shape", mono and trend,
           f"stable share {stable[0]:.2f} -> {stable[-1]:.2f}; Encoder Test-II accuracy "
           + " ".join(f"{r['threshold']:g}:{a:.1f}" for r, a in zip(ok_rows, acc))
           + f"; largest drop {max(drops, default=0):.1f} points (need <= 3)")


ABLATION = Setting(input_type="sdppg", bp_type="mbp", threshold=20.0, seconds=3, per_class=600,
                   test_per_class=300, seed=0)


@pytest.mark.slow
def test_ablation_direction(learnable, caches):
    acc = {}
    for bp in (True, False):
        s = Setting(**{**ABLATION.__dict__, "include_initial_bp": bp})
        r = run(learnable, "encoder", s, spec_overrides={"epochs": 10}, caches=caches)
        acc[bp] = 100 * r.reports["test2"].accuracy
    record("ablation direction", acc[True] >= acc[False] - 1,
           f"Test-II accuracy with BP {acc[True]:.1f}%, without {acc[False]:.1f}% "
           "(need with >= without - 1)")


# -- determinism ---------------------------------------------------------------------


DET_CONFIG = ('{"cohort": {"train_patients": 6, "test1_patients": 2, "test2_patients": 2},'
              ' "synth": {"patients": 10, "segments": 20}}')
DET_DATA = ["--config", "cfg.json", "--seed", "3", "--input-type", "sdppg", "--bp-type", "mbp",
            "--threshold", "5", "--seconds", "3", "--per-class", "20", "--test-per-class", "3"]
DET_ARGS = [*DET_DATA, "--arch", "encoder"]


def _cli_run(root, monkeypatch):
    root.mkdir()
    (root / "cfg.json").write_text(DET_CONFIG)
    monkeypatch.chdir(root)
    codes = [main(["synth", "--config", "cfg.json", "--seed", "3"]),
             main(["sample", *DET_DATA]),
             main(["train", *DET_ARGS, "--epochs", "3"]),
             main(["evaluate", *DET_ARGS])]
    assert codes == [0, 0, 0, 0]
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file()}


def test_determinism(tmp_path, monkeypatch):
    a = _cli_run(tmp_path / "a", monkeypatch)
    b = _cli_run(tmp_path / "b", monkeypatch)
    kinds = {"dataset manifests": [k for k in a if k.startswith("data" + os.sep)],
             "training histories": [k for k in a if k.endswith("history.ndjson")],
             "metric reports": [k for k in a if Path(k).name.startswith("report_")]}
    differ = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    passed = not differ and all(kinds.values())
    record("determinism", passed,
           f"{len(a)} files byte-identical across two runs ("
           + ", ".join(f"{len(v)} {k}" for k, v in kinds.items()) + ")"
           + (f"; differing {differ}" if differ else ""))
