import csv
import io
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bpshift.errors import EmptyEvaluation, TooFewSegments
from bpshift.evaluation import (
    ConfusionMatrix,
    MatrixCell,
    SweepCohorts,
    always_stable_accuracy,
    bands_csv,
    content_hash,
    evaluate,
    label_band_export,
    matrix_cells,
    metrics,
    run_matrix,
    stable_fraction,
    summary_csv,
    threshold_sweep,
)
from bpshift.ingest import by_patient, records_from_rows
from bpshift.labeling import THRESHOLD_GRID, BpType
from bpshift.synth import gen_patient, preset

STABLE = 1
counts = st.lists(st.integers(0, 50), min_size=9, max_size=9).filter(lambda v: sum(v) > 0)


def test_perfect_diagonal():
    rep = metrics(np.diag([10, 10, 10]))
    assert rep.accuracy == 1.0 and rep.macro_f1 == 1.0


def test_hand_computed_matrix():
    rep = metrics([[5, 5, 0], [0, 10, 0], [0, 0, 10]])
    assert rep.accuracy == pytest.approx(25 / 30)
    assert rep.precision[0] == 1.0 and rep.recall[0] == 0.5
    assert rep.f1[0] == pytest.approx(2 / 3)


def test_all_stable_predictions():
    rep = metrics([[0, 10, 0], [0, 10, 0], [0, 10, 0]])
    assert rep.accuracy == pytest.approx(1 / 3)
    assert rep.macro_f1 == pytest.approx(0.5 / 3)


def test_absent_class_has_zero_f1():
    rep = metrics([[4, 0, 0], [1, 3, 0], [0, 0, 0]])
    assert rep.f1[2] == 0.0
    assert rep.balanced_accuracy == pytest.approx((1.0 + 0.75) / 2)


def test_empty_matrix():
    with pytest.raises(EmptyEvaluation):
        metrics(np.zeros((3, 3), int))


def test_bad_matrix():
    with pytest.raises(ValueError):
        ConfusionMatrix.from_array([[1, -1, 0], [0, 0, 0], [0, 0, 0]])


@given(counts, st.permutations([0, 1, 2]))
def test_permutation_covariance(flat, perm):
    cm = np.array(flat).reshape(3, 3)
    perm = list(perm)
    moved = cm[np.ix_(perm, perm)]
    a, b = metrics(cm), metrics(moved)
    assert a.accuracy == b.accuracy
    assert a.macro_f1 == pytest.approx(b.macro_f1, abs=1e-15)
    assert [a.f1[k] for k in perm] == pytest.approx(b.f1)


@given(counts)
def test_micro_one_vs_rest_equals_trace(flat):
    cm = ConfusionMatrix.from_array(np.array(flat).reshape(3, 3))
    tp = sum(cm.one_vs_rest(k)["tp"] for k in range(3))
    assert Fraction(tp, cm.total) == Fraction(int(np.trace(cm.array())), cm.total)
    rep = metrics(cm)
    assert 0 <= min(rep.f1) and max(rep.f1) <= 1
    assert rep.macro_f1 == pytest.approx(sum(rep.f1) / 3)


def test_one_vs_rest_counts():
    cm = ConfusionMatrix.from_array([[5, 2, 1], [0, 7, 3], [4, 0, 8]])
    assert cm.one_vs_rest(0) == {"tp": 5, "fp": 4, "fn": 3, "tn": 18}


class FakeSet:
    """Just enough of an example set for :func:`evaluate`."""

    def __init__(self, y, pred):
        self.y, self.pred = np.asarray(y), np.asarray(pred)

    def __len__(self):
        return len(self.y)

    def settings(self):
        return {"bp_type": "mbp"}


def test_evaluate_with_callable_and_order_invariance():
    r = np.random.default_rng(0)
    y, p = r.integers(0, 3, 60), r.integers(0, 3, 60)
    perm = r.permutation(60)
    a = evaluate(lambda ex: ex.pred, FakeSet(y, p), {"arch": "x"})
    b = evaluate(lambda ex: ex.pred, FakeSet(y[perm], p[perm]), {"arch": "x"})
    assert a.to_dict() == b.to_dict()
    assert a.meta == {"bp_type": "mbp", "arch": "x"}
    one = evaluate(lambda ex: ex.pred, FakeSet([2], [1]))
    assert one.accuracy in (0.0, 1.0)
    with pytest.raises(EmptyEvaluation):
        evaluate(lambda ex: ex.pred, FakeSet([], []))


def test_stable_fraction_series_on_gaussian_deltas():
    deltas = np.random.default_rng(5).normal(0, 15, 20_000)
    grid = THRESHOLD_GRID[BpType.MBP]
    frac = [stable_fraction(deltas, th) for th in grid]
    base = [always_stable_accuracy(deltas, th) for th in grid]
    assert frac == base
    assert all(x < y for x, y in zip(frac, frac[1:]))


@pytest.fixture(scope="module")
def sweep_cohorts():
    cfg = preset("learnable", n_patients=6, segments_per_patient=15, seed=8)
    rows = []
    for p in range(cfg.n_patients):
        rows += gen_patient(cfg, p)[0]
    patients = by_patient(records_from_rows(rows)[0])
    ids = list(patients)
    pick = lambda sel: {p: patients[p] for p in sel}  # noqa: E731
    return SweepCohorts(pick(ids[:3]), pick(ids[3:5]), pick(ids[5:]), "ppg", 3)


def test_sweep_with_always_stable_model(sweep_cohorts):
    always = lambda ex: np.full(len(ex), STABLE)  # noqa: E731
    rows = threshold_sweep(sweep_cohorts, "mbp", lambda ex, th, seed: always,
                           grid=(5, 10, 40), per_class=5, test_per_class=3)
    ok = [r for r in rows if r["status"] == "ok"]
    assert ok and rows[-1]["status"] == "insufficient"
    for r in ok:
        assert r["test2"]["accuracy"] == pytest.approx(r["always_stable_accuracy_test2"])
        assert r["test1"]["accuracy"] == pytest.approx(1 / 3)
        assert r["test1"]["n"] == 9
    fr = [r["stable_fraction_test2"] for r in rows]
    assert fr == sorted(fr)


def test_bands_with_oracle_predictor(small_cohort):
    patients = small_cohort[0]
    recs = next(iter(patients.values()))
    rows = label_band_export(lambda ex: ex.y, recs, "mbp", 20, "ppg", 3)
    assert len(rows) == len(recs) - 1
    assert all(r["predicted_label"] == r["true_label"] for r in rows)
    assert [r["t_s"] for r in rows] == [10.0 * j for j in range(1, len(recs))]
    text = bands_csv(rows)
    assert next(csv.reader(io.StringIO(text))) == ["patient_id", "j", "t_s", "initial_bp",
                                                   "reference_bp", "true_label", "predicted_label"]


def test_bands_need_two_segments(small_cohort):
    recs = next(iter(small_cohort[0].values()))
    with pytest.raises(TooFewSegments):
        label_band_export(lambda ex: ex.y, recs[:1], "mbp", 20, "ppg", 3)


def _patient(events, n=45, seed=4):
    cfg = preset("oracle", segments_per_patient=n, walk_sigma=0.0, event_rate=0.0, seed=seed)
    rows, truth = gen_patient(cfg, 0, events=events)
    return records_from_rows(rows)[0], truth


def test_constant_bp_patient_is_all_stable():
    recs, _ = _patient([], n=8)
    rows = label_band_export(lambda ex: ex.y, recs, "sbp", 5, "ppg", 3)
    assert {r["true_label"] for r in rows} == {"Stable"}


def test_injected_spike_flips_labels():
    recs, truth = _patient([{"start": 30, "magnitude": 40.0, "duration": 5}])
    rows = label_band_export(lambda ex: ex.y, recs, "sbp", 30, "ppg", 3)
    spike_t = [r["t_s"] for r in rows if r["true_label"] == "Spike"]
    assert spike_t == [300.0, 310.0, 320.0, 330.0, 340.0]
    for r in rows:
        assert (r["true_label"] == "Spike") == (r["reference_bp"] > r["initial_bp"] + 30)


def test_matrix_counts_and_summary():
    cells = matrix_cells(input_types=("ppg",))
    assert len(cells) == 12

    def run_cell(cell):
        acc = 0.5 + 0.01 * len(cell.key())
        return {"test1": metrics(np.diag([5, 5, 5]) if acc > 0.9 else [[5, 1, 0], [0, 5, 1], [1, 0, 5]],
                                 {"arch": cell.arch})}

    out = run_matrix(cells, run_cell)
    assert len(out["reports"]) == 12 and len(out["summary"]) == 12
    for row in out["summary"]:
        rep = out["reports"][row["cell"]][row["cohort"]]
        assert row["accuracy"] == rep["accuracy"] and row["macro_f1"] == rep["macro_f1"]
    assert summary_csv(out["summary"]).count("\n") == 13


def test_ablation_pair_differs_only_in_flag():
    on, off = matrix_cells(archs=("encoder",), bp_types=("mbp",), initial_bp=(True, False))
    a, b = vars(on).copy(), vars(off).copy()
    assert a.pop("include_initial_bp") and not b.pop("include_initial_bp")
    assert a == b
    assert MatrixCell("cnn", "ppg", "sbp", 5, False).key() == "cnn-ppg-sbp-5s-nobp"


def test_content_hash_is_git_blob():
    assert content_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_report_json_sorted():
    rep = metrics(np.diag([1, 2, 3]), {"seed": 0})
    assert json.loads(rep.to_json())["meta"] == {"seed": 0}
