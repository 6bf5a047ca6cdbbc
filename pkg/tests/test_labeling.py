import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bpshift.errors import IndexOutOfRange, TooFewSegments
from bpshift.labeling import (
    THRESHOLD_GRID,
    BpType,
    ChangeLabel,
    classify_change,
    classify_deltas,
    delta_bp,
    enumerate_pairs,
    label_patient,
    label_patient_multi,
    pair_index_arrays,
)
from bpshift.signal_core import SampledSignal, SegmentRecord

SPIKE, STABLE, DIP = ChangeLabel.SPIKE, ChangeLabel.STABLE, ChangeLabel.DIP
PPG = SampledSignal([0.0, 1.0], 125)


def records(sbp, dbp=None, pid="p"):
    dbp = dbp if dbp is not None else [s - 40 for s in sbp]
    return [SegmentRecord(pid, k + 1, PPG, s, d) for k, (s, d) in enumerate(zip(sbp, dbp))]


def test_delta_examples():
    assert delta_bp([100, 120, 90], 1, 1) == 20
    assert delta_bp([100, 120, 90], 1, 2) == -10


@pytest.mark.parametrize("i,j", [(3, 1), (0, 1), (1, 0), (2, 2)])
def test_delta_out_of_range(i, j):
    with pytest.raises(IndexOutOfRange):
        delta_bp([100, 120, 90], i, j)


def test_enumerate_small_and_large():
    assert enumerate_pairs(3) == [(1, 1), (1, 2), (2, 1)]
    assert len(enumerate_pairs(400)) == 79_800


def test_enumerate_needs_two():
    with pytest.raises(TooFewSegments):
        enumerate_pairs(1)


def test_cohort_scale_pair_count():
    # 500 patients at a mean of 412 segments is of order 10^7 pairs.
    total = 500 * 412 * 411 // 2
    assert 1e7 < total < 1e8


@given(st.integers(2, 120))
def test_vector_pairs_match_list(n):
    i, j = pair_index_arrays(n)
    assert list(zip(i.tolist(), j.tolist())) == enumerate_pairs(n)


def test_classify_examples():
    assert classify_change(35, 30) is SPIKE
    assert classify_change(30, 30) is STABLE
    assert classify_change(-30, 30) is STABLE
    assert classify_change(-16, 15) is DIP


def test_classify_needs_positive_threshold():
    with pytest.raises(ValueError):
        classify_change(1, 0)


@given(st.floats(-200, 200), st.sampled_from([5, 10, 15, 20, 25, 30, 35, 40, 45]))
def test_antisymmetry(d, th):
    swap = {SPIKE: DIP, DIP: SPIKE, STABLE: STABLE}
    assert classify_change(-d, th) is swap[classify_change(d, th)]


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=50), st.floats(1, 60))
def test_vector_classifier_matches_scalar(ds, th):
    assert classify_deltas(ds, th).tolist() == [int(classify_change(d, th)) for d in ds]


def test_label_patient_example():
    pairs = label_patient(records([100, 140, 95]), "sbp", 30)
    assert [(p.i, p.j) for p in pairs] == [(1, 1), (1, 2), (2, 1)]
    assert [p.delta[BpType.SBP] for p in pairs] == [40, -5, -45]
    assert [p.label[BpType.SBP] for p in pairs] == [SPIKE, STABLE, DIP]


def test_constant_series_all_stable():
    pairs = label_patient(records([120] * 6), BpType.SBP, 5)
    assert all(p.label[BpType.SBP] is STABLE for p in pairs)


def test_records_are_ordered_by_index():
    recs = records([100, 140, 95])
    assert [p.delta for p in label_patient(recs[::-1], "sbp", 30)] == \
        [p.delta for p in label_patient(recs, "sbp", 30)]


def test_mixed_patients_rejected():
    with pytest.raises(ValueError):
        label_patient(records([100, 110]) + records([100], pid="q"), "sbp", 30)


def test_too_few_segments():
    with pytest.raises(TooFewSegments):
        label_patient(records([100]), "sbp", 30)


series = st.lists(st.floats(90, 190), min_size=2, max_size=30)


@given(series)
def test_stable_count_non_decreasing_in_threshold(sbp):
    pairs = label_patient_multi(records(sbp), {"sbp": 5})
    deltas = np.array([p.delta[BpType.SBP] for p in pairs])
    counts = [int(np.sum(np.abs(deltas) <= th)) for th in THRESHOLD_GRID[BpType.SBP]]
    labelled = [sum(p.label[BpType.SBP] is STABLE
                    for p in label_patient(records(sbp), "sbp", th))
                for th in THRESHOLD_GRID[BpType.SBP]]
    assert labelled == counts
    assert all(a <= b for a, b in zip(labelled, labelled[1:]))


@given(series, st.integers(-30, 30))
def test_labels_invariant_to_offset(sbp, c):
    base = [p.label[BpType.SBP] for p in label_patient(records(sbp), "sbp", 20)]
    moved = [p.label[BpType.SBP] for p in label_patient(records([s + c for s in sbp]), "sbp", 20)]
    assert base == moved


@given(st.integers(2, 60))
def test_pair_count_law(n):
    assert len(enumerate_pairs(n)) == n * (n - 1) // 2


def test_label_title_and_parse():
    assert [lab.title for lab in ChangeLabel] == ["Spike", "Stable", "Dip"]
    assert ChangeLabel.parse("dip") is DIP and ChangeLabel.parse(1) is STABLE
    assert BpType.parse("MBP") is BpType.MBP
    with pytest.raises(ValueError):
        BpType.parse("pp")


def test_threshold_grids():
    assert THRESHOLD_GRID[BpType.SBP] == tuple(range(5, 50, 5))
    assert THRESHOLD_GRID[BpType.DBP][-1] == 35
    assert THRESHOLD_GRID[BpType.MBP][-1] == 40
