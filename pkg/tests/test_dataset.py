import hashlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bpshift.dataset import (
    BP_SCALE,
    InputType,
    SegmentCache,
    assemble,
    assemble_example,
    balanced_sample,
    build_test_I,
    build_test_II,
    check_disjoint,
    kfold,
    make_split,
    pair_table,
    read_manifest,
    split_patients,
    split_train_val,
    write_manifest,
)
from bpshift.errors import InsufficientClassCount, PatientOverlap, TooFewExamples
from bpshift.labeling import BpType, ChangeLabel, label_patient


def first_patient(small_cohort):
    patients = small_cohort[0]
    pid = next(iter(patients))
    return pid, patients[pid]


@pytest.mark.parametrize("it,channels,n_aux", [("ppg", 2, 0), ("sdppg", 4, 0), ("feat", 2, 10)])
@pytest.mark.parametrize("with_bp", [False, True])
def test_example_shapes(small_cohort, it, channels, n_aux, with_bp):
    pid, recs = first_patient(small_cohort)
    pair = label_patient(recs, "mbp", 20)[3]
    segs = {k + 1: r for k, r in enumerate(recs)}
    ex = assemble_example(pair, segs, it, 7, with_bp)
    assert ex.x.shape == (channels, 875)
    assert len(ex.aux) == n_aux + with_bp
    assert ex.x.min() >= 0 and ex.x.max() <= 1
    assert ex.meta == (pid, pair.i, pair.j)
    if with_bp:
        assert ex.aux[-1] == pytest.approx(recs[pair.i - 1].mbp / BP_SCALE, rel=1e-6)


def test_channel_order(small_cohort):
    _, recs = first_patient(small_cohort)
    pair = label_patient(recs, "mbp", 20)[0]
    segs = {k + 1: r for k, r in enumerate(recs)}
    cache = SegmentCache(5, "sdppg")
    ex = assemble_example(pair, segs, "sdppg", 5, False, cache=cache)
    si, sj = cache.get(segs[pair.i]), cache.get(segs[pair.i + pair.j])
    assert np.array_equal(ex.x, np.stack([si.ppg, sj.ppg, si.sdppg, sj.sdppg]))


def test_input_type_parse():
    assert InputType.parse("PpgSdppgWaveform") is InputType.SDPPG
    assert InputType.parse("waveform_feature") is InputType.FEAT
    with pytest.raises(ValueError):
        InputType.parse("ecg")


def test_balanced_sample_small():
    labels = np.repeat([0, 1, 2], 10)
    a = balanced_sample(labels, 5, seed=4)
    assert len(a) == 15 and np.bincount(labels[a]).tolist() == [5, 5, 5]
    assert np.array_equal(a, balanced_sample(labels, 5, seed=4))


def test_balanced_sample_shortfall():
    labels = np.array([0] * 20 + [1] * 20 + [2] * 10)
    with pytest.raises(InsufficientClassCount) as err:
        balanced_sample(labels, 11, 0)
    assert (err.value.label, err.value.have, err.value.need) == ("Dip", 10, 11)


@given(st.lists(st.integers(0, 2), min_size=30, max_size=300), st.integers(0, 10**6))
def test_balanced_histogram_uniform(labels, seed):
    labels = np.asarray(labels)
    per = int(np.bincount(labels, minlength=3).min())
    if per == 0:
        return
    ids = balanced_sample(labels, per, seed)
    assert len(set(ids.tolist())) == len(ids)
    assert np.bincount(labels[ids], minlength=3).tolist() == [per] * 3


def test_kfold_sizes():
    assert [len(f) for f in kfold(np.arange(100), 5, 0)] == [20] * 5
    assert sorted(len(f) for f in kfold(np.arange(101), 5, 0)) == [20, 20, 20, 20, 21]
    a, b = kfold(np.arange(50), 5, 9), kfold(np.arange(50), 5, 9)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    with pytest.raises(TooFewExamples):
        kfold(np.arange(3), 5, 0)


@given(st.integers(5, 400), st.integers(0, 1000))
def test_split_partitions(n, seed):
    split = make_split(np.arange(n), 5, seed)
    all_ids = np.concatenate(split.folds)
    assert sorted(all_ids.tolist()) == list(range(n))
    assert not set(split.train) & set(split.val)
    assert abs(len(split.train) - 0.8 * n) <= 1
    tr, va = split_train_val(np.arange(n), 0.8, seed)
    assert abs(len(tr) - 0.8 * n) <= 1 and not set(tr) & set(va)


def test_patient_split_disjoint():
    roles = split_patients([f"P{k}" for k in range(20)], 10, 5, 5, seed=1)
    check_disjoint(**roles)
    assert sum(len(v) for v in roles.values()) == 20
    with pytest.raises(PatientOverlap):
        check_disjoint(train=["a", "b"], test2=["b"])


def test_test_II_covers_every_pair(small_cohort):
    patients = small_cohort[0]
    group = {p: patients[p] for p in list(patients)[:3]}
    ex = build_test_II(group, "ppg", 3, "mbp", 20)
    assert len(ex) + ex.dropped == 3 * 12 * 11 // 2
    with pytest.raises(PatientOverlap):
        build_test_II(group, "ppg", 3, "mbp", 20, exclude=[next(iter(group))])


def test_test_II_label_counts_match_deltas(small_cohort):
    patients = small_cohort[0]
    ex = build_test_II(patients, "ppg", 3, "sbp", 10)
    table = pair_table(patients)
    expect = np.bincount(table.labels("sbp", 10), minlength=3)
    assert ex.dropped == 0 and ex.label_counts().tolist() == expect.tolist()


def test_test_I_uniform(small_cohort):
    patients = small_cohort[0]
    ex = build_test_I(patients, "ppg", 3, "sbp", 5, per_class=15, seed=0)
    assert ex.label_counts().tolist() == [15, 15, 15]


def test_assembled_examples_normalised(small_cohort):
    patients = small_cohort[0]
    table = pair_table(patients)
    ex = assemble(table, np.arange(0, len(table), 7), patients, "sdppg", 5, "mbp", 20)
    assert ex.x.shape[1:] == (4, 625)
    assert ex.x.min() >= 0 and ex.x.max() <= 1


def test_pair_table_matches_labeling(small_cohort):
    patients = small_cohort[0]
    table = pair_table(patients)
    pid, recs = first_patient(small_cohort)
    rows = np.nonzero(table.patient_id == pid)[0]
    pairs = label_patient(recs, "dbp", 15)
    assert [(int(table.i[k]), int(table.j[k])) for k in rows] == [(p.i, p.j) for p in pairs]
    assert [ChangeLabel(int(v)) for v in table.labels("dbp", 15)[rows]] == \
        [p.label[BpType.DBP] for p in pairs]


def _digest(prefix):
    h = hashlib.sha256()
    for ext in ("ndjson", "bin"):
        h.update(open(f"{prefix}.{ext}", "rb").read())
    return h.hexdigest()


def test_manifest_round_trip_and_determinism(small_cohort, tmp_path):
    patients = small_cohort[0]
    digests = []
    for run in range(2):
        table = pair_table(patients)
        ids = balanced_sample(table.labels("sbp", 5), 10, seed=2)
        ex = assemble(table, ids, patients, "feat", 3, "sbp", 5, True)
        prefix = tmp_path / f"run{run}"
        write_manifest(ex, prefix)
        digests.append(_digest(prefix))
    assert digests[0] == digests[1]
    back = read_manifest(tmp_path / "run0")
    assert np.array_equal(back.x, ex.x) and np.array_equal(back.y, ex.y)
    assert np.allclose(back.aux, ex.aux) and back.meta == ex.meta
    blob = (tmp_path / "run0.bin").read_bytes()
    assert blob[:8] == b"BPSHIFT1"
    assert int.from_bytes(blob[8:12], "little") == 30
