"""Model inputs, balanced sampling, splits and dataset manifests.

Three input types pair segment i with segment i + j:

========  ===========================  ========  =========
name      channels                     x shape   features
========  ===========================  ========  =========
ppg       ppg_i, ppg_ij                2 x L     0
feat      ppg_i, ppg_ij                2 x L     5 + 5
sdppg     ppg_i, ppg_ij, sd_i, sd_ij   4 x L     0
========  ===========================  ========  =========

with ``L = seconds * fs``. Every channel is min-max normalised. The aux
vector holds the sdPPG features (if any) followed by ``BP_i / 200`` when the
initial BP is included.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    InsufficientClassCount,
    PatientOverlap,
    SignalError,
    TooFewExamples,
)
from .fiducials import segment_features
from .labeling import BpType, ChangeLabel, ChangePair, classify_deltas, pair_index_arrays
from .signal_core import (
    bandpass,
    detect_beats,
    min_max_normalize,
    second_derivative,
    truncate_to_cycles,
)

log = logging.getLogger(__name__)

BP_SCALE = 200.0
#: Multiplies (b/a, slope_bc, slope_bd, agi, agi_mod) before they enter a model.
FEATURE_SCALE = np.array([1.0, 0.1, 0.1, 1.0, 1.0])
SIDECAR_MAGIC = b"BPSHIFT1"


class InputType(str, Enum):
    PPG = "ppg"
    FEAT = "feat"
    SDPPG = "sdppg"

    @property
    def channels(self):
        return 4 if self is InputType.SDPPG else 2

    @property
    def n_features(self):
        return 10 if self is InputType.FEAT else 0

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"ppgwaveform": "ppg", "waveformfeature": "feat", "ppgsdppgwaveform": "sdppg"}
        key = str(value).lower().replace("-", "").replace("_", "")
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown input type {value!r}; choose from ppg, feat, sdppg") from None


@dataclass(frozen=True)
class PreparedSegment:
    ppg: np.ndarray
    sdppg: np.ndarray = None
    features: np.ndarray = None


def prepare_segment(rec, seconds, input_type):
    """Truncate and normalise one segment's channels for ``input_type``."""
    input_type = InputType.parse(input_type)
    beats = detect_beats(rec.ppg)
    ppg = min_max_normalize(truncate_to_cycles(rec.ppg, seconds, beats)).samples
    sd = feats = None
    if input_type is InputType.SDPPG:
        full = second_derivative(bandpass(rec.ppg))
        start = int(beats.feet[0])
        sd = min_max_normalize(full.with_samples(full.samples[start : start + len(ppg)])).samples
        sd = sd.astype(np.float32)
    elif input_type is InputType.FEAT:
        feats = segment_features(rec.ppg, beats).as_array()
    return PreparedSegment(ppg.astype(np.float32), sd, feats)


class SegmentCache:
    """Memoises :func:`prepare_segment`; failures are cached as exceptions."""

    def __init__(self, seconds, input_type):
        self.seconds = seconds
        self.input_type = InputType.parse(input_type)
        self._store = {}

    def get(self, rec):
        key = (rec.patient_id, rec.index)
        if key not in self._store:
            try:
                self._store[key] = prepare_segment(rec, self.seconds, self.input_type)
            except SignalError as exc:
                self._store[key] = exc
        out = self._store[key]
        if isinstance(out, Exception):
            raise out
        return out

    def ok(self, rec):
        try:
            self.get(rec)
            return True
        except SignalError:
            return False

    def failures(self):
        return {k: f"{type(v).__name__}: {v}" for k, v in self._store.items()
                if isinstance(v, Exception)}


@dataclass
class Example:
    x: np.ndarray
    aux: np.ndarray
    y: int
    meta: tuple


def _aux(seg_i, seg_j, rec_i, input_type, include_initial_bp, bp_type, bp_scale=BP_SCALE):
    parts = []
    if input_type is InputType.FEAT:
        parts += [seg_i.features * FEATURE_SCALE, seg_j.features * FEATURE_SCALE]
    if include_initial_bp:
        parts.append([rec_i.bp(bp_type) / bp_scale])
    if not parts:
        return np.zeros(0, dtype=np.float32)
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts]).astype(np.float32)


def _x(seg_i, seg_j, input_type):
    chans = [seg_i.ppg, seg_j.ppg]
    if input_type is InputType.SDPPG:
        chans += [seg_i.sdppg, seg_j.sdppg]
    return np.stack(chans).astype(np.float32)


def assemble_example(pair, segments, input_type, seconds, include_initial_bp,
                     bp_type=BpType.MBP, cache=None):
    """Build the :class:`Example` for one labelled pair.

    ``segments`` maps 1-based segment position to :class:`SegmentRecord`
    for the pair's patient.
    """
    input_type = InputType.parse(input_type)
    bp_type = BpType.parse(bp_type)
    cache = cache or SegmentCache(seconds, input_type)
    rec_i, rec_j = segments[pair.i], segments[pair.i + pair.j]
    seg_i, seg_j = cache.get(rec_i), cache.get(rec_j)
    return Example(
        x=_x(seg_i, seg_j, input_type),
        aux=_aux(seg_i, seg_j, rec_i, input_type, include_initial_bp, bp_type),
        y=int(pair.label[bp_type]),
        meta=(pair.patient_id, pair.i, pair.j),
    )


# -- pair tables ---------------------------------------------------------------


@dataclass
class PairTable:
    """All (i, j) pairs of a set of patients as flat arrays.

    ``i`` and ``j`` are 1-based positions within each patient's ordered
    segment list; ``delta[t]`` and ``initial[t]`` hold ΔBP and BP_i per type.
    """

    patient_id: np.ndarray
    i: np.ndarray
    j: np.ndarray
    delta: dict
    initial: dict

    def __len__(self):
        return len(self.i)

    def labels(self, bp_type, threshold):
        return classify_deltas(self.delta[BpType.parse(bp_type)], threshold)

    def subset(self, ids):
        ids = np.asarray(ids)
        return PairTable(
            self.patient_id[ids], self.i[ids], self.j[ids],
            {t: v[ids] for t, v in self.delta.items()},
            {t: v[ids] for t, v in self.initial.items()},
        )

    def pair(self, k, bp_type=None, threshold=None):
        """Row ``k`` as a :class:`ChangePair` (labelled when a threshold is given)."""
        delta = {t: float(v[k]) for t, v in self.delta.items()}
        label, th = {}, {}
        if bp_type is not None:
            t = BpType.parse(bp_type)
            label[t] = ChangeLabel(int(classify_deltas([delta[t]], threshold)[0]))
            th[t] = float(threshold)
        return ChangePair(str(self.patient_id[k]), int(self.i[k]), int(self.j[k]), delta, label, th)


def pair_table(patients, usable=None):
    """Pair table for ``{patient_id: ordered records}``.

    When ``usable`` (a predicate on records) is given, pairs touching a
    rejected segment are left out.
    """
    pids, ii, jj = [], [], []
    delta = {t: [] for t in BpType}
    initial = {t: [] for t in BpType}
    for pid, recs in patients.items():
        if len(recs) < 2:
            continue
        i, j = pair_index_arrays(len(recs))
        if usable is not None:
            ok = np.array([usable(r) for r in recs])
            keep = ok[i - 1] & ok[i + j - 1]
            i, j = i[keep], j[keep]
        for t in BpType:
            series = np.array([r.bp(t) for r in recs])
            delta[t].append(series[i + j - 1] - series[i - 1])
            initial[t].append(series[i - 1])
        pids.append(np.full(len(i), pid, dtype=object))
        ii.append(i)
        jj.append(j)

    def cat(chunks, dtype):
        return np.concatenate(chunks).astype(dtype) if chunks else np.zeros(0, dtype=dtype)

    return PairTable(
        cat(pids, object), cat(ii, np.int64), cat(jj, np.int64),
        {t: cat(v, np.float64) for t, v in delta.items()},
        {t: cat(v, np.float64) for t, v in initial.items()},
    )


# -- example sets ----------------------------------------------------------------


@dataclass
class ExampleSet:
    """Stacked examples plus the settings that produced them."""

    x: np.ndarray
    aux: np.ndarray
    y: np.ndarray
    meta: list
    input_type: InputType
    seconds: int
    bp_type: BpType
    threshold: float
    include_initial_bp: bool
    dropped: int = 0
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.y)

    def __getitem__(self, k):
        return Example(self.x[k], self.aux[k], int(self.y[k]), self.meta[k])

    def subset(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        return ExampleSet(self.x[ids], self.aux[ids], self.y[ids], [self.meta[k] for k in ids],
                          self.input_type, self.seconds, self.bp_type, self.threshold,
                          self.include_initial_bp, 0, dict(self.info))

    def label_counts(self):
        return np.bincount(self.y, minlength=3)

    def settings(self):
        return {
            "input_type": self.input_type.value,
            "seconds": self.seconds,
            "bp_type": self.bp_type.value,
            "threshold": self.threshold,
            "include_initial_bp": self.include_initial_bp,
        }


def assemble(table, ids, patients, input_type, seconds, bp_type, threshold,
             include_initial_bp=True, cache=None, bp_scale=BP_SCALE):
    """Stack the examples for ``table`` rows ``ids``; unusable pairs are dropped and counted."""
    input_type = InputType.parse(input_type)
    bp_type = BpType.parse(bp_type)
    cache = cache or SegmentCache(seconds, input_type)
    labels = table.labels(bp_type, threshold)
    xs, auxs, ys, meta = [], [], [], []
    dropped = 0
    for k in np.asarray(ids, dtype=np.int64):
        recs = patients[table.patient_id[k]]
        i, j = int(table.i[k]), int(table.j[k])
        rec_i, rec_j = recs[i - 1], recs[i + j - 1]
        try:
            seg_i, seg_j = cache.get(rec_i), cache.get(rec_j)
        except SignalError:
            dropped += 1
            continue
        xs.append(_x(seg_i, seg_j, input_type))
        auxs.append(_aux(seg_i, seg_j, rec_i, input_type, include_initial_bp, bp_type, bp_scale))
        ys.append(int(labels[k]))
        meta.append((str(table.patient_id[k]), i, j))
    n_aux = input_type.n_features + (1 if include_initial_bp else 0)
    length = int(round(seconds * next(iter(patients.values()))[0].ppg.fs))
    x = np.stack(xs) if xs else np.zeros((0, input_type.channels, length), np.float32)
    aux = np.stack(auxs) if auxs else np.zeros((0, n_aux), np.float32)
    return ExampleSet(x, aux.reshape(len(ys), n_aux), np.asarray(ys, dtype=np.int64), meta,
                      input_type, seconds, bp_type, float(threshold), include_initial_bp, dropped)


# -- sampling and splits ----------------------------------------------------------


def balanced_sample(labels, per_class, seed):
    """Draw ``per_class`` row ids of every label without replacement.

    Returns the ids sorted ascending, so the output depends only on
    ``labels``, ``per_class`` and ``seed``.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    out = []
    for lab in ChangeLabel:
        cand = np.nonzero(labels == int(lab))[0]
        if len(cand) < per_class:
            raise InsufficientClassCount(lab.title, len(cand), per_class)
        out.append(rng.choice(cand, size=per_class, replace=False))
    return np.sort(np.concatenate(out))


def kfold(ids, k=5, seed=0):
    """Shuffle ``ids`` and cut them into ``k`` folds whose sizes differ by at most one."""
    ids = np.asarray(ids)
    if len(ids) < k:
        raise TooFewExamples(f"{len(ids)} ids cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(len(ids))
    return [np.sort(ids[part]) for part in np.array_split(perm, k)]


def split_train_val(ids, fraction=0.8, seed=0):
    """Random train/validation split by id; returns (train, val)."""
    ids = np.asarray(ids)
    if len(ids) < 2:
        raise TooFewExamples("need at least two ids to split")
    perm = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(round(fraction * len(ids)))
    n_train = min(max(n_train, 1), len(ids) - 1)
    return np.sort(ids[perm[:n_train]]), np.sort(ids[perm[n_train:]])


@dataclass
class DatasetSplit:
    train: np.ndarray
    val: np.ndarray
    folds: list

    def fold(self, k):
        """(train, val) with fold ``k`` held out."""
        val = self.folds[k]
        train = np.sort(np.concatenate([f for m, f in enumerate(self.folds) if m != k]))
        return train, val


def make_split(ids, k=5, seed=0):
    """Five-fold partition; fold 0 is the default 80/20 validation split."""
    folds = kfold(ids, k, seed)
    train = np.sort(np.concatenate(folds[1:]))
    return DatasetSplit(train=train, val=folds[0], folds=folds)


def split_patients(patient_ids, n_train, n_test1, n_test2, seed=0):
    """Disjoint patient cohorts ``{"train", "test1", "test2"}`` drawn at random."""
    pids = sorted(patient_ids)
    need = n_train + n_test1 + n_test2
    if len(pids) < need:
        raise TooFewExamples(f"{len(pids)} patients, need {need}")
    perm = np.random.default_rng(seed).permutation(len(pids))
    chosen = [pids[k] for k in perm]
    return {
        "train": sorted(chosen[:n_train]),
        "test1": sorted(chosen[n_train : n_train + n_test1]),
        "test2": sorted(chosen[n_train + n_test1 : need]),
    }


def check_disjoint(**cohorts):
    """Raise :class:`PatientOverlap` if any patient id is in two cohorts."""
    seen = {}
    for role, pids in cohorts.items():
        for pid in pids:
            if pid in seen and seen[pid] != role:
                raise PatientOverlap(f"patient {pid} in both {seen[pid]} and {role}")
            seen[pid] = role


def build_test_I(patients, input_type, seconds, bp_type, threshold, per_class, seed,
                 include_initial_bp=True, exclude=(), cache=None):
    """Uniform-label held-out set: pooled balanced sample over the patients' pairs."""
    check_disjoint(test1=list(patients), other=list(exclude))
    cache = cache or SegmentCache(seconds, input_type)
    table = pair_table(patients, usable=cache.ok)
    ids = balanced_sample(table.labels(bp_type, threshold), per_class, seed)
    return assemble(table, ids, patients, input_type, seconds, bp_type, threshold,
                    include_initial_bp, cache)


def build_test_II(patients, input_type, seconds, bp_type, threshold, include_initial_bp=True,
                  exclude=(), cache=None):
    """Every enumerable pair of the given patients, natural label balance kept."""
    check_disjoint(test2=list(patients), other=list(exclude))
    cache = cache or SegmentCache(seconds, input_type)
    table = pair_table(patients)
    out = assemble(table, np.arange(len(table)), patients, input_type, seconds, bp_type,
                   threshold, include_initial_bp, cache)
    return out


# -- manifests ---------------------------------------------------------------------


def write_manifest(examples, prefix, extra=None):
    """Write ``prefix.ndjson`` (header + one descriptor per example) and ``prefix.bin``.

    The sidecar is ``b"BPSHIFT1"``, then u32 example count, channels and
    length, then float32 little-endian waveform blocks in example order.
    """
    n = len(examples)
    _, c, length = examples.x.shape
    header = {"header": dict(examples.settings(), n_examples=n, channels=c, length=length,
                             dropped=examples.dropped, label_counts=examples.label_counts().tolist(),
                             **(extra or {}))}
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    for k in range(n):
        pid, i, j = examples.meta[k]
        lines.append(json.dumps({
            "id": k, "patient_id": pid, "i": int(i), "j": int(j),
            "label": ChangeLabel(int(examples.y[k])).title,
            "aux": [float(v) for v in examples.aux[k]],
        }, separators=(",", ":")))
    with open(f"{prefix}.ndjson", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(f"{prefix}.bin", "wb") as fh:
        fh.write(SIDECAR_MAGIC + struct.pack("<III", n, c, length))
        fh.write(examples.x.astype("<f4").tobytes())


def read_manifest(prefix):
    """Inverse of :func:`write_manifest`."""
    with open(f"{prefix}.ndjson", encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    header, rows = rows[0]["header"], rows[1:]
    with open(f"{prefix}.bin", "rb") as fh:
        blob = fh.read()
    if blob[:8] != SIDECAR_MAGIC:
        raise ValueError("bad dataset sidecar magic")
    n, c, length = struct.unpack("<III", blob[8:20])
    x = np.frombuffer(blob[20:], dtype="<f4").reshape(n, c, length).astype(np.float32)
    n_aux = len(rows[0]["aux"]) if rows else 0
    return ExampleSet(
        x=x,
        aux=np.array([r["aux"] for r in rows], dtype=np.float32).reshape(n, n_aux),
        y=np.array([int(ChangeLabel.parse(r["label"])) for r in rows], dtype=np.int64),
        meta=[(r["patient_id"], r["i"], r["j"]) for r in rows],
        input_type=InputType.parse(header["input_type"]),
        seconds=header["seconds"],
        bp_type=BpType.parse(header["bp_type"]),
        threshold=header["threshold"],
        include_initial_bp=header["include_initial_bp"],
        dropped=header.get("dropped", 0),
    )
