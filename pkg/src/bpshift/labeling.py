"""BP-change enumeration and Spike/Stable/Dip labelling.

Segment indices are 1-based at this module's boundary: for a patient with N
segments the pair (i, j) compares segment i with segment i + j, where
``1 <= i <= N - 1`` and ``1 <= j <= N - i``.
"""

from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from .errors import IndexOutOfRange, TooFewSegments


class BpType(str, Enum):
    SBP = "sbp"
    DBP = "dbp"
    MBP = "mbp"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown BP type {value!r}; choose from sbp, dbp, mbp") from None


class ChangeLabel(IntEnum):
    """Class index order matches the model's logit order."""

    SPIKE = 0
    STABLE = 1
    DIP = 2

    @property
    def title(self):
        return self.name.capitalize()

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        return cls[str(value).upper()]


THRESHOLD_GRID = {
    BpType.SBP: tuple(range(5, 46, 5)),
    BpType.DBP: tuple(range(5, 36, 5)),
    BpType.MBP: tuple(range(5, 41, 5)),
}

DEFAULT_THRESHOLDS = {BpType.SBP: 30.0, BpType.DBP: 15.0, BpType.MBP: 20.0}


@dataclass(frozen=True)
class ChangePair:
    """BP change between segments i and i + j of one patient (1-based)."""

    patient_id: str
    i: int
    j: int
    delta: dict
    label: dict = field(default_factory=dict)
    threshold: dict = field(default_factory=dict)

    @property
    def key(self):
        return (self.patient_id, self.i, self.j)


def delta_bp(series, i, j):
    """``series[i + j] - series[i]`` with 1-based ``i``."""
    n = len(series)
    if not (1 <= i <= n - 1) or not (1 <= j <= n - i):
        raise IndexOutOfRange(f"(i={i}, j={j}) invalid for {n} readings")
    return series[i + j - 1] - series[i - 1]


def enumerate_pairs(n_segments):
    """All (i, j) pairs in lexicographic order; N(N-1)/2 of them."""
    if n_segments < 2:
        raise TooFewSegments(f"need >= 2 segments, got {n_segments}")
    return [(i, j) for i in range(1, n_segments) for j in range(1, n_segments - i + 1)]


def pair_index_arrays(n_segments):
    """Vectorised :func:`enumerate_pairs`: 1-based ``i`` and ``j`` arrays."""
    if n_segments < 2:
        raise TooFewSegments(f"need >= 2 segments, got {n_segments}")
    i, k = np.triu_indices(n_segments, k=1)
    return i + 1, k - i


def classify_change(delta, threshold):
    """Spike if ``delta > threshold``, Dip if ``delta < -threshold``, else Stable."""
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    if delta > threshold:
        return ChangeLabel.SPIKE
    if delta < -threshold:
        return ChangeLabel.DIP
    return ChangeLabel.STABLE


def classify_deltas(deltas, threshold):
    """Array version of :func:`classify_change` returning label codes."""
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    deltas = np.asarray(deltas, dtype=np.float64)
    out = np.full(deltas.shape, int(ChangeLabel.STABLE), dtype=np.int64)
    out[deltas > threshold] = int(ChangeLabel.SPIKE)
    out[deltas < -threshold] = int(ChangeLabel.DIP)
    return out


def _ordered(segments):
    segments = sorted(segments, key=lambda s: s.index)
    if len(segments) < 2:
        raise TooFewSegments(f"need >= 2 segments, got {len(segments)}")
    pids = {s.patient_id for s in segments}
    if len(pids) != 1:
        raise ValueError(f"segments span several patients: {sorted(pids)}")
    return segments


def label_patient(segments, bp_type, threshold):
    """One labelled :class:`ChangePair` per (i, j) for a single patient.

    Segments are ordered by their ``index`` field; position in that order is
    the 1-based ``i`` used in the pairs. Deltas for all three BP types are
    recorded, the label only for ``bp_type``.
    """
    return label_patient_multi(segments, {BpType.parse(bp_type): threshold})


def label_patient_multi(segments, thresholds):
    """Like :func:`label_patient` for several BP types at once."""
    segments = _ordered(segments)
    thresholds = {BpType.parse(k): float(v) for k, v in thresholds.items()}
    series = {t: [s.bp(t) for s in segments] for t in BpType}
    pid = segments[0].patient_id
    pairs = []
    for i, j in enumerate_pairs(len(segments)):
        delta = {t: delta_bp(series[t], i, j) for t in BpType}
        label = {t: classify_change(delta[t], th) for t, th in thresholds.items()}
        pairs.append(ChangePair(pid, i, j, delta, label, dict(thresholds)))
    return pairs
