"""Waveform containers and per-segment signal processing.

Everything here is a pure function of its inputs. Signals are stored as
read-only float64 arrays so a :class:`SampledSignal` can be shared freely.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import signal as ss

from .errors import (
    ConstantSignal,
    InsufficientLength,
    InvalidSignal,
    NoBeatsFound,
    SignalTooShort,
)

#: Input lengths (seconds) the models are trained on.
ALLOWED_SECONDS = (3, 5, 7)

DEFAULT_MIN_HR = 30.0
DEFAULT_MAX_HR = 200.0
LOWPASS_HZ = 8.0
BANDPASS_HZ = (0.5, 8.0)


@dataclass(frozen=True)
class SampledSignal:
    """Uniformly sampled real waveform.

    Parameters
    ----------
    samples : array_like
        Sample values (arbitrary units for PPG, mmHg for ABP).
    fs : float
        Sampling rate in Hz.
    """

    samples: np.ndarray
    fs: float

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise InvalidSignal(f"samples must be 1-D, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "fs", float(self.fs))
        if not self.fs > 0:
            raise InvalidSignal(f"fs must be positive, got {self.fs}")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.fs

    def validate(self):
        """Raise :class:`InvalidSignal` unless samples are non-empty and finite."""
        if len(self) == 0:
            raise InvalidSignal("empty signal")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidSignal("signal contains NaN or Inf")
        return self

    def with_samples(self, samples):
        return SampledSignal(samples, self.fs)


@dataclass(frozen=True)
class BeatMarkers:
    """Sample indices of pulse onsets (feet) and systolic peaks."""

    feet: np.ndarray
    peaks: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "feet", np.asarray(self.feet, dtype=np.int64))
        object.__setattr__(self, "peaks", np.asarray(self.peaks, dtype=np.int64))


def mean_bp(sbp, dbp):
    """Mean blood pressure from systolic and diastolic values."""
    return (sbp + 2.0 * dbp) / 3.0


@dataclass(frozen=True)
class SegmentRecord:
    """One 10-second window with its scalar BP summaries.

    ``mbp`` is always derived from ``sbp`` and ``dbp``; passing a value that
    disagrees raises ``ValueError``.
    """

    patient_id: str
    index: int
    ppg: SampledSignal
    sbp: float
    dbp: float
    mbp: Optional[float] = field(default=None)

    def __post_init__(self):
        sbp, dbp = float(self.sbp), float(self.dbp)
        if not (sbp > dbp > 0):
            raise ValueError(f"need sbp > dbp > 0, got sbp={sbp}, dbp={dbp}")
        mbp = mean_bp(sbp, dbp)
        if self.mbp is not None and abs(float(self.mbp) - mbp) > 1e-9:
            raise ValueError(f"mbp {self.mbp} inconsistent with (sbp + 2 dbp)/3 = {mbp}")
        object.__setattr__(self, "sbp", sbp)
        object.__setattr__(self, "dbp", dbp)
        object.__setattr__(self, "mbp", mbp)
        object.__setattr__(self, "index", int(self.index))
        object.__setattr__(self, "patient_id", str(self.patient_id))

    def bp(self, bp_type):
        """BP value for a :class:`~bpshift.labeling.BpType` (or its name)."""
        name = getattr(bp_type, "value", bp_type)
        return {"sbp": self.sbp, "dbp": self.dbp, "mbp": self.mbp}[str(name).lower()]


def _as_signal(sig, fs=None):
    if isinstance(sig, SampledSignal):
        return sig
    if fs is None:
        raise TypeError("fs is required when passing a raw array")
    return SampledSignal(sig, fs)


def lowpass(sig, cutoff=LOWPASS_HZ, order=4):
    """Zero-phase Butterworth low-pass filter."""
    sig = _as_signal(sig)
    cutoff = min(cutoff, 0.45 * sig.fs)
    sos = ss.butter(order, cutoff, btype="lowpass", fs=sig.fs, output="sos")
    return sig.with_samples(ss.sosfiltfilt(sos, sig.samples))


def bandpass(sig, band=BANDPASS_HZ, order=2):
    """Zero-phase Butterworth band-pass (``order`` per edge, 2*order overall)."""
    sig = _as_signal(sig)
    lo, hi = band
    hi = min(hi, 0.45 * sig.fs)
    sos = ss.butter(order, [lo, hi], btype="bandpass", fs=sig.fs, output="sos")
    return sig.with_samples(ss.sosfiltfilt(sos, sig.samples))


def _longest_valid_run(feet, lo, hi):
    """Longest run of consecutive feet whose spacing lies in [lo, hi]."""
    best = (0, 1)
    start = 0
    for k in range(1, len(feet)):
        gap = feet[k] - feet[k - 1]
        if not (lo <= gap <= hi):
            start = k
        if k + 1 - start > best[1] - best[0]:
            best = (start, k + 1)
    return best


def detect_beats(sig, min_hr=DEFAULT_MIN_HR, max_hr=DEFAULT_MAX_HR):
    """Locate pulse onsets and systolic peaks.

    The signal is low-passed at 8 Hz; systolic peaks are local maxima with
    prominence above 30% of the robust signal range, separated by at least
    one shortest allowed beat. Each foot is the minimum between the previous
    peak and the current one. A foot that falls on the first sample is kept
    only when its level matches the interior feet, so a recording that
    starts mid-upstroke does not yield a partial first beat.

    Parameters
    ----------
    sig : SampledSignal
        PPG or ABP waveform, at least 2 s long.
    min_hr, max_hr : float
        Heart-rate bounds in beats/min; ``20 <= min_hr < max_hr <= 220``.

    Returns
    -------
    BeatMarkers
        Feet and peaks with inter-foot spacing inside the heart-rate bounds.
    """
    if not (20 <= min_hr < max_hr <= 220):
        raise ValueError(f"heart-rate bounds out of range: [{min_hr}, {max_hr}]")
    sig.validate()
    fs = sig.fs
    if len(sig) < 2 * fs:
        raise SignalTooShort(f"need >= 2 s of signal, got {sig.duration:.2f} s")

    x = lowpass(sig).samples
    lo_pct, hi_pct = np.percentile(x, [5, 95])
    span = hi_pct - lo_pct
    if not span > 1e-12 * max(1.0, np.abs(x).max()):
        raise NoBeatsFound("signal has no oscillation")

    min_gap = fs * 60.0 / max_hr
    max_gap = fs * 60.0 / min_hr
    peaks, _ = ss.find_peaks(x, distance=max(1, int(np.floor(min_gap))), prominence=0.3 * span)
    if len(peaks) < 2:
        raise NoBeatsFound(f"found {len(peaks)} systolic peaks")

    feet = []
    for k, p in enumerate(peaks):
        start = peaks[k - 1] if k > 0 else max(0, int(p - np.ceil(max_gap)))
        feet.append(start + int(np.argmin(x[start : p + 1])))
    feet = np.asarray(feet)
    peaks = np.asarray(peaks)

    keep = feet < peaks
    if feet[0] == 0 and len(feet) > 1:
        interior = x[feet[1:]]
        if x[0] > np.median(interior) + 0.1 * span:
            keep[0] = False
    feet, peaks = feet[keep], peaks[keep]
    if len(feet) < 2:
        raise NoBeatsFound(f"found {len(feet)} pulse onsets")

    a, b = _longest_valid_run(feet, np.floor(min_gap), np.ceil(max_gap))
    feet, peaks = feet[a:b], peaks[a:b]
    if len(feet) < 2:
        raise NoBeatsFound("no two consecutive onsets within heart-rate bounds")
    return BeatMarkers(feet=feet, peaks=peaks)


def segment_bp_summary(abp, min_hr=DEFAULT_MIN_HR, max_hr=DEFAULT_MAX_HR):
    """Return ``(sbp, dbp, mbp)`` for an arterial pressure segment.

    SBP and DBP are means of per-beat maxima and minima over complete beats
    (consecutive foot pairs); partial beats at the edges are ignored.
    """
    beats = detect_beats(abp, min_hr, max_hr)
    x = abp.samples
    maxima, minima = [], []
    for f0, f1 in zip(beats.feet[:-1], beats.feet[1:]):
        beat = x[f0:f1]
        maxima.append(beat.max())
        minima.append(beat.min())
    sbp = float(np.mean(maxima))
    dbp = float(np.mean(minima))
    return sbp, dbp, mean_bp(sbp, dbp)


def second_derivative(sig):
    """Second derivative by central differences, scaled by ``fs**2``.

    Interior points use ``(s[n+1] - 2 s[n] + s[n-1]) * fs**2``; the two
    endpoints copy their nearest interior neighbour.
    """
    s = sig.samples
    if len(s) < 5:
        raise SignalTooShort(f"second derivative needs >= 5 samples, got {len(s)}")
    d2 = np.empty_like(s)
    d2[1:-1] = (s[2:] - 2.0 * s[1:-1] + s[:-2]) * sig.fs**2
    d2[0] = d2[1]
    d2[-1] = d2[-2]
    return sig.with_samples(d2)


def min_max_normalize(sig):
    """Affinely map a signal onto [0, 1]."""
    s = sig.samples
    lo, hi = s.min(), s.max()
    if hi == lo:
        raise ConstantSignal("cannot normalize a constant signal")
    out = (s - lo) / (hi - lo)
    return sig.with_samples(out)


def truncate_to_cycles(ppg, target_seconds, beats=None):
    """Cut ``target_seconds`` of signal starting at the first pulse foot.

    ``beats`` may be supplied to reuse an earlier :func:`detect_beats` call.
    """
    if target_seconds not in ALLOWED_SECONDS:
        raise ValueError(f"target_seconds must be one of {ALLOWED_SECONDS}, got {target_seconds}")
    if beats is None:
        beats = detect_beats(ppg)
    start = int(beats.feet[0])
    n = int(round(target_seconds * ppg.fs))
    if len(ppg) - start < n:
        raise InsufficientLength(
            f"{len(ppg) - start} samples after first foot at {start}, need {n}"
        )
    return ppg.with_samples(ppg.samples[start : start + n])
