"""sdPPG a-e wave detection and the five waveform features.

Feature formulas, with amplitudes a..e and times T_b, T_c, T_d::

    b_over_a = b / a
    slope_bc = (b - c) / (T_b - T_c)
    slope_bd = (b - d) / (T_b - T_d)
    agi      = (b - c - d - e) / a
    agi_mod  = (b - c - d) / a

``agi`` keeps the sign pattern above even though some references use
``(b - c + d - e) / a``.
"""

from dataclasses import astuple, dataclass, fields

import numpy as np

from .errors import DegenerateTiming, FiducialNotFound, NoValidBeats
from .signal_core import bandpass, detect_beats, second_derivative

#: The a wave must peak within this leading fraction of the beat.
A_WINDOW = 0.30
#: Extremum pairs closer than this fraction of the beat's range are merged away.
MIN_SWING = 0.01

FEATURE_NAMES = ("b_over_a", "slope_bc", "slope_bd", "agi", "agi_mod")


@dataclass(frozen=True)
class SdppgFiducials:
    """Amplitudes of the a-e waves and their times (s) from beat onset."""

    a: float
    b: float
    c: float
    d: float
    e: float
    t_a: float
    t_b: float
    t_c: float
    t_d: float
    t_e: float
    onset: int = 0

    def scaled(self, k):
        return SdppgFiducials(self.a * k, self.b * k, self.c * k, self.d * k, self.e * k,
                              self.t_a, self.t_b, self.t_c, self.t_d, self.t_e, self.onset)


@dataclass(frozen=True)
class FeatureVector:
    b_over_a: float
    slope_bc: float
    slope_bd: float
    agi: float
    agi_mod: float

    def as_array(self):
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, arr):
        return cls(*(float(v) for v in arr))

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _extrema(y):
    """Alternating local extrema as a list of (index, +1 max / -1 min)."""
    dy = np.diff(y)
    nz = np.nonzero(dy)[0]
    if len(nz) < 2:
        return []
    out = []
    # Walk the non-zero slopes so plateaus resolve to their first sample.
    prev_sign = np.sign(dy[nz[0]])
    for k in nz[1:]:
        s = np.sign(dy[k])
        if s != prev_sign:
            # Extremum sits at the start of the plateau preceding the sign change.
            j = k
            while j > 0 and dy[j - 1] == 0:
                j -= 1
            out.append((j, 1 if prev_sign > 0 else -1))
            prev_sign = s
    return out


def _prune(ext, y, min_swing):
    """Drop adjacent extremum pairs whose amplitude swing is below ``min_swing``."""
    ext = list(ext)
    changed = True
    while changed and len(ext) >= 2:
        changed = False
        swings = [abs(y[ext[k + 1][0]] - y[ext[k][0]]) for k in range(len(ext) - 1)]
        k = int(np.argmin(swings))
        if swings[k] < min_swing:
            del ext[k : k + 2]
            changed = True
    return ext


def _refine(y, k, fs):
    """Parabolic interpolation of an extremum at sample ``k``: (time s, amplitude)."""
    if 0 < k < len(y) - 1:
        y0, y1, y2 = y[k - 1], y[k], y[k + 1]
        denom = y0 - 2.0 * y1 + y2
        if denom != 0:
            delta = 0.5 * (y0 - y2) / denom
            if abs(delta) <= 1.0:
                return (k + delta) / fs, y1 - 0.25 * (y0 - y2) * delta
    return k / fs, float(y[k])


def locate_fiducials(sdppg_beat, beat_onset=0):
    """Find the a-e waves in one foot-to-foot sdPPG beat.

    a is the first local maximum in the leading 30% of the beat that reaches
    half of that window's peak; b is the next minimum. The extrema after b
    are taken as c, d, e in order. A lone maximum after b means the c/d pair
    collapsed into an inflection, which is reported as a missing c.

    Parameters
    ----------
    sdppg_beat : SampledSignal
        Second-derivative PPG spanning exactly one beat.
    beat_onset : int
        Index of the beat start in the parent signal; stored, not used for timing.

    Raises
    ------
    FiducialNotFound
        With ``which`` set to the first wave that could not be located.
    """
    y = sdppg_beat.samples
    fs = sdppg_beat.fs
    n = len(y)
    if n < 5:
        raise FiducialNotFound("a", "beat too short")
    swing = MIN_SWING * float(y.max() - y.min())
    ext = _prune(_extrema(y), y, swing)

    a_limit = int(np.floor(A_WINDOW * n))
    head = y[: a_limit + 1]
    a_idx = None
    for pos, (k, kind) in enumerate(ext):
        if k > a_limit:
            break
        if kind == 1 and y[k] > 0 and y[k] >= 0.5 * head.max():
            a_idx = pos
            break
    if a_idx is None:
        raise FiducialNotFound("a")
    rest = ext[a_idx + 1 :]
    if not rest or rest[0][1] != -1:
        raise FiducialNotFound("b")
    b = rest[0]
    after_b = rest[1:4]
    if len(after_b) <= 1:
        raise FiducialNotFound("c")
    if len(after_b) == 2:
        raise FiducialNotFound("e")
    picks = [ext[a_idx], b] + after_b
    vals = [_refine(y, k, fs) for k, _ in picks]
    (ta, a), (tb, bv), (tc, c), (td, d), (te, e) = vals
    if not a > 0:
        raise FiducialNotFound("a", "a wave is not positive")
    if not bv < 0:
        raise FiducialNotFound("b", "b wave is not negative")
    return SdppgFiducials(a, bv, c, d, e, ta, tb, tc, td, te, int(beat_onset))


def extract_features(fid):
    """Compute the five sdPPG features from located fiducials."""
    if fid.t_b == fid.t_c or fid.t_b == fid.t_d:
        raise DegenerateTiming("T_b coincides with T_c or T_d")
    return FeatureVector(
        b_over_a=fid.b / fid.a,
        slope_bc=(fid.b - fid.c) / (fid.t_b - fid.t_c),
        slope_bd=(fid.b - fid.d) / (fid.t_b - fid.t_d),
        agi=(fid.b - fid.c - fid.d - fid.e) / fid.a,
        agi_mod=(fid.b - fid.c - fid.d) / fid.a,
    )


def beat_features(sdppg, feet):
    """Per-beat features for every foot-to-foot beat; failures map to None."""
    out = []
    for f0, f1 in zip(feet[:-1], feet[1:]):
        beat = sdppg.with_samples(sdppg.samples[f0:f1])
        try:
            out.append(extract_features(locate_fiducials(beat, f0)))
        except (FiducialNotFound, DegenerateTiming):
            out.append(None)
    return out


def features_from_beats(sdppg, feet):
    """Mean feature vector over beats with valid fiducials."""
    valid = [fv.as_array() for fv in beat_features(sdppg, feet) if fv is not None]
    if not valid:
        raise NoValidBeats(f"none of {len(feet) - 1} beats yielded fiducials")
    return FeatureVector.from_array(np.mean(valid, axis=0))


def segment_sdppg(ppg):
    """Band-passed sdPPG scaled to unit peak magnitude."""
    sd = second_derivative(bandpass(ppg))
    peak = np.abs(sd.samples).max()
    if peak == 0:
        return sd
    return sd.with_samples(sd.samples / peak)


def segment_features(ppg, beats=None):
    """Average sdPPG features over all complete beats of a PPG segment."""
    if beats is None:
        beats = detect_beats(ppg)
    return features_from_beats(segment_sdppg(ppg), beats.feet)
