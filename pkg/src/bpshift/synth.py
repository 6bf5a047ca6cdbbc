"""Synthetic paired PPG/ABP cohorts with known ground truth.

A PPG beat is the sum of three Gaussian lobes (systolic, dicrotic,
diastolic). The dicrotic lobe grows and moves earlier as mean pressure rises,
which puts the BP-change signal into PPG morphology. The ABP beat is a
raised-cosine pulse between DBP and SBP, so its per-beat extrema are exact.

Because the waveforms are analytic, the generator can report the pulse feet,
per-beat pressure extrema and sdPPG fiducials that the processing code is
expected to recover.
"""

from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from .errors import InvalidConfig
from .signal_core import mean_bp

SQRT3 = np.sqrt(3.0)

# Lobe shape at the reference pressure, in fractions of the beat period.
SYSTOLIC = (1.00, 0.22, 0.065)   # amplitude, centre, width
DICROTIC = (0.50, 0.46, 0.060)
DIASTOLIC = (0.30, 0.66, 0.110)
MBP_REF = 90.0
MBP_SCALE = 20.0
# Coupled shifts per unit of (MBP - MBP_REF) / MBP_SCALE.
DICROTIC_AMP_GAIN = 0.18
DICROTIC_SHIFT_GAIN = 0.035
SYSTOLIC_WIDTH_GAIN = 0.006
DBP_TRACKING = 0.6


@dataclass(frozen=True)
class SynthConfig:
    """Cohort generator settings.

    ``coupling`` scales every morphology-BP dependence; zero makes the PPG
    independent of pressure. ``morph_jitter`` is per-segment morphology
    noise and ``patient_spread`` the per-patient offset of the lobe shapes.
    """

    n_patients: int = 5
    segments_per_patient: int = 60
    fs: float = 125.0
    segment_seconds: float = 10.0
    hr_range: tuple = (60.0, 90.0)
    hr_sigma: float = 2.0
    hr_jitter: float = 0.02
    sbp_range: tuple = (105.0, 135.0)
    dbp_range: tuple = (60.0, 80.0)
    walk_sigma: float = 4.0
    walk_bound: float = 35.0
    event_rate: float = 0.03
    event_magnitude: tuple = (25.0, 55.0)
    event_duration: tuple = (3, 12)
    coupling: float = 1.0
    morph_jitter: float = 0.01
    patient_spread: float = 0.03
    noise_sigma: float = 0.005
    baseline_wander: float = 0.0
    seed: int = 0

    def validate(self):
        if self.n_patients < 1 or self.segments_per_patient < 1:
            raise InvalidConfig("need at least one patient and one segment")
        if self.fs <= 0 or self.segment_seconds <= 0:
            raise InvalidConfig("fs and segment_seconds must be positive")
        for name in ("hr_sigma", "hr_jitter", "walk_sigma", "walk_bound", "event_rate",
                     "coupling", "morph_jitter", "patient_spread", "noise_sigma",
                     "baseline_wander"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be >= 0")
        lo, hi = self.hr_range
        if not (40 <= lo <= hi <= 180):
            raise InvalidConfig(f"hr_range {self.hr_range} outside 40-180 bpm")
        lo, hi = self.sbp_range
        if not (80 <= lo <= hi <= 200):
            raise InvalidConfig(f"sbp_range {self.sbp_range} outside 80-200 mmHg")
        lo, hi = self.dbp_range
        if not (40 <= lo <= hi <= 120):
            raise InvalidConfig(f"dbp_range {self.dbp_range} outside 40-120 mmHg")
        if self.seed < 0:
            raise InvalidConfig("seed must be non-negative")
        return self

    def to_dict(self):
        return asdict(self)


PRESETS = {
    "oracle": dict(noise_sigma=0.0, morph_jitter=0.0, patient_spread=0.0, hr_jitter=0.0,
                   baseline_wander=0.0),
    "learnable": dict(),
    "control": dict(coupling=0.0),
}


def preset(name, **overrides):
    """Named configuration: ``oracle``, ``learnable`` or ``control``."""
    if name not in PRESETS:
        raise InvalidConfig(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(SynthConfig(**PRESETS[name]), **overrides).validate()


@dataclass(frozen=True)
class BeatShape:
    """Lobe parameters of one PPG beat; times in seconds from beat onset."""

    period: float
    amps: tuple
    centers: tuple
    widths: tuple


def beat_shape(hr, mbp, coupling=1.0, offsets=(0.0, 0.0, 0.0)):
    """Deterministic lobe layout for a heart rate and mean pressure.

    ``offsets`` perturbs (dicrotic amplitude, dicrotic centre fraction,
    systolic width fraction) and carries patient/segment variability.
    """
    period = 60.0 / hr
    m = float(np.clip((mbp - MBP_REF) / MBP_SCALE, -2.0, 2.0)) * coupling
    d_amp, d_ctr, s_wid = offsets
    amps = (SYSTOLIC[0], DICROTIC[0] + DICROTIC_AMP_GAIN * m + d_amp, DIASTOLIC[0])
    centers = (SYSTOLIC[1], DICROTIC[1] - DICROTIC_SHIFT_GAIN * m + d_ctr, DIASTOLIC[1])
    widths = (SYSTOLIC[2] - SYSTOLIC_WIDTH_GAIN * m + s_wid, DICROTIC[2], DIASTOLIC[2])
    return BeatShape(
        period=period,
        amps=tuple(float(a) for a in amps),
        centers=tuple(float(c) * period for c in centers),
        widths=tuple(float(w) * period for w in widths),
    )


def ppg_wave(t, shape):
    """PPG of one beat with onset at t=0."""
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    for a, mu, sd in zip(shape.amps, shape.centers, shape.widths):
        out += a * np.exp(-0.5 * ((t - mu) / sd) ** 2)
    return out


def ppg_wave_d2(t, shape):
    """Analytic second time-derivative of :func:`ppg_wave`."""
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    for a, mu, sd in zip(shape.amps, shape.centers, shape.widths):
        z = (t - mu) / sd
        out += a * np.exp(-0.5 * z**2) * (z**2 - 1.0) / sd**2
    return out


def abp_wave(t, period, sbp, dbp):
    """Raised-cosine pressure pulse with minimum DBP at the beat edges."""
    return dbp + (sbp - dbp) * 0.5 * (1.0 - np.cos(2.0 * np.pi * np.asarray(t) / period))


FIDUCIAL_NAMES = ("a", "b", "c", "d", "e")


def analytic_fiducials(shape, grid_hz=25_000.0):
    """Ground-truth sdPPG a-e waves of an isolated beat.

    The analytic sdPPG is evaluated on a dense grid; a is the first local
    maximum and b-e are the next four local extrema in order. Returns a
    dict with amplitudes ``a..e`` and times ``t_a..t_e`` (seconds), or None
    when the beat has fewer than five such extrema.
    """
    n = int(np.ceil(shape.period * grid_hz))
    t = np.linspace(0.0, shape.period, n, endpoint=False)
    y = ppg_wave_d2(t, shape)
    dy = np.diff(y)
    sign_change = np.nonzero(np.sign(dy[1:]) != np.sign(dy[:-1]))[0] + 1
    kinds = np.where(dy[sign_change - 1] > 0, 1, -1)   # +1 maximum, -1 minimum
    maxima = np.nonzero(kinds == 1)[0]
    if len(maxima) == 0:
        return None
    first = maxima[0]
    idx = sign_change[first : first + 5]
    if len(idx) < 5:
        return None
    out = {}
    for name, i in zip(FIDUCIAL_NAMES, idx):
        out[name] = float(y[i])
        out["t_" + name] = float(t[i])
    return out


def truth_features(fid):
    """Five sdPPG features from a fiducial dict (same layout as analytic_fiducials)."""
    a, b, c, d, e = (fid[k] for k in FIDUCIAL_NAMES)
    return {
        "b_over_a": b / a,
        "slope_bc": (b - c) / (fid["t_b"] - fid["t_c"]),
        "slope_bd": (b - d) / (fid["t_b"] - fid["t_d"]),
        "agi": (b - c - d - e) / a,
        "agi_mod": (b - c - d) / a,
    }


@dataclass
class BeatSample:
    ppg: np.ndarray
    abp: np.ndarray
    fs: float
    shape: BeatShape
    sbp: float
    dbp: float
    fiducials: Optional[dict]


def gen_beat(hr, bp_state, coupling=1.0, seed=None, fs=125.0, morph_jitter=0.0):
    """Generate one isolated beat.

    Parameters
    ----------
    hr : float
        Heart rate (bpm).
    bp_state : tuple of float
        ``(sbp, dbp)`` in mmHg.
    coupling : float
        Morphology-BP coupling gain (0 disables it).
    seed : int, optional
        Seeds the morphology jitter.
    """
    sbp, dbp = bp_state
    if not (40 <= hr <= 180) or not (sbp > dbp > 0) or coupling < 0:
        raise InvalidConfig(f"invalid beat parameters hr={hr}, bp={bp_state}, coupling={coupling}")
    rng = np.random.default_rng(seed)
    offsets = tuple(rng.normal(0.0, morph_jitter, 3) * (1.0, 0.1, 0.05))
    shape = beat_shape(hr, mean_bp(sbp, dbp), coupling, offsets)
    n = int(round(shape.period * fs))
    t = np.arange(n) / fs
    return BeatSample(
        ppg=ppg_wave(t, shape),
        abp=abp_wave(t, shape.period, sbp, dbp),
        fs=fs,
        shape=shape,
        sbp=float(sbp),
        dbp=float(dbp),
        fiducials=analytic_fiducials(shape),
    )


def bp_trajectory(cfg, rng, events=None):
    """Per-segment (SBP, DBP) series plus the list of injected events.

    The SBP offset follows a random walk reflected into
    ``[-walk_bound, walk_bound]``; Poisson events add rectangular bumps of
    random sign. DBP tracks SBP offsets at a fixed ratio.
    """
    n = cfg.segments_per_patient
    sbp0 = rng.uniform(*cfg.sbp_range)
    dbp0 = rng.uniform(*cfg.dbp_range)
    walk = np.zeros(n)
    for k in range(1, n):
        r = walk[k - 1] + rng.normal(0.0, cfg.walk_sigma)
        bound = cfg.walk_bound
        while abs(r) > bound and bound > 0:
            r = np.sign(r) * 2 * bound - r
        walk[k] = 0.0 if bound == 0 else r
    if events is None:
        events = []
        for k in range(n):
            if rng.random() < cfg.event_rate:
                mag = rng.uniform(*cfg.event_magnitude) * rng.choice([-1.0, 1.0])
                dur = int(rng.integers(cfg.event_duration[0], cfg.event_duration[1] + 1))
                events.append({"start": k, "magnitude": float(mag), "duration": dur})
    bump = np.zeros(n)
    for ev in events:
        bump[ev["start"] : ev["start"] + ev["duration"]] += ev["magnitude"]
    offset = walk + bump
    sbp = np.clip(sbp0 + offset, 80.0, 200.0)
    dbp = np.clip(dbp0 + DBP_TRACKING * offset, 40.0, 120.0)
    dbp = np.minimum(dbp, sbp - 20.0)
    return sbp, dbp, list(events)


def gen_segment(cfg, rng, hr, sbp, dbp, patient_offsets):
    """One segment of PPG and ABP plus its ground truth."""
    fs = cfg.fs
    n = int(round(cfg.segment_seconds * fs))
    t = np.arange(n) / fs
    mbp = mean_bp(sbp, dbp)
    seg_offsets = np.asarray(patient_offsets) + rng.normal(0.0, cfg.morph_jitter, 3) * (1.0, 0.1, 0.05)
    # Start mid-beat so the segment begins with a partial cycle.
    period0 = 60.0 / hr
    onset = -rng.uniform(0.0, period0)
    onsets, shapes = [], []
    while onset < cfg.segment_seconds + period0:
        beat_hr = float(np.clip(hr * (1.0 + rng.normal(0.0, cfg.hr_jitter)), 40.0, 180.0))
        shape = beat_shape(beat_hr, mbp, cfg.coupling, tuple(seg_offsets))
        onsets.append(onset)
        shapes.append(shape)
        onset += shape.period
    ppg = np.zeros(n)
    abp = np.full(n, dbp)
    for on, shape in zip(onsets, shapes):
        lo = max(0, int(np.floor((on - shape.period) * fs)))
        hi = min(n, int(np.ceil((on + 2 * shape.period) * fs)))
        if hi <= lo:
            continue
        ppg[lo:hi] += ppg_wave(t[lo:hi] - on, shape)
        blo = max(0, int(np.ceil(on * fs)))
        bhi = min(n, int(np.ceil((on + shape.period) * fs)))
        if bhi > blo:
            abp[blo:bhi] = abp_wave(t[blo:bhi] - on, shape.period, sbp, dbp)
    if cfg.baseline_wander > 0:
        f = rng.uniform(0.1, 0.3)
        ppg += cfg.baseline_wander * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    if cfg.noise_sigma > 0:
        ppg += rng.normal(0.0, cfg.noise_sigma, n)

    # Feet are the minima of the noise-free composite around each onset.
    clean = np.zeros(n)
    for on, shape in zip(onsets, shapes):
        lo = max(0, int(np.floor((on - shape.period) * fs)))
        hi = min(n, int(np.ceil((on + 2 * shape.period) * fs)))
        if hi > lo:
            clean[lo:hi] += ppg_wave(t[lo:hi] - on, shape)
    feet, beat_sbp, beat_dbp, dicrotic = [], [], [], []
    for on, shape in zip(onsets, shapes):
        c = int(round(on * fs))
        half = int(0.15 * shape.period * fs)
        lo, hi = c - half, c + half + 1
        if lo < 1 or hi > n - 1:
            continue
        feet.append(lo + int(np.argmin(clean[lo:hi])))
    for on, shape in zip(onsets, shapes):
        blo, bhi = int(np.ceil(on * fs)), int(np.ceil((on + shape.period) * fs))
        if blo >= 0 and bhi <= n:
            beat_sbp.append(float(abp[blo:bhi].max()))
            beat_dbp.append(float(abp[blo:bhi].min()))
        dicrotic.append(shape.amps[1])
    truth = {
        "onsets_s": [float(o) for o in onsets],
        "feet": feet,
        "beat_sbp": beat_sbp,
        "beat_dbp": beat_dbp,
        "dicrotic_amp": float(np.mean(dicrotic)),
        "hr": float(hr),
        "sbp": float(sbp),
        "dbp": float(dbp),
    }
    return ppg, abp, truth


def gen_patient(cfg, ordinal, events=None):
    """All segments of one patient as (rows, truth) with 1-based indices.

    The patient's generator is seeded from ``(cfg.seed, ordinal)`` so each
    patient is reproducible on its own.
    """
    rng = np.random.default_rng([cfg.seed, ordinal])
    pid = f"P{ordinal:04d}"
    hr0 = rng.uniform(*cfg.hr_range)
    offsets = rng.normal(0.0, cfg.patient_spread, 3) * (1.0, 0.1, 0.05)
    sbp, dbp, events = bp_trajectory(cfg, rng, events)
    rows, truths = [], []
    lo_hr, hi_hr = cfg.hr_range
    for k in range(cfg.segments_per_patient):
        # Independent per segment: a drifting HR would grow with the pair
        # offset j, as |ΔBP| does, and leak label information.
        hr = float(np.clip(hr0 + rng.normal(0.0, cfg.hr_sigma), lo_hr, hi_hr))
        ppg, abp, truth = gen_segment(cfg, rng, hr, sbp[k], dbp[k], offsets)
        rows.append({
            "patient_id": pid,
            "index": k + 1,
            "fs": cfg.fs,
            "ppg": ppg,
            "abp": abp,
        })
        truth.update(patient_id=pid, index=k + 1)
        truths.append(truth)
    return rows, {"patient_id": pid, "events": events, "segments": truths}


def gen_cohort(cfg):
    """Generate every patient; returns (segment rows, truth per patient)."""
    cfg.validate()
    rows, truth = [], []
    for p in range(cfg.n_patients):
        r, t = gen_patient(cfg, p)
        rows.extend(r)
        truth.append(t)
    return rows, truth
