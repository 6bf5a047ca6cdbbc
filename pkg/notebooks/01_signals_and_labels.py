"""Walk through one synthetic patient: beats, BP summaries, sdPPG features, labels.

Run with ``python notebooks/01_signals_and_labels.py``; it takes a few seconds.
"""

from collections import Counter

import numpy as np

from bpshift.fiducials import segment_features
from bpshift.ingest import records_from_rows
from bpshift.labeling import BpType, ChangeLabel, label_patient
from bpshift.signal_core import SampledSignal, detect_beats, segment_bp_summary
from bpshift.synth import gen_patient, preset

# A patient from the "learnable" preset: 30 ten-second segments whose PPG
# morphology follows the patient's slowly wandering blood pressure.
cfg = preset("learnable", n_patients=1, segments_per_patient=30, seed=4)
rows, truth = gen_patient(cfg, 0)
print(f"patient {truth['patient_id']}: {len(rows)} segments at {cfg.fs:g} Hz")

# Beat detection on the arterial trace gives complete foot-to-foot beats.
# SBP and DBP are the means of per-beat maxima and minima; MBP follows
# from them.
abp = SampledSignal(rows[0]["abp"], rows[0]["fs"])
beats = detect_beats(abp)
sbp, dbp, mbp = segment_bp_summary(abp)
print(f"segment 1: {len(beats.feet) - 1} complete beats, "
      f"SBP {sbp:.1f} / DBP {dbp:.1f} / MBP {mbp:.1f} mmHg "
      f"(generator: {truth['segments'][0]['sbp']:.1f} / {truth['segments'][0]['dbp']:.1f})")

# The five second-derivative features, averaged over the beats where the
# a-e waves could all be found.
ppg = SampledSignal(rows[0]["ppg"], rows[0]["fs"])
features = segment_features(ppg)
print("sdPPG features:", {k: round(v, 3) for k, v in features.to_dict().items()})

# Every ordered pair of segments (i, i + j) becomes one labelled example.
records, dropped = records_from_rows(rows)
pairs = label_patient(records, "mbp", 5.0)
counts = Counter(ChangeLabel(p.label[BpType.MBP]).title for p in pairs)
print(f"{len(pairs)} pairs from {len(records)} segments; MBP labels at 5 mmHg: {dict(counts)}")

# Larger offsets j give larger BP changes, so Stable dominates short gaps.
deltas = np.array([p.delta[BpType.MBP] for p in pairs])
offsets = np.array([p.j for p in pairs])
for lo, hi in ((1, 5), (6, 15), (16, 29)):
    sel = (offsets >= lo) & (offsets <= hi)
    print(f"  j in [{lo:2d}, {hi:2d}]: mean |dMBP| {np.abs(deltas[sel]).mean():5.1f} mmHg")
