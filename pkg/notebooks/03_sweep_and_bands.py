"""How accuracy moves with the threshold, and one patient's label bands.

Run with ``python notebooks/03_sweep_and_bands.py`` (about five minutes on one CPU).
"""

from bpshift.evaluation import SweepCohorts, bands_csv, label_band_export, threshold_sweep
from bpshift.pipeline import Setting, model_spec, synthetic_cohorts, train_on, training_set

cohorts = synthetic_cohorts("learnable", n_train=30, n_test1=5, n_test2=3, segments=40, seed=2)
sweep_groups = SweepCohorts(cohorts.train, cohorts.test1, cohorts.test2, "sdppg", 3, True)
spec = model_spec("encoder", "sdppg", 3, cohorts.fs, True, epochs=10)


def train_fn(examples, threshold, seed):
    return train_on(examples, spec, seed).model


# One model per threshold. These budgets are small, so expect a few points
# of noise from one threshold to the next; the acceptance suite uses larger
# ones. The always-Stable baseline is the share of Stable
# pairs in Test-II: it climbs with the threshold, and a useful model has to
# stay above it.
rows = threshold_sweep(sweep_groups, "mbp", train_fn, per_class=500, test_per_class=60, seed=0)
print("theta  stable-share  encoder-TestII  encoder-TestI(balanced)")
for r in rows:
    if r["status"] != "ok":
        print(f"{r['threshold']:5g}  {r['stable_fraction_test2']:12.3f}  (too few Spike/Dip pairs)")
        continue
    print(f"{r['threshold']:5g}  {r['stable_fraction_test2']:12.3f}  {r['test2']['accuracy']:14.3f}"
          f"  {r['test1']['balanced_accuracy']:10.3f}")

# Label bands: for one Test-II patient, the true and predicted label of every
# pair that starts at the first segment, as the gap to the later segment grows.
setting = Setting(input_type="sdppg", bp_type="mbp", threshold=10.0, seconds=3, per_class=500)
model = train_fn(training_set(cohorts, setting, sweep_groups.cache), 10.0, 0)
pid = next(iter(cohorts.test2))
band_rows = label_band_export(model, cohorts.test2[pid], "mbp", 10.0, "sdppg", 3)
print(f"\nlabel bands for {pid} at 10 mmHg (first 12 offsets):")
print("".join(bands_csv(band_rows).splitlines(keepends=True)[:13]))
