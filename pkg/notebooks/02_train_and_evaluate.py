"""Train the Encoder and the MLP on a small synthetic cohort and compare them.

Run with ``python notebooks/02_train_and_evaluate.py`` (about two minutes on
one CPU). The acceptance suite runs the same comparison at full desk scale.
"""

from bpshift.pipeline import Caches, Setting, run, synthetic_cohorts

# Patient-disjoint groups: the model never sees a Test-I or Test-II patient
# while training.
cohorts = synthetic_cohorts("learnable", n_train=20, n_test1=5, n_test2=3, segments=40, seed=0)
print({role: len(ids) for role, ids in cohorts.ids().items()})

# PPG plus its second derivative, 3-second windows, MBP change threshold of
# 20 mmHg, and a class-balanced sample of 500 pairs per class.
setting = Setting(input_type="sdppg", bp_type="mbp", threshold=20.0, seconds=3, per_class=500,
                  test_per_class=150, seed=0)
caches = Caches()  # prepared segments are shared between the two models

for arch in ("encoder", "mlp"):
    result = run(cohorts, arch, setting, spec_overrides={"epochs": 10}, caches=caches)
    print(f"\n{arch}: trained {len(result.result.history)} epochs, "
          f"kept epoch {result.result.best_epoch}")
    for name, report in result.reports.items():
        # Test-I is class-balanced; Test-II keeps every pair of its patients,
        # so Stable dominates it and plain accuracy reads higher.
        print(f"  {name}: accuracy {report.accuracy:.3f}, balanced {report.balanced_accuracy:.3f}, "
              f"macro F1 {report.macro_f1:.3f}, n = {report.n}")
        print("    confusion (rows true Spike/Stable/Dip):", report.confusion)
