"""Confusion-matrix metrics, threshold sweeps, label bands and report files.

Overall accuracy is ``trace / total``. Per-class precision, recall and F1
come from one-vs-rest counts; a 0/0 ratio counts as 0, so a class that is
neither present nor predicted has F1 = 0. Macro F1 is the plain mean of the
three per-class F1 values.
"""

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import SegmentCache, assemble, balanced_sample, pair_table
from .errors import EmptyEvaluation, InsufficientClassCount, TooFewSegments
from .labeling import THRESHOLD_GRID, BpType, ChangeLabel, classify_deltas
from .nn.params import atomic_write

CLASS_NAMES = tuple(lab.title for lab in ChangeLabel)


def _ratio(num, den):
    return num / den if den else 0.0


@dataclass(frozen=True)
class ConfusionMatrix:
    """3x3 counts; rows are true labels, columns predictions."""

    counts: tuple

    @classmethod
    def from_labels(cls, y_true, y_pred):
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape:
            raise ValueError("label arrays differ in length")
        cm = np.zeros((3, 3), dtype=np.int64)
        np.add.at(cm, (y_true, y_pred), 1)
        return cls.from_array(cm)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr)
        if arr.shape != (3, 3) or (arr < 0).any():
            raise ValueError("confusion matrix must be 3x3 with non-negative counts")
        return cls(tuple(tuple(int(v) for v in row) for row in arr))

    def array(self):
        return np.array(self.counts, dtype=np.int64)

    @property
    def total(self):
        return int(self.array().sum())

    def one_vs_rest(self, k):
        cm = self.array()
        tp = int(cm[k, k])
        fp = int(cm[:, k].sum()) - tp
        fn = int(cm[k, :].sum()) - tp
        return {"tp": tp, "fp": fp, "fn": fn, "tn": self.total - tp - fp - fn}


@dataclass
class EvalReport:
    accuracy: float
    balanced_accuracy: float
    precision: list
    recall: list
    f1: list
    macro_f1: float
    per_class: list
    confusion: list
    n: int
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def metrics(cm, meta=None):
    """Accuracy, per-class precision/recall/F1 and macro F1 of a confusion matrix."""
    if not isinstance(cm, ConfusionMatrix):
        cm = ConfusionMatrix.from_array(cm)
    total = cm.total
    if total == 0:
        raise EmptyEvaluation("no examples were evaluated")
    precision, recall, f1, per_class = [], [], [], []
    for k, name in enumerate(CLASS_NAMES):
        c = cm.one_vs_rest(k)
        p = _ratio(c["tp"], c["tp"] + c["fp"])
        r = _ratio(c["tp"], c["tp"] + c["fn"])
        f = _ratio(2 * p * r, p + r)
        precision.append(p)
        recall.append(r)
        f1.append(f)
        per_class.append(dict(c, label=name, precision=p, recall=r, f1=f,
                              accuracy=(c["tp"] + c["tn"]) / total))
    support = cm.array().sum(axis=1)
    present = support > 0
    balanced = float(np.mean(np.array(recall)[present]))
    return EvalReport(
        accuracy=float(np.trace(cm.array())) / total,
        balanced_accuracy=balanced,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=sum(f1) / 3.0,
        per_class=per_class,
        confusion=[list(r) for r in cm.counts],
        n=total,
        meta=dict(meta or {}),
    )


def predict_labels(model, examples):
    """Predicted class per example; ``model`` may be a callable on the set."""
    if callable(model) and not hasattr(model, "spec"):
        return np.asarray(model(examples), dtype=np.int64)
    from .training import logits_for

    return logits_for(model, examples).argmax(axis=1)


def evaluate(model, examples, meta=None):
    """Eval-mode predictions over ``examples`` summarised as an :class:`EvalReport`."""
    if len(examples) == 0:
        raise EmptyEvaluation("no examples to evaluate")
    pred = predict_labels(model, examples)
    info = dict(examples.settings())
    info.update(meta or {})
    return metrics(ConfusionMatrix.from_labels(examples.y, pred), info)


# -- threshold sweep ------------------------------------------------------------


def stable_fraction(deltas, threshold):
    """Share of pairs labelled Stable at ``threshold``."""
    return float(np.mean(classify_deltas(deltas, threshold) == int(ChangeLabel.STABLE)))


def always_stable_accuracy(deltas, threshold):
    """Accuracy of the classifier that always answers Stable (equals the Stable share)."""
    labels = classify_deltas(deltas, threshold)
    pred = np.full(len(labels), int(ChangeLabel.STABLE))
    return metrics(ConfusionMatrix.from_labels(labels, pred)).accuracy


@dataclass
class SweepCohorts:
    """Patient groups and input settings shared by every threshold of a sweep."""

    train: dict
    test1: dict
    test2: dict
    input_type: str
    seconds: int
    include_initial_bp: bool = True
    cache: SegmentCache = None

    def __post_init__(self):
        if self.cache is None:
            self.cache = SegmentCache(self.seconds, self.input_type)


def threshold_sweep(cohorts, bp_type, train_fn, grid=None, per_class=2000, test_per_class=300,
                    seed=0, reuse_model=None):
    """Relabel, resample, retrain and evaluate at every grid threshold.

    ``train_fn(train_examples, threshold, seed)`` returns a fitted model.
    Passing ``reuse_model`` skips retraining and evaluates that model at
    every threshold. A threshold whose balanced sample cannot be drawn is
    recorded with ``status = "insufficient"`` and the sweep moves on.
    """
    bp_type = BpType.parse(bp_type)
    grid = THRESHOLD_GRID[bp_type] if grid is None else grid
    c = cohorts
    train_tab = pair_table(c.train, usable=c.cache.ok)
    test1_tab = pair_table(c.test1, usable=c.cache.ok)
    test2_tab = pair_table(c.test2)
    test2_all = assemble(test2_tab, np.arange(len(test2_tab)), c.test2, c.input_type, c.seconds,
                         bp_type, grid[0], c.include_initial_bp, c.cache)
    test2_delta = example_deltas(test2_tab, test2_all, bp_type)
    rows = []
    for th in grid:
        row = {"threshold": float(th), "bp_type": bp_type.value,
               "stable_fraction_test2": stable_fraction(test2_delta, th),
               "always_stable_accuracy_test2": always_stable_accuracy(test2_delta, th)}
        try:
            tr_ids = balanced_sample(train_tab.labels(bp_type, th), per_class, seed)
            te_ids = balanced_sample(test1_tab.labels(bp_type, th), test_per_class, seed + 1)
        except InsufficientClassCount as exc:
            row.update(status="insufficient", error=str(exc))
            rows.append(row)
            continue
        train_ex = assemble(train_tab, tr_ids, c.train, c.input_type, c.seconds, bp_type, th,
                            c.include_initial_bp, c.cache)
        test1 = assemble(test1_tab, te_ids, c.test1, c.input_type, c.seconds, bp_type, th,
                         c.include_initial_bp, c.cache)
        test2 = relabel(test2_all, test2_delta, th)
        model = reuse_model if reuse_model is not None else train_fn(train_ex, th, seed)
        row.update(status="ok",
                   test1=evaluate(model, test1).to_dict(),
                   test2=evaluate(model, test2).to_dict())
        rows.append(row)
    return rows


def example_deltas(table, examples, bp_type):
    """ΔBP of each example, looked up in the pair table it was assembled from."""
    row = {(str(p), int(i), int(j)): k
           for k, (p, i, j) in enumerate(zip(table.patient_id, table.i, table.j))}
    d = table.delta[BpType.parse(bp_type)]
    return np.array([d[row[m]] for m in examples.meta], dtype=np.float64)


def relabel(examples, deltas, threshold):
    """Copy of ``examples`` labelled at a new threshold from their ΔBP values."""
    out = examples.subset(np.arange(len(examples)))
    out.y = classify_deltas(deltas, threshold).astype(np.int64)
    out.threshold = float(threshold)
    return out


# -- label bands -------------------------------------------------------------------


BAND_COLUMNS = ("patient_id", "j", "t_s", "initial_bp", "reference_bp", "true_label",
                "predicted_label")


def label_band_export(model, segments, bp_type, threshold, input_type, seconds,
                      include_initial_bp=True, cache=None):
    """Per-offset rows with i fixed to the first segment.

    ``t_s`` is ``j`` times the segment duration. Pairs whose segments
    cannot be prepared get an empty ``predicted_label``.
    """
    segments = list(segments)
    if len(segments) < 2:
        raise TooFewSegments("label bands need at least two segments")
    bp_type = BpType.parse(bp_type)
    pid = segments[0].patient_id
    patients = {pid: segments}
    table = pair_table(patients)
    first = np.nonzero(table.i == 1)[0]
    cache = cache or SegmentCache(seconds, input_type)
    examples = assemble(table, first, patients, input_type, seconds, bp_type, threshold,
                        include_initial_bp, cache)
    predicted = {}
    if len(examples):
        for m, p in zip(examples.meta, predict_labels(model, examples)):
            predicted[m[2]] = ChangeLabel(int(p)).title
    seg_s = segments[0].ppg.duration
    bp1 = segments[0].bp(bp_type)
    rows = []
    for k in first:
        j = int(table.j[k])
        ref = segments[j].bp(bp_type)
        rows.append({
            "patient_id": pid,
            "j": j,
            "t_s": j * seg_s,
            "initial_bp": bp1,
            "reference_bp": ref,
            "true_label": ChangeLabel(int(classify_deltas([ref - bp1], threshold)[0])).title,
            "predicted_label": predicted.get(j, ""),
        })
    return rows


def bands_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BAND_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


# -- matrix ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatrixCell:
    arch: str
    input_type: str
    bp_type: str
    seconds: int = 7
    include_initial_bp: bool = True

    def key(self):
        bp = "bp" if self.include_initial_bp else "nobp"
        return f"{self.arch}-{self.input_type}-{self.bp_type}-{self.seconds}s-{bp}"


def matrix_cells(archs=("mlp", "cnn", "resnet", "encoder"), input_types=("ppg",),
                 bp_types=("sbp", "dbp", "mbp"), seconds=(7,), initial_bp=(True,)):
    """Cross product of the requested settings, in a fixed order."""
    return [MatrixCell(a, i, b, s, f)
            for a in archs for i in input_types for b in bp_types for s in seconds
            for f in initial_bp]


SUMMARY_COLUMNS = ("cell", "arch", "input_type", "bp_type", "seconds", "include_initial_bp",
                   "cohort", "accuracy", "macro_f1", "balanced_accuracy", "n")


def run_matrix(cells, run_cell):
    """Run every cell; ``run_cell(cell)`` returns ``{cohort_name: EvalReport}``.

    Returns ``{"reports": {cell_key: {cohort: report_dict}}, "summary": [rows]}``
    where each summary row copies its numbers from the matching report.
    """
    reports, summary = {}, []
    for cell in cells:
        out = run_cell(cell)
        reports[cell.key()] = {name: rep.to_dict() for name, rep in out.items()}
        for name, rep in out.items():
            summary.append({
                "cell": cell.key(), "arch": cell.arch, "input_type": cell.input_type,
                "bp_type": cell.bp_type, "seconds": cell.seconds,
                "include_initial_bp": cell.include_initial_bp, "cohort": name,
                "accuracy": rep.accuracy, "macro_f1": rep.macro_f1,
                "balanced_accuracy": rep.balanced_accuracy, "n": rep.n,
            })
    return {"reports": reports, "summary": summary}


def summary_csv(summary):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in summary:
        w.writerow(row)
    return buf.getvalue()


# -- files ------------------------------------------------------------------------------


def content_hash(data):
    """Git blob hash (``sha1("blob <len>\\0" + data)``) of some bytes."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_json(obj, path):
    atomic_write(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")
