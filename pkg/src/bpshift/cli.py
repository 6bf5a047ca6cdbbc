"""``bp-shift`` command line: one executable, one subcommand per pipeline stage.

Every subcommand writes its outputs under ``--out-dir`` together with a
``*.manifest.json`` recording the resolved config, the seed, SHA-256 hashes
of inputs and outputs and the manifests it builds on. Exit status is 0 on
success, 2 for invalid arguments or configuration and 1 for runtime
failures.
"""

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import validate_config
from .dataset import (
    DatasetSplit,
    SegmentCache,
    build_test_II,
    make_split,
    read_manifest,
    split_patients,
    write_manifest,
)
from .errors import BpShiftError, ConfigError, InvalidConfig, InvalidSpec, UsageError
from .evaluation import (
    SweepCohorts,
    bands_csv,
    content_hash,
    evaluate,
    label_band_export,
    matrix_cells,
    run_matrix,
    summary_csv,
    threshold_sweep,
)
from .fiducials import segment_features
from .ingest import by_patient, load_segments, record_row, write_segments
from .labeling import THRESHOLD_GRID, BpType, label_patient_multi
from .models import KINDS, Model, ModelSpec
from .nn.params import ParameterSet, atomic_write
from .pipeline import Caches, Cohorts, Setting, model_spec, test_sets, train_on, training_set
from .signal_core import ALLOWED_SECONDS
from .synth import PRESETS, gen_cohort, preset
from .training import cross_validate, fit

log = logging.getLogger("bpshift")

VALIDATION_ERRORS = (UsageError, ConfigError, InvalidSpec, InvalidConfig)
LOCK_NAME = ".bpshift.lock"


# -- plumbing --------------------------------------------------------------------


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@contextlib.contextmanager
def output_lock(out_dir):
    """Exclusive lockfile so two runs never write the same directory."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, LOCK_NAME)
    for _ in range(2):
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            break
        except FileExistsError:
            try:
                with open(path, encoding="utf-8") as fh:
                    pid = int(fh.read().strip() or 0)
                os.kill(pid, 0)
            except (ValueError, ProcessLookupError, PermissionError, OSError):
                os.unlink(path)  # stale lock left by a dead process
                continue
            raise BpShiftError(f"{out_dir} is locked by running process {pid}")
    else:
        raise BpShiftError(f"cannot acquire {path}")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(path)


class Run:
    """Per-invocation context: resolved config, seed and the manifest being built."""

    def __init__(self, args, cfg, seed):
        self.args = args
        self.cfg = cfg
        self.seed = seed
        self.out = os.path.abspath(args.out_dir)
        self.inputs, self.outputs, self.parents = {}, {}, []
        self.info = {}

    def path(self, *parts):
        return os.path.join(self.out, *parts)

    def rel(self, path):
        return os.path.relpath(path, self.out)

    def use(self, path):
        self.inputs[self.rel(path)] = sha256_file(path)
        man = _manifest_for(path)
        if man and os.path.exists(man) and self.rel(man) not in self.parents:
            self.parents.append(self.rel(man))

    def wrote(self, path):
        self.outputs[self.rel(path)] = sha256_file(path)

    def write_text(self, path, text):
        atomic_write(path, text)
        self.wrote(path)

    def write_json(self, path, obj):
        self.write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")

    def finish(self, manifest_path):
        manifest = {
            "command": self.args.command,
            "argv": self.args.argv,
            "version": __version__,
            "seed": self.seed,
            "config": self.cfg.to_dict(),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "parents": self.parents,
            "info": self.info,
        }
        atomic_write(manifest_path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
        return manifest_path


def _manifest_for(path):
    """Manifest that produced ``path``: the one beside it named after its stage."""
    d = os.path.dirname(path)
    name = os.path.basename(path)
    stage = {
        "segments.ndjson": "synth",
        "truth.json": "synth",
        "ingested.ndjson": "ingest",
        "cohorts.json": "sample",
        "train.ndjson": "sample",
        "train.bin": "sample",
        "test1.ndjson": "sample",
        "test1.bin": "sample",
        "split.json": "split",
        "model.bpnn": "train",
        "history.ndjson": "train",
    }.get(name)
    return os.path.join(d, f"{stage}.manifest.json") if stage else None


# -- shared resolution -----------------------------------------------------------


def _segments_path(run):
    if getattr(run.args, "segments_file", None):
        return os.path.join(run.out, run.args.segments_file)
    for name in ("ingested.ndjson", "segments.ndjson"):
        p = run.path(name)
        if os.path.exists(p):
            return p
    raise UsageError(f"no segments in {run.out}; run `bp-shift synth` or `bp-shift ingest` first, "
                     "or pass --segments-file")


def _load_patients(run):
    path = _segments_path(run)
    run.use(path)
    records, dropped = load_segments(path)
    if dropped:
        run.info["segments_dropped"] = len(dropped)
    if not records:
        raise BpShiftError(f"{path} holds no usable segments")
    return by_patient(records)


def _cohorts(run, patients):
    """Patient split, created once per output directory and then reused."""
    path = run.path("cohorts.json")
    c = run.cfg.cohort
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            roles = json.load(fh)
        run.use(path)
    else:
        roles = split_patients(list(patients), c.train_patients, c.test1_patients,
                               c.test2_patients, run.seed)
        run.write_json(path, roles)
    missing = [p for ids in roles.values() for p in ids if p not in patients]
    if missing:
        raise BpShiftError(f"cohorts.json names unknown patients {missing[:3]}; delete it to re-split")
    return Cohorts(*({p: patients[p] for p in roles[r]} for r in ("train", "test1", "test2")))


def _setting(run):
    a, cfg = run.args, run.cfg
    bp = BpType.parse(a.bp_type or cfg.model.bp_type)
    th = a.threshold if a.threshold is not None else cfg.threshold(bp)
    grid = THRESHOLD_GRID[bp]
    if not grid[0] <= th <= grid[-1]:
        raise UsageError(f"--threshold {th:g} outside the {bp.value.upper()} grid "
                         f"{grid[0]}..{grid[-1]} mmHg")
    bp_flag = cfg.model.include_initial_bp if a.initial_bp is None else a.initial_bp
    return Setting(
        input_type=a.input_type or cfg.model.input_type,
        bp_type=bp.value,
        threshold=float(th),
        seconds=a.seconds or cfg.model.seconds,
        include_initial_bp=bp_flag,
        per_class=a.per_class or cfg.sampling.per_class,
        test_per_class=a.test_per_class or cfg.sampling.test_per_class,
        seed=run.seed,
        bp_scale=cfg.bp_scale,
    )


def _data_key(s):
    flag = "bp" if s.include_initial_bp else "nobp"
    return f"{s.input_type}-{s.bp_type}-{s.threshold:g}-{s.seconds}s-{flag}-pc{s.per_class}-seed{s.seed}"


def _arch(run):
    return run.args.arch or run.cfg.model.arch


def _spec(run, s, fs):
    a, m = run.args, run.cfg.model
    over = dict(epochs=a.epochs if a.epochs is not None else m.epochs,
                batch_size=a.batch_size or m.batch_size,
                lr=a.lr if a.lr is not None else m.lr,
                widths=m.widths)
    return model_spec(_arch(run), s.input_type, s.seconds, fs, s.include_initial_bp,
                      a.preset or m.preset, **over)


def _run_dir(run, s):
    return run.path("runs", f"{_arch(run)}-{_data_key(s)}")


# -- subcommands -----------------------------------------------------------------------


def cmd_synth(run):
    a, c = run.args, run.cfg.synth
    cfg = preset(a.preset or c.preset, n_patients=a.patients or c.patients,
                 segments_per_patient=a.segments or c.segments, seed=run.seed)
    rows, truth = gen_cohort(cfg)
    seg = run.path("segments.ndjson")
    write_segments(rows, seg)
    run.wrote(seg)
    run.write_json(run.path("truth.json"), {"config": cfg.to_dict(), "patients": truth})
    run.info.update(patients=cfg.n_patients, segments=len(rows), preset=a.preset or c.preset)
    return run.finish(run.path("synth.manifest.json"))


def cmd_ingest(run):
    src = run.args.input or run.path("segments.ndjson")
    src = os.path.join(run.out, src) if not os.path.isabs(src) else src
    if not os.path.exists(src):
        raise UsageError(f"input {src} does not exist")
    run.use(src)
    records, dropped = load_segments(src)
    out = run.path("ingested.ndjson")
    write_segments((record_row(r) for r in records), out)
    run.wrote(out)
    run.write_json(run.path("dropped.json"), dropped)
    run.info.update(segments=len(records), dropped=len(dropped),
                    patients=len({r.patient_id for r in records}))
    return run.finish(run.path("ingest.manifest.json"))


def cmd_features(run):
    patients = _load_patients(run)
    lines = ["patient_id,index,b_over_a,slope_bc,slope_bd,agi,agi_mod"]
    failed = 0
    for pid, recs in patients.items():
        for r in recs:
            try:
                f = segment_features(r.ppg).as_array()
            except BpShiftError:
                failed += 1
                continue
            lines.append(",".join([pid, str(r.index)] + [repr(float(v)) for v in f]))
    run.write_text(run.path("features.csv"), "\n".join(lines) + "\n")
    run.info["segments_without_features"] = failed
    return run.finish(run.path("features.manifest.json"))


def cmd_label(run):
    patients = _load_patients(run)
    th = {BpType.parse(k): float(v) for k, v in run.cfg.thresholds.items()}
    for t in BpType:
        flag = getattr(run.args, f"threshold_{t.value}")
        if flag is not None:
            grid = THRESHOLD_GRID[t]
            if not grid[0] <= flag <= grid[-1]:
                raise UsageError(f"--threshold-{t.value} {flag:g} outside {grid[0]}..{grid[-1]} mmHg")
            th[t] = float(flag)
    lines = []
    for recs in patients.values():
        if len(recs) < 2:
            continue
        for p in label_patient_multi(recs, th):
            row = {"patient_id": p.patient_id, "i": p.i, "j": p.j}
            for t in BpType:
                row[f"delta_{t.value}"] = p.delta[t]
                row[f"label_{t.value}"] = p.label[t].title
                row[f"threshold_{t.value}"] = p.threshold[t]
            lines.append(json.dumps(row, separators=(",", ":")))
    run.write_text(run.path("pairs.ndjson"), "\n".join(lines) + ("\n" if lines else ""))
    run.info["pairs"] = len(lines)
    return run.finish(run.path("label.manifest.json"))


def _sample(run, s, patients=None):
    """Write the train and Test-I manifests for setting ``s`` (idempotent)."""
    d = run.path("data", _data_key(s))
    man = os.path.join(d, "sample.manifest.json")
    patients = patients if patients is not None else _load_patients(run)
    cohorts = _cohorts(run, patients)
    cache = SegmentCache(s.seconds, s.input_type)
    # Build both sets before writing so a failure leaves no partial dataset.
    train = training_set(cohorts, s, cache)
    tests = test_sets(cohorts, s, cache, with_test2=False)
    os.makedirs(d, exist_ok=True)
    write_manifest(train, os.path.join(d, "train"), {"seed": s.seed, "role": "train"})
    for ext in ("ndjson", "bin"):
        run.wrote(os.path.join(d, f"train.{ext}"))
    if "test1" in tests:
        write_manifest(tests["test1"], os.path.join(d, "test1"), {"seed": s.seed + 1, "role": "test1"})
        for ext in ("ndjson", "bin"):
            run.wrote(os.path.join(d, f"test1.{ext}"))
    run.info.update(dataset=_data_key(s), train_examples=len(train),
                    train_dropped=train.dropped, segment_failures=len(cache.failures()))
    return run.finish(man), cohorts


def cmd_sample(run):
    return _sample(run, _setting(run))[0]


def _split(run, s):
    d = run.path("data", _data_key(s))
    train_path = os.path.join(d, "train.ndjson")
    if not os.path.exists(train_path):
        raise UsageError(f"no dataset {_data_key(s)}; run `bp-shift sample` with the same flags first")
    run.use(train_path)
    with open(train_path, encoding="utf-8") as fh:
        n = json.loads(fh.readline())["header"]["n_examples"]
    folds = run.args.folds or run.cfg.sampling.folds
    split = make_split(np.arange(n), folds, run.seed)
    run.write_json(os.path.join(d, "split.json"), {
        "folds": [f.tolist() for f in split.folds],
        "train": split.train.tolist(),
        "val": split.val.tolist(),
        "seed": run.seed,
    })
    return run.finish(os.path.join(d, "split.manifest.json"))


def cmd_split(run):
    return _split(run, _setting(run))


def _ensure_dataset(run, s):
    d = run.path("data", _data_key(s))
    if not os.path.exists(os.path.join(d, "train.ndjson")):
        sub = Run(run.args, run.cfg, run.seed)
        _sample(sub, s)
    if not os.path.exists(os.path.join(d, "split.json")):
        sub = Run(run.args, run.cfg, run.seed)
        _split(sub, s)
    return d


def cmd_train(run):
    s = _setting(run)
    d = _ensure_dataset(run, s)
    run.use(os.path.join(d, "train.ndjson"))
    run.use(os.path.join(d, "train.bin"))
    run.use(os.path.join(d, "split.json"))
    examples = read_manifest(os.path.join(d, "train"))
    fs = examples.x.shape[2] / s.seconds
    spec = _spec(run, s, fs)
    with open(os.path.join(d, "split.json"), encoding="utf-8") as fh:
        split = json.load(fh)
    folds = [np.array(f, dtype=np.int64) for f in split["folds"]]
    cv = run.args.cv or run.cfg.sampling.cross_validate
    ds = DatasetSplit(np.array(split["train"]), np.array(split["val"]), folds)
    if cv:
        res = cross_validate(spec, examples, ds, run.seed)
        result = res.folds[res.best_fold]
        run.info["cv_val_accuracy"] = res.val_accuracies()
    else:
        tr, va = ds.fold(0)
        result = fit(spec, examples.subset(tr), examples.subset(va), seed=run.seed)
    rd = _run_dir(run, s)
    os.makedirs(rd, exist_ok=True)
    ckpt = os.path.join(rd, "model.bpnn")
    result.model.params.save(ckpt, meta={"spec": spec.to_dict(), "best_epoch": result.best_epoch})
    run.wrote(ckpt)
    hist = os.path.join(rd, "history.ndjson")
    result.write_history(hist)
    run.wrote(hist)
    run.info.update(best_epoch=result.best_epoch, epochs_run=len(result.history),
                    stopped_early=result.stopped_early)
    return run.finish(os.path.join(rd, "train.manifest.json"))


def _load_model(run, s):
    ckpt = os.path.join(_run_dir(run, s), "model.bpnn")
    if not os.path.exists(ckpt):
        raise UsageError(f"no checkpoint at {run.rel(ckpt)}; run `bp-shift train` with the same flags")
    run.use(ckpt)
    params, meta = ParameterSet.load(ckpt)
    spec = ModelSpec.from_dict(meta["spec"]).validate()
    model = Model(spec, params)
    with open(ckpt, "rb") as fh:
        digest = content_hash(fh.read())
    return model, digest


def _report(rep, digest, cohort):
    d = rep.to_dict()
    d["checkpoint"] = digest
    d["cohort"] = cohort
    return d


def cmd_evaluate(run):
    s = _setting(run)
    d = run.path("data", _data_key(s))
    model, digest = _load_model(run, s)
    patients = _load_patients(run)
    cohorts = _cohorts(run, patients)
    meta = {"arch": model.spec.kind, "seed": run.seed}
    reports = {}
    t1 = os.path.join(d, "test1")
    if os.path.exists(t1 + ".ndjson"):
        run.use(t1 + ".ndjson")
        run.use(t1 + ".bin")
        reports["test1"] = evaluate(model, read_manifest(t1), meta)
    if cohorts.test2:
        ex = build_test_II(cohorts.test2, s.input_type, s.seconds, s.bp_type, s.threshold,
                           s.include_initial_bp, exclude=list(cohorts.train) + list(cohorts.test1))
        reports["test2"] = evaluate(model, ex, meta)
        run.info["test2_dropped"] = ex.dropped
    if not reports:
        raise BpShiftError("no Test-I manifest and no Test-II patients to evaluate")
    rd = _run_dir(run, s)
    for name, rep in reports.items():
        run.write_json(os.path.join(rd, f"report_{name}.json"), _report(rep, digest, name))
    return run.finish(os.path.join(rd, "evaluate.manifest.json"))


def _cohort_objects(run):
    patients = _load_patients(run)
    return _cohorts(run, patients)


def cmd_sweep(run):
    s = _setting(run)
    cohorts = _cohort_objects(run)
    per_class = run.args.per_class or run.cfg.sweep.per_class
    sc = SweepCohorts(cohorts.train, cohorts.test1, cohorts.test2, s.input_type, s.seconds,
                      s.include_initial_bp)
    spec = _spec(run, s, cohorts.fs)
    folds = run.cfg.sampling.folds

    def train_fn(examples, threshold, seed):
        return train_on(examples, spec, seed, folds).model

    reuse = None
    if run.args.reuse_model or run.cfg.sweep.reuse_model:
        reuse = train_fn(training_set(cohorts, Setting(**{**s.__dict__, "per_class": per_class}),
                                      sc.cache), s.threshold, s.seed)
    rows = threshold_sweep(sc, s.bp_type, train_fn, per_class=per_class,
                           test_per_class=s.test_per_class, seed=run.seed, reuse_model=reuse)
    name = f"{_arch(run)}-{s.input_type}-{s.bp_type}-{s.seconds}s-{'bp' if s.include_initial_bp else 'nobp'}"
    d = run.path("sweeps", name)
    run.write_json(os.path.join(d, "sweep.json"), {"rows": rows, "reuse_model": reuse is not None})
    lines = ["threshold_mmHg,status,stable_fraction_test2,always_stable_accuracy_test2,"
             "test1_accuracy,test1_macro_f1,test2_accuracy,test2_macro_f1"]
    for r in rows:
        t1, t2 = r.get("test1", {}), r.get("test2", {})
        vals = [r["threshold"], r["status"], r["stable_fraction_test2"],
                r["always_stable_accuracy_test2"], t1.get("accuracy", ""), t1.get("macro_f1", ""),
                t2.get("accuracy", ""), t2.get("macro_f1", "")]
        lines.append(",".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in vals))
    run.write_text(os.path.join(d, "sweep.csv"), "\n".join(lines) + "\n")
    return run.finish(os.path.join(d, "sweep.manifest.json"))


def _cell_runner(run, cohorts, caches):
    def run_cell(cell):
        s = _setting(run)
        s = Setting(**{**s.__dict__, "input_type": cell.input_type, "bp_type": cell.bp_type,
                       "threshold": run.cfg.threshold(cell.bp_type)
                       if cell.bp_type != s.bp_type else s.threshold,
                       "seconds": cell.seconds, "include_initial_bp": cell.include_initial_bp})
        cache = caches.get(s.seconds, s.input_type)
        examples = training_set(cohorts, s, cache)
        old = run.args.arch
        run.args.arch = cell.arch
        try:
            spec = _spec(run, s, cohorts.fs)
        finally:
            run.args.arch = old
        result = train_on(examples, spec, s.seed, run.cfg.sampling.folds)
        meta = {"arch": cell.arch, "seed": s.seed,
                "checkpoint": content_hash(result.model.params.to_bytes())}
        return {name: evaluate(result.model, ex, meta)
                for name, ex in test_sets(cohorts, s, cache).items()}

    return run_cell


def cmd_ablate(run):
    s = _setting(run)
    cohorts = _cohort_objects(run)
    cells = matrix_cells([_arch(run)], [s.input_type], [s.bp_type], [s.seconds], (True, False))
    bundle = run_matrix(cells, _cell_runner(run, cohorts, Caches()))
    name = f"{_arch(run)}-{s.input_type}-{s.bp_type}-{s.seconds}s"
    d = run.path("ablation", name)
    run.write_json(os.path.join(d, "ablation.json"), bundle)
    run.write_text(os.path.join(d, "summary.csv"), summary_csv(bundle["summary"]))
    return run.finish(os.path.join(d, "ablate.manifest.json"))


def cmd_matrix(run):
    a = run.args
    cohorts = _cohort_objects(run)
    cells = matrix_cells(a.archs or list(KINDS), a.input_types or ["ppg"],
                         a.bp_types or ["sbp", "dbp", "mbp"],
                         a.seconds_list or [a.seconds or run.cfg.model.seconds],
                         (True, False) if a.ablation else (True,))
    bundle = run_matrix(cells, _cell_runner(run, cohorts, Caches()))
    d = run.path("matrix")
    for key, reps in bundle["reports"].items():
        run.write_json(os.path.join(d, "reports", f"{key}.json"), reps)
    run.write_json(os.path.join(d, "summary.json"), bundle["summary"])
    run.write_text(os.path.join(d, "summary.csv"), summary_csv(bundle["summary"]))
    run.info["cells"] = len(cells)
    return run.finish(os.path.join(d, "matrix.manifest.json"))


def cmd_bands(run):
    s = _setting(run)
    model, digest = _load_model(run, s)
    cohorts = _cohort_objects(run)
    pid = run.args.patient
    pool = {**cohorts.test2, **cohorts.test1, **cohorts.train}
    if pid is None:
        if not cohorts.test2:
            raise UsageError("no Test-II patients; pass --patient")
        pid = next(iter(cohorts.test2))
    if pid not in pool:
        raise UsageError(f"unknown patient {pid!r}")
    rows = label_band_export(model, pool[pid], s.bp_type, s.threshold, s.input_type, s.seconds,
                             s.include_initial_bp)
    d = run.path("bands")
    run.write_text(os.path.join(d, f"{_arch(run)}-{s.bp_type}-{pid}.csv"), bands_csv(rows))
    run.info.update(patient=pid, checkpoint=digest)
    return run.finish(os.path.join(d, f"{_arch(run)}-{s.bp_type}-{pid}.manifest.json"))


# -- argument parsing ----------------------------------------------------------------


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic PPG/ABP cohort"),
    "ingest": (cmd_ingest, "validate segment NDJSON and compute BP summaries"),
    "features": (cmd_features, "per-segment sdPPG features as CSV"),
    "label": (cmd_label, "Spike/Stable/Dip labels for every segment pair"),
    "sample": (cmd_sample, "class-balanced training and Test-I datasets"),
    "split": (cmd_split, "train/validation split and k folds"),
    "train": (cmd_train, "train one model"),
    "evaluate": (cmd_evaluate, "Test-I and Test-II reports for a trained model"),
    "sweep": (cmd_sweep, "accuracy across the threshold grid"),
    "ablate": (cmd_ablate, "train with and without the initial BP"),
    "matrix": (cmd_matrix, "architecture x input x BP-type experiment grid"),
    "bands": (cmd_bands, "per-offset label bands for one patient (CSV)"),
}


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--out-dir", default=".", help="directory for all inputs and outputs")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="overrides BPSHIFT_SEED and the config seed")
    p.add_argument("--segments-file", help="segment NDJSON (relative to --out-dir)")
    p.add_argument("--log-level", default="WARNING")
    return p


def _data_flags():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--input-type", choices=("ppg", "feat", "sdppg"))
    p.add_argument("--bp-type", choices=("sbp", "dbp", "mbp"))
    p.add_argument("--threshold", type=float, help="mmHg; defaults to the config value")
    p.add_argument("--seconds", type=int, choices=ALLOWED_SECONDS)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--with-initial-bp", dest="initial_bp", action="store_true", default=None)
    g.add_argument("--no-initial-bp", dest="initial_bp", action="store_false")
    p.add_argument("--per-class", type=int)
    p.add_argument("--test-per-class", type=int)
    return p


def _model_flags():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--arch", choices=KINDS)
    p.add_argument("--preset", choices=("desk", "paper"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--folds", type=int)
    p.add_argument("--cv", action="store_true", help="five-fold cross-validation, keep the best fold")
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="bp-shift", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    common, data, model = _common(), _data_flags(), _model_flags()
    for name, (_, help_) in COMMANDS.items():
        parents = [common]
        if name in ("sample", "split", "train", "evaluate", "sweep", "ablate", "matrix", "bands"):
            parents.append(data)
        if name in ("split", "train", "evaluate", "sweep", "ablate", "matrix", "bands"):
            parents.append(model)
        p = sub.add_parser(name, parents=parents, help=help_, description=help_)
        if name == "synth":
            p.add_argument("--preset", choices=sorted(PRESETS))
            p.add_argument("--patients", type=int)
            p.add_argument("--segments", type=int, help="segments per patient")
        if name == "ingest":
            p.add_argument("--input", help="segment NDJSON to ingest")
        if name == "label":
            for t in ("sbp", "dbp", "mbp"):
                p.add_argument(f"--threshold-{t}", type=float)
        if name == "sweep":
            p.add_argument("--reuse-model", action="store_true",
                           help="train once and evaluate that model at every threshold")
        if name == "matrix":
            p.add_argument("--archs", nargs="+", choices=KINDS)
            p.add_argument("--input-types", nargs="+", choices=("ppg", "feat", "sdppg"))
            p.add_argument("--bp-types", nargs="+", choices=("sbp", "dbp", "mbp"))
            p.add_argument("--seconds-list", nargs="+", type=int, choices=ALLOWED_SECONDS)
            p.add_argument("--ablation", action="store_true")
        if name == "bands":
            p.add_argument("--patient")
    return parser


def _resolve(args):
    """Config, then environment, then ``--seed``."""
    path = args.config
    if path and not os.path.isabs(path) and not os.path.exists(path):
        path = os.path.join(args.out_dir, path)
    cfg = validate_config(path)
    seed = args.seed if args.seed is not None else cfg.seed
    # Fold command-line choices into the recorded config.
    m = cfg.model
    for flag, attr in (("arch", "arch"), ("input_type", "input_type"), ("bp_type", "bp_type"),
                       ("seconds", "seconds"), ("initial_bp", "include_initial_bp"),
                       ("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr")):
        if getattr(args, flag, None) is not None:
            setattr(m, attr, getattr(args, flag))
    if args.command == "synth":
        for flag, attr in (("preset", "preset"), ("patients", "patients"), ("segments", "segments")):
            if getattr(args, flag, None) is not None:
                setattr(cfg.synth, attr, getattr(args, flag))
    elif getattr(args, "preset", None):
        m.preset = args.preset
    sm = cfg.sampling
    if getattr(args, "per_class", None) is not None:
        if args.command == "sweep":
            cfg.sweep.per_class = args.per_class
        else:
            sm.per_class = args.per_class
    for flag in ("test_per_class", "folds"):
        if getattr(args, flag, None) is not None:
            setattr(sm, flag, getattr(args, flag))
    if getattr(args, "cv", False):
        sm.cross_validate = True
    if getattr(args, "reuse_model", False):
        cfg.sweep.reuse_model = True
    if getattr(args, "threshold", None) is not None:
        cfg.thresholds[m.bp_type] = args.threshold
    if seed < 0:
        raise UsageError("--seed must be non-negative")
    cfg.seed = seed
    return cfg, seed


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, seed = _resolve(args)
        run = Run(args, cfg, seed)
        with output_lock(run.out):
            manifest = COMMANDS[args.command][0](run)
        print(os.path.relpath(manifest, run.out))
        return 0
    except VALIDATION_ERRORS as exc:
        print(f"bp-shift {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (BpShiftError, OSError, ValueError) as exc:
        print(f"bp-shift {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
