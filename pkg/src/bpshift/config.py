"""Run configuration: defaults, JSON loading and validation.

A config file is a JSON object whose sections mirror :class:`RunConfig`.
Missing keys take the defaults below and unknown keys are rejected. The
``BPSHIFT_SEED`` environment variable, when set, replaces ``seed``.
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass

from .dataset import BP_SCALE, InputType
from .errors import ConfigError
from .labeling import DEFAULT_THRESHOLDS, THRESHOLD_GRID, BpType
from .models import KINDS
from .signal_core import ALLOWED_SECONDS
from .synth import PRESETS

SEED_ENV = "BPSHIFT_SEED"


@dataclass
class SynthSection:
    preset: str = "learnable"
    patients: int = 60
    segments: int = 60


@dataclass
class CohortSection:
    train_patients: int = 50
    test1_patients: int = 5
    test2_patients: int = 5


@dataclass
class SamplingSection:
    per_class: int = 2000
    test_per_class: int = 300
    folds: int = 5
    cross_validate: bool = False


@dataclass
class ModelSection:
    preset: str = "desk"
    arch: str = "encoder"
    input_type: str = "sdppg"
    bp_type: str = "mbp"
    seconds: int = 7
    include_initial_bp: bool = True
    epochs: int = None
    batch_size: int = None
    lr: float = None
    widths: list = None


@dataclass
class SweepSection:
    reuse_model: bool = False
    per_class: int = 1000


@dataclass
class RunConfig:
    seed: int = 0
    bp_scale: float = BP_SCALE
    thresholds: dict = field(default_factory=lambda: {t.value: v for t, v in DEFAULT_THRESHOLDS.items()})
    synth: SynthSection = field(default_factory=SynthSection)
    cohort: CohortSection = field(default_factory=CohortSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    model: ModelSection = field(default_factory=ModelSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def to_dict(self):
        return asdict(self)

    def threshold(self, bp_type):
        return float(self.thresholds[BpType.parse(bp_type).value])


def _fill(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", "", "expected a JSON object")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(path or "<root>", key, f"unknown field; expected one of {sorted(known)}")
    out = cls()
    for name, f in known.items():
        if name not in data:
            continue
        default = getattr(out, name)
        value = data[name]
        if is_dataclass(default):
            value = _fill(type(default), value, f"{path}.{name}" if path else name)
        setattr(out, name, value)
    return out


def _check(cond, path, name, message):
    if not cond:
        raise ConfigError(path, name, message)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def validate(cfg, source="<config>"):
    """Check every field of ``cfg``; raises :class:`ConfigError` naming the field."""
    _check(_is_int(cfg.seed) and cfg.seed >= 0, source, "seed", "must be a non-negative integer")
    _check(isinstance(cfg.bp_scale, (int, float)) and cfg.bp_scale > 0, source, "bp_scale",
           "must be positive")
    th = dict(cfg.thresholds)
    for key in th:
        _check(key in {t.value for t in BpType}, source, f"thresholds.{key}", "unknown BP type")
    for t in BpType:
        v = th.setdefault(t.value, DEFAULT_THRESHOLDS[t])
        grid = THRESHOLD_GRID[t]
        _check(isinstance(v, (int, float)) and grid[0] <= v <= grid[-1], source,
               f"thresholds.{t.value}",
               f"{v} outside the {t.value.upper()} grid {grid[0]:g}..{grid[-1]:g} mmHg")
    cfg.thresholds = th
    s = cfg.synth
    _check(s.preset in PRESETS, source, "synth.preset", f"choose from {sorted(PRESETS)}")
    _check(_is_int(s.patients) and s.patients >= 1, source, "synth.patients", "must be >= 1")
    _check(_is_int(s.segments) and s.segments >= 2, source, "synth.segments", "must be >= 2")
    for name in ("train_patients", "test1_patients", "test2_patients"):
        v = getattr(cfg.cohort, name)
        _check(_is_int(v) and v >= 0, source, f"cohort.{name}", "must be a non-negative integer")
    _check(cfg.cohort.train_patients >= 1, source, "cohort.train_patients", "must be >= 1")
    sm = cfg.sampling
    for name in ("per_class", "test_per_class"):
        _check(_is_int(getattr(sm, name)) and getattr(sm, name) >= 1, source, f"sampling.{name}",
               "must be a positive integer")
    _check(_is_int(sm.folds) and sm.folds >= 2, source, "sampling.folds", "must be >= 2")
    m = cfg.model
    _check(m.preset in ("desk", "paper"), source, "model.preset", "choose from desk, paper")
    _check(m.arch in KINDS, source, "model.arch", f"choose from {', '.join(KINDS)}")
    try:
        InputType.parse(m.input_type)
    except ValueError as exc:
        raise ConfigError(source, "model.input_type", str(exc)) from None
    _check(m.bp_type in {t.value for t in BpType}, source, "model.bp_type", "choose from sbp, dbp, mbp")
    _check(m.seconds in ALLOWED_SECONDS, source, "model.seconds",
           f"choose from {', '.join(map(str, ALLOWED_SECONDS))}")
    for name in ("epochs", "batch_size"):
        v = getattr(m, name)
        _check(v is None or (_is_int(v) and v >= (0 if name == "epochs" else 1)), source,
               f"model.{name}", "must be a non-negative integer")
    _check(m.lr is None or (isinstance(m.lr, (int, float)) and m.lr >= 0), source, "model.lr",
           "must be >= 0")
    _check(_is_int(cfg.sweep.per_class) and cfg.sweep.per_class >= 1, source, "sweep.per_class",
           "must be a positive integer")
    return cfg


def validate_config(file=None, env=None):
    """Load ``file`` (a path, a dict or None), fill defaults and validate.

    An empty or missing-content file yields every default.
    """
    env = os.environ if env is None else env
    source = "<defaults>"
    data = {}
    if isinstance(file, dict):
        data, source = file, "<dict>"
    elif file is not None:
        source = os.fspath(file)
        try:
            with open(source, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(source, "", f"cannot read config: {exc.strerror}") from None
        if text.strip():
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(source, "", f"invalid JSON: {exc}") from None
    cfg = _fill(RunConfig, data, "")
    if env.get(SEED_ENV) not in (None, ""):
        try:
            cfg.seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(SEED_ENV, "seed", f"not an integer: {env[SEED_ENV]!r}") from None
    return validate(cfg, source)
