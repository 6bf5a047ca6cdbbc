"""MLP, CNN, ResNet and Encoder classifiers over paired PPG inputs.

All four produce logits ordered (Spike, Stable, Dip). When
``include_initial_bp`` is set, the scaled initial BP goes through a learned
linear map at every block and the result is concatenated to that block's
input: broadcast over time for convolution blocks, appended for dense
layers. Each conditioning map has its own weight tensor, so a conditioned
and an ablated model built from the same seed share all other weights.
"""

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InvalidSpec, MissingInitialBp, ShapeMismatch
from .labeling import ChangeLabel
from .nn import functional as F
from .nn.params import ParameterSet, param_rng
from .nn.tensor import Tensor, broadcast_to, concat, no_grad, reshape

KINDS = ("mlp", "cnn", "resnet", "encoder")
N_CLASSES = 3

#: Layer and convolution counts per architecture.
TABLE2_COUNTS = {
    "mlp": (4, 0),
    "cnn": (4, 3),
    "resnet": (11, 10),
    "encoder": (5, 3),
}
PAPER_LR = {"mlp": 1e-3, "cnn": 1e-3, "resnet": 1e-3, "encoder": 1e-4}


@dataclass(frozen=True)
class ModelSpec:
    """Architecture and optimisation settings for one model.

    ``n_features`` counts the scalar inputs other than the initial BP (10
    for the waveform-feature input type). ``cond_dim`` is the width of each
    initial-BP conditioning map.
    """

    kind: str
    in_channels: int
    length: int
    n_features: int = 0
    include_initial_bp: bool = True
    hidden: int = 500
    widths: tuple = (64, 64, 64)
    kernels: tuple = (9, 5, 3)
    dropout: float = 0.2
    prelu_init: float = 0.25
    norm_eps: float = 1e-5
    pool_window: int = 2
    cond_dim: int = 4
    zero_head: bool = False
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    patience: int = 20

    def validate(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown architecture {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.in_channels < 1 or self.length < 2:
            raise InvalidSpec("need at least one channel and two samples")
        if len(self.widths) != 3 or len(self.kernels) != 3:
            raise InvalidSpec("widths and kernels need one entry per block (3)")
        if any(k % 2 == 0 or k < 1 for k in self.kernels):
            raise InvalidSpec("kernel sizes must be odd")
        if self.kind == "resnet" and len(set(self.widths)) != 1:
            raise InvalidSpec("resnet blocks must share one width")
        if not (0.0 <= self.dropout < 1.0):
            raise InvalidSpec("dropout must be in [0, 1)")
        if self.kind == "encoder" and self.length // self.pool_window ** 2 < 1:
            raise InvalidSpec("input too short for two pooling stages")
        if self.lr < 0 or self.epochs < 0 or self.batch_size < 1:
            raise InvalidSpec("lr and epochs must be >= 0 and batch_size >= 1")
        return self

    @property
    def n_aux(self):
        return self.n_features + (1 if self.include_initial_bp else 0)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("widths", "kernels"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def paper_preset(kind, in_channels, length, **kw):
    """Optimisation settings as published: Adam, 1024 epochs, batch 500."""
    return ModelSpec(kind=kind, in_channels=in_channels, length=length, lr=PAPER_LR[kind],
                     epochs=1024, batch_size=500, patience=1024, **kw).validate()


def desk_preset(kind, in_channels, length, **kw):
    """Single-CPU settings: narrower convolutions, fewer epochs, early stopping."""
    base = dict(widths=(32, 32, 32), lr=PAPER_LR[kind] if kind != "encoder" else 1e-3,
                epochs=60, batch_size=64, patience=12)
    base.update(kw)
    return ModelSpec(kind=kind, in_channels=in_channels, length=length, **base).validate()


@dataclass
class Model:
    """Built network: spec, parameters and an ordered layer inventory."""

    spec: ModelSpec
    params: ParameterSet
    layers: list = field(default_factory=list)

    def layer_counts(self):
        """(layers, convolutional layers) counting dense, conv and attention layers."""
        kinds = [k for _, k in self.layers]
        n_layers = sum(k in ("dense", "conv", "attention") for k in kinds)
        return n_layers, kinds.count("conv")

    def parameter_count(self, kinds=None):
        """Scalar parameter count, optionally restricted to some layer kinds."""
        owner = dict(self.layers)
        total = 0
        for name, p in self.params.items():
            layer = name.rsplit(".", 1)[0]
            if kinds is None or owner.get(layer) in kinds:
                total += p.size
        return int(total)

    def forward(self, x, aux=None, train=False, rng=None):
        return forward(self, x, aux, train, rng)


class _Builder:
    def __init__(self, spec, seed, dtype):
        self.spec = spec
        self.seed = seed
        self.dtype = dtype
        self.params = ParameterSet()
        self.layers = []

    def _add(self, name, arr):
        self.params.add(name, Tensor(np.asarray(arr, dtype=self.dtype)))

    def he(self, name, shape, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        self._add(name, param_rng(self.seed, name).uniform(-bound, bound, shape))

    def dense(self, name, n_in, n_out, zero=False):
        self.layers.append((name, "dense"))
        if zero:
            self._add(name + ".w", np.zeros((n_out, n_in)))
        else:
            self.he(name + ".w", (n_out, n_in), n_in)
        self._add(name + ".b", np.zeros(n_out))
        if self.spec.include_initial_bp:
            self.cond(name, n_in, n_out, dense=True)

    def conv(self, name, c_in, c_out, k, cond=True):
        self.layers.append((name, "conv"))
        self.he(name + ".w", (c_out, c_in, k), c_in * k)
        self._add(name + ".b", np.zeros(c_out))
        if cond and self.spec.include_initial_bp:
            self.cond(name, c_in * k, c_out, k=k)

    def cond(self, name, fan_in, n_out, dense=False, k=None):
        """Initial-BP map (zero-initialised) plus the weights that read its output."""
        d = self.spec.cond_dim
        self.layers.append((name + "_cond", "cond"))
        self._add(name + "_cond.w", np.zeros(d))
        self._add(name + "_cond.b", np.zeros(d))
        shape = (n_out, d) if dense else (n_out, d, k)
        self.he(name + ".w_cond", shape, fan_in)

    def norm(self, name, c):
        self.layers.append((name, "norm"))
        self._add(name + ".gain", np.ones(c))
        self._add(name + ".shift", np.zeros(c))

    def act(self, name, shape):
        self.layers.append((name, "act"))
        self._add(name + ".slope", np.full(shape, self.spec.prelu_init))


def build_model(spec, seed=0, dtype=np.float32):
    """Construct a :class:`Model` with seeded He-uniform initialisation."""
    spec.validate()
    b = _Builder(spec, seed, dtype)
    c_in, kinds = spec.in_channels, spec.kernels
    if spec.kind == "mlp":
        n_in = spec.in_channels * spec.length + spec.n_features
        for k in range(3):
            b.dense(f"fc{k + 1}", n_in, spec.hidden)
            b.act(f"fc{k + 1}_act", (spec.hidden,))
            b.layers.append((f"fc{k + 1}_drop", "dropout"))
            n_in = spec.hidden
        b.dense("head", n_in, N_CLASSES, zero=spec.zero_head)
    elif spec.kind in ("cnn", "encoder"):
        for k in range(3):
            b.conv(f"block{k + 1}.conv", c_in, spec.widths[k], kinds[k])
            b.norm(f"block{k + 1}.norm", spec.widths[k])
            b.act(f"block{k + 1}.act", (spec.widths[k], 1))
            if spec.kind == "encoder":
                b.layers.append((f"block{k + 1}.drop", "dropout"))
                if k < 2:
                    b.layers.append((f"block{k + 1}.pool", "pool"))
            c_in = spec.widths[k]
        b.layers.append(("pool", "attention" if spec.kind == "encoder" else "pool"))
        b.dense("head", c_in + spec.n_features, N_CLASSES, zero=spec.zero_head)
    else:
        width = spec.widths[0]
        for blk in range(3):
            for k in range(3):
                name = f"res{blk + 1}.conv{k + 1}"
                b.conv(name, c_in if k == 0 else width, width, kinds[k], cond=(k == 0))
                b.norm(f"res{blk + 1}.norm{k + 1}", width)
                if k < 2:
                    b.act(f"res{blk + 1}.act{k + 1}", (width, 1))
            if c_in != width:
                b.conv(f"res{blk + 1}.proj", c_in, width, 1, cond=False)
            b.act(f"res{blk + 1}.out_act", (width, 1))
            c_in = width
        b.layers.append(("pool", "pool"))
        b.dense("head", c_in + spec.n_features, N_CLASSES, zero=spec.zero_head)
    return Model(spec=spec, params=b.params, layers=b.layers)


# -- forward -----------------------------------------------------------------


def _cond_features(P, name, bp):
    # bp: (N,) scaled initial BP -> (N, cond_dim)
    w, c = P[name + "_cond.w"], P[name + "_cond.b"]
    return reshape(bp, (bp.shape[0], 1)) * reshape(w, (1,) + w.shape) + c


def _dense(P, name, h, bp):
    w = P[name + ".w"]
    if bp is not None:
        h = concat([h, _cond_features(P, name, bp)], axis=1)
        w = concat([w, P[name + ".w_cond"]], axis=1)
    return F.dense(h, w, P[name + ".b"])


def _conv(P, name, h, bp, cond=True):
    w = P[name + ".w"]
    if bp is not None and cond:
        c = _cond_features(P, name, bp)
        n, d = c.shape
        c = broadcast_to(reshape(c, (n, d, 1)), (n, d, h.shape[2]))
        h = concat([h, c], axis=1)
        w = concat([w, P[name + ".w_cond"]], axis=1)
    return F.conv1d(h, w, P[name + ".b"])


def _norm(P, name, h, eps):
    return F.instance_norm(h, P[name + ".gain"], P[name + ".shift"], eps)


def _split_aux(spec, aux, n):
    if spec.n_aux == 0:
        return None, None
    if aux is None:
        if spec.include_initial_bp and spec.n_features == 0:
            raise MissingInitialBp("model was built with include_initial_bp; pass the scaled BP")
        raise ShapeMismatch(f"model expects {spec.n_aux} auxiliary inputs")
    aux = np.asarray(aux)
    if aux.ndim == 1:
        aux = aux.reshape(n, -1)
    if aux.shape != (n, spec.n_aux):
        if spec.include_initial_bp and aux.shape == (n, spec.n_features):
            raise MissingInitialBp("auxiliary input lacks the initial BP column")
        raise ShapeMismatch(f"aux shape {aux.shape}, expected {(n, spec.n_aux)}")
    feats = Tensor(aux[:, : spec.n_features]) if spec.n_features else None
    bp = Tensor(aux[:, spec.n_features]) if spec.include_initial_bp else None
    return feats, bp


def forward(model, x, aux=None, train=False, rng=None):
    """Logits ``(N, 3)`` for a batch ``x`` of shape ``(N, C, L)``.

    ``aux`` holds ``n_features`` scalars followed by the scaled initial BP
    when the model is conditioned. Dropout is active only when ``train``.
    """
    spec, P = model.spec, model.params
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (spec.in_channels, spec.length):
        raise ShapeMismatch(f"input {x.shape[1:]}, model expects {(spec.in_channels, spec.length)}")
    dtype = P["head.w"].dtype
    n = x.shape[0]
    h = Tensor(x.astype(dtype, copy=False))
    feats, bp = _split_aux(spec, None if aux is None else np.asarray(aux, dtype=dtype), n)
    eps = spec.norm_eps

    if spec.kind == "mlp":
        h = F.flatten(h)
        if feats is not None:
            h = concat([h, feats], axis=1)
        for k in range(1, 4):
            h = _dense(P, f"fc{k}", h, bp)
            h = F.prelu(h, P[f"fc{k}_act.slope"])
            h = F.dropout(h, spec.dropout, train, rng)
        return _dense(P, "head", h, bp)

    if spec.kind in ("cnn", "encoder"):
        for k in range(1, 4):
            h = _conv(P, f"block{k}.conv", h, bp)
            h = _norm(P, f"block{k}.norm", h, eps)
            h = F.prelu(h, P[f"block{k}.act.slope"])
            if spec.kind == "encoder":
                h = F.dropout(h, spec.dropout, train, rng)
                if k < 3:
                    h = F.max_pool(h, spec.pool_window, spec.pool_window)
        h = F.softmax_attention(h) if spec.kind == "encoder" else F.global_average_pool(h)
    else:
        for blk in range(1, 4):
            shortcut = h
            for k in range(1, 4):
                h = _conv(P, f"res{blk}.conv{k}", h, bp, cond=(k == 1))
                h = _norm(P, f"res{blk}.norm{k}", h, eps)
                if k < 3:
                    h = F.prelu(h, P[f"res{blk}.act{k}.slope"])
            if f"res{blk}.proj.w" in P:
                shortcut = F.conv1d(shortcut, P[f"res{blk}.proj.w"], P[f"res{blk}.proj.b"])
            h = F.prelu(h + shortcut, P[f"res{blk}.out_act.slope"])
        h = F.global_average_pool(h)
    if feats is not None:
        h = concat([h, feats], axis=1)
    return _dense(P, "head", h, bp)


def forward_example(model, example, train=False, rng=None):
    """Logits ``(3,)`` for a single :class:`~bpshift.dataset.Example`."""
    aux = example.aux if len(example.aux) else None
    out = forward(model, example.x[None], None if aux is None else aux[None], train, rng)
    return out.data[0]


def condition_on_initial_bp(model, bp_i, scale=200.0):
    """Forward function with the initial BP (mmHg) fixed.

    Models built without the initial-BP path ignore ``bp_i``.
    """
    spec = model.spec

    def run(x, features=None):
        x = np.asarray(x)
        n = x.shape[0] if x.ndim == 3 else 1
        cols = []
        if spec.n_features:
            cols.append(np.asarray(features, dtype=np.float64).reshape(n, spec.n_features))
        if spec.include_initial_bp:
            cols.append(np.full((n, 1), bp_i / scale))
        aux = np.concatenate(cols, axis=1) if cols else None
        with no_grad():
            return forward(model, x, aux).data

    return run


def predict(logits):
    """Arg-max class; ties resolve to the earliest of Spike, Stable, Dip."""
    logits = np.asarray(logits)
    if logits.ndim == 1:
        return ChangeLabel(int(np.argmax(logits)))
    return np.argmax(logits, axis=-1)


def with_overrides(spec, **kw):
    return replace(spec, **kw).validate()
