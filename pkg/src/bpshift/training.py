"""Mini-batch Adam training with best-validation retention and early stopping."""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DivergedLoss, TooFewExamples
from .models import build_model, forward
from .nn import functional as F
from .nn.params import adam_step, atomic_write
from .nn.tensor import no_grad

EVAL_BATCH = 256


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float = None
    val_acc: float = None


@dataclass
class TrainResult:
    model: object
    history: list
    best_epoch: int
    best_state: dict = field(repr=False, default=None)
    stopped_early: bool = False

    def history_lines(self):
        return [json.dumps(asdict(r), sort_keys=True, separators=(",", ":")) for r in self.history]

    def write_history(self, path):
        atomic_write(path, "\n".join(self.history_lines()) + "\n")


def _aux(examples, idx):
    if examples.aux.shape[1] == 0:
        return None
    return examples.aux[idx]


def logits_for(model, examples, batch=EVAL_BATCH):
    """Eval-mode logits ``(N, 3)`` in example order."""
    out = []
    with no_grad():
        for lo in range(0, len(examples), batch):
            idx = slice(lo, lo + batch)
            out.append(forward(model, examples.x[idx], _aux(examples, idx), train=False).data)
    if not out:
        return np.zeros((0, 3))
    return np.concatenate(out).astype(np.float64)


def loss_and_accuracy(model, examples):
    z = logits_for(model, examples)
    logp = F.log_softmax(z)
    loss = float(-logp[np.arange(len(z)), examples.y].mean())
    acc = float((z.argmax(axis=1) == examples.y).mean())
    return loss, acc


def train(model, train_set, val_set=None, seed=0, spec=None, callback=None):
    """Fit ``model`` in place and return a :class:`TrainResult`.

    Shuffling and dropout draw from generators seeded by ``seed`` alone, so
    a fixed seed reproduces the history exactly on a single thread. The
    parameters with the best validation accuracy (ties: lower validation
    loss) are restored at the end; without a validation set the training
    loss decides. Training stops after ``spec.patience`` epochs without
    improvement.
    """
    spec = spec or model.spec
    n = len(train_set)
    if n == 0:
        raise TooFewExamples("empty training set")
    order_rng = np.random.default_rng([seed, 1])
    drop_rng = np.random.default_rng([seed, 2])
    P = model.params
    history = []
    best_key, best_state, best_epoch, since = None, P.state_dict(), 0, 0
    stopped = False
    for epoch in range(1, spec.epochs + 1):
        perm = order_rng.permutation(n)
        tot_loss, tot_hit = 0.0, 0
        for lo in range(0, n, spec.batch_size):
            idx = np.sort(perm[lo : lo + spec.batch_size])
            P.zero_grad()
            logits = forward(model, train_set.x[idx], _aux(train_set, idx), train=True, rng=drop_rng)
            loss = F.cross_entropy(logits, train_set.y[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            loss.backward()
            adam_step(P, spec.lr)
            tot_loss += value * len(idx)
            tot_hit += int((logits.data.argmax(axis=1) == train_set.y[idx]).sum())
        rec = EpochRecord(epoch, tot_loss / n, tot_hit / n)
        if val_set is not None and len(val_set):
            rec.val_loss, rec.val_acc = loss_and_accuracy(model, val_set)
            key = (rec.val_acc, -rec.val_loss)
        else:
            key = (-rec.train_loss,)
        if not math.isfinite(rec.val_loss if rec.val_loss is not None else rec.train_loss):
            raise DivergedLoss(f"non-finite loss at epoch {epoch}")
        history.append(rec)
        if callback is not None:
            callback(rec)
        if best_key is None or key > best_key:
            best_key, best_state, best_epoch, since = key, P.state_dict(), epoch, 0
        else:
            since += 1
            if since >= spec.patience:
                stopped = True
                break
    P.load_state_dict(best_state)
    return TrainResult(model, history, best_epoch, best_state, stopped)


def fit(spec, train_set, val_set=None, seed=0, callback=None):
    """Build a model from ``spec`` with ``seed`` and train it."""
    model = build_model(spec, seed=seed)
    return train(model, train_set, val_set, seed=seed, spec=spec, callback=callback)


@dataclass
class CrossValResult:
    folds: list
    best_fold: int

    @property
    def model(self):
        return self.folds[self.best_fold].model

    def val_accuracies(self):
        return [max(r.val_acc for r in f.history) for f in self.folds]


def cross_validate(spec, examples, split, seed=0, callback=None):
    """Train one model per fold of ``split``; the best validation fold is kept."""
    results = []
    for k in range(len(split.folds)):
        tr, va = split.fold(k)
        results.append(fit(spec, examples.subset(tr), examples.subset(va), seed=seed + k,
                           callback=callback))
    accs = [max(r.val_acc for r in res.history) for res in results]
    return CrossValResult(results, int(np.argmax(accs)))
