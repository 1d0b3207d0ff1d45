"""Losses, Adam, validation split, and the alternating joint training loop.

The two tasks have disjoint datasets; "joint" training interleaves one
sentiment mini-batch step with one extraction mini-batch step. An epoch is
one pass over the larger stream; the shorter stream recycles by
reshuffling.
"""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor, Tape, NumericError
from .data import batchify
from .model import forward_instance
from . import evaluation

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    dropout: float = 0.5
    validation_fraction: float = 0.2
    patience: int = 10
    max_epochs: int = 100
    seed: int = 0
    num_runs: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 5.0
    alternation: str = "batch"  # or "epoch"

    def validate(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise T.ConfigError("validation_fraction must be in (0, 1)")
        if self.patience < 1:
            raise T.ConfigError("patience must be >= 1")
        if self.alternation not in ("batch", "epoch"):
            raise T.ConfigError("alternation must be 'batch' or 'epoch'")
        return self


def _clamped_log_prob(prob):
    value = float(prob.data)
    if value < 1e-12:
        log.warning("clamping predicted probability %.3e for the loss", value)
    return T.scale(T.log(T.clip_min(prob, 1e-12)), -1.0)


def alsc_loss(probs, gold):
    """Negative log-probability of the gold sentiment; batch losses sum."""
    return _clamped_log_prob(T.pick(probs, gold))


def aowe_loss(probs, gold_tags, mask=None):
    """Sum of per-token negative log-probabilities over unmasked tokens."""
    terms = []
    for i, tag in enumerate(gold_tags):
        if mask is not None and not mask[i]:
            continue
        terms.append(_clamped_log_prob(T.pick(probs, (i, int(tag)))))
    return sum_scalars(terms)


def sum_scalars(terms):
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for term in terms[1:]:
        total = T.add(total, term)
    return total


class Adam:
    """Standard bias-corrected Adam over named parameter tensors."""

    def __init__(self, named_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(named_params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0

    def step(self):
        for name, p in self.params.items():
            g = p.grad
            if g is not None and not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient in parameter %r" % name)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p.data -= self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


def clip_gradients(named_params, max_norm):
    """Scale all gradients down so the global L2 norm is at most max_norm."""
    if max_norm is None or max_norm <= 0:
        return 1.0
    total = 0.0
    for p in named_params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(total)
    if norm > max_norm:
        factor = max_norm / norm
        for p in named_params.values():
            if p.grad is not None:
                p.grad *= factor
        return factor
    return 1.0


def split_validation(dataset, fraction, rng):
    """Disjoint (train, valid) partition; train gets ceil((1-f)N)."""
    if not dataset:
        raise ValueError("cannot split an empty dataset")
    n_train = math.ceil((1.0 - fraction) * len(dataset))
    order = rng.permutation(len(dataset))
    train = [dataset[i] for i in order[:n_train]]
    valid = [dataset[i] for i in order[n_train:]]
    return train, valid


@dataclass
class TrainResult:
    best_values: dict
    best_epoch: int
    best_monitored: float
    log: list = field(default_factory=list)
    diverged: bool = False


def _train_step(batch, task, params, vocab, adam, rng, grad_clip):
    tape = Tape()
    with tape:
        terms = []
        for inst in batch.instances:
            result = forward_instance(inst, vocab, params, mode="train", rng=rng,
                                      want_alsc=(task == "alsc"),
                                      want_aowe=(task == "aowe"))
            if task == "alsc":
                terms.append(alsc_loss(result.alsc_probs, inst.label))
            else:
                terms.append(aowe_loss(result.aowe_probs, inst.tags))
        total = sum_scalars(terms)
    value = float(total.data)
    if not np.isfinite(value):
        raise NumericError("non-finite %s loss" % task)
    params.zero_grad()
    tape.backward(total)
    clip_gradients(params.named_parameters(), grad_clip)
    adam.step()
    return value


def _recycling_batches(instances, batch_size, rng, vocab):
    while True:
        yield from batchify(instances, batch_size, rng, vocab)


def _epoch_schedule(alsc_train, aowe_train, config, rng, vocab, alternation):
    """Yield ("alsc"|"aowe", batch) steps for one epoch.

    The epoch covers one full pass over each enabled stream; when both are
    enabled, the longer stream sets the step count and the shorter recycles.
    """
    streams = {}
    if alsc_train is not None:
        streams["alsc"] = list(batchify(alsc_train, config.batch_size, rng, vocab))
    if aowe_train is not None:
        streams["aowe"] = list(batchify(aowe_train, config.batch_size, rng, vocab))
    if len(streams) == 1:
        task, batches = next(iter(streams.items()))
        for batch in batches:
            yield task, batch
        return
    if alternation == "epoch":
        for task in ("alsc", "aowe"):
            for batch in streams[task]:
                yield task, batch
        return
    n_steps = max(len(b) for b in streams.values())
    iters = {}
    for task, batches in streams.items():
        if len(batches) == n_steps:
            iters[task] = iter(batches)
        else:
            source = {"alsc": alsc_train, "aowe": aowe_train}[task]
            iters[task] = _recycling_batches(source, config.batch_size, rng, vocab)
    for _ in range(n_steps):
        yield "alsc", next(iters["alsc"])
        yield "aowe", next(iters["aowe"])


def train_joint(alsc_data, aowe_data, params, config, vocab,
                alsc_valid=None, aowe_valid=None, log_sink=None):
    """Alternating joint training with early stopping on the validation sets.

    alsc_data / aowe_data are the training portions (pass None for a
    disabled task). Monitors validation accuracy + span F1 (the enabled
    subset) and returns the best checkpoint values plus the per-epoch log.
    On divergence, returns the last good checkpoint with diverged=True.
    """
    config.validate()
    model_config = params.config
    model_config.dropout = config.dropout
    use_alsc = model_config.enable_alsc_task and alsc_data
    use_aowe = model_config.enable_aowe_task and aowe_data
    if not (use_alsc or use_aowe):
        raise T.ConfigError("no enabled task has training data")

    seedseq = np.random.SeedSequence(config.seed)
    shuffle_rng, dropout_rng = [np.random.default_rng(s) for s in seedseq.spawn(2)]
    adam = Adam(params.named_parameters(), lr=config.learning_rate,
                beta1=config.beta1, beta2=config.beta2, eps=config.eps)

    result = TrainResult(best_values=params.copy_values(), best_epoch=0,
                         best_monitored=-np.inf)
    start = time.time()
    for epoch in range(1, config.max_epochs + 1):
        epoch_losses = {"alsc": 0.0, "aowe": 0.0}
        schedule = _epoch_schedule(alsc_data if use_alsc else None,
                                   aowe_data if use_aowe else None,
                                   config, shuffle_rng, vocab, config.alternation)
        try:
            for task, batch in schedule:
                epoch_losses[task] += _train_step(batch, task, params, vocab,
                                                  adam, dropout_rng,
                                                  config.grad_clip)
        except NumericError as exc:
            log.error("training diverged at epoch %d: %s", epoch, exc)
            params.load_values(result.best_values)
            result.diverged = True
            break

        entry = {"epoch": epoch,
                 "alsc_loss": epoch_losses["alsc"],
                 "aowe_loss": epoch_losses["aowe"],
                 "val_alsc_acc": None, "val_alsc_f1": None, "val_aowe_f1": None}
        monitored = 0.0
        if use_alsc and alsc_valid:
            gold = [inst.label for inst in alsc_valid]
            pred = evaluation.predict_alsc(params, vocab, alsc_valid)
            entry["val_alsc_acc"] = evaluation.alsc_accuracy(gold, pred)
            entry["val_alsc_f1"] = evaluation.macro_f1(gold, pred)
            monitored += entry["val_alsc_acc"]
        if use_aowe and aowe_valid:
            gold = [evaluation.decode_bio_spans(inst.tags) for inst in aowe_valid]
            pred = evaluation.predict_aowe_spans(params, vocab, aowe_valid)
            _, _, f1 = evaluation.span_prf(gold, pred)
            entry["val_aowe_f1"] = f1
            monitored += f1
        entry["elapsed_s"] = time.time() - start
        result.log.append(entry)
        if log_sink is not None:
            log_sink(entry)

        if monitored > result.best_monitored:
            result.best_monitored = monitored
            result.best_epoch = epoch
            result.best_values = params.copy_values()
        elif epoch - result.best_epoch >= config.patience and \
                (alsc_valid or aowe_valid):
            break

    params.load_values(result.best_values)
    return result


def run_repeated(run_fn, seeds):
    """Run run_fn(seed) -> flat metric dict for each seed; aggregate each
    metric as (mean, sample standard deviation)."""
    if not seeds:
        raise ValueError("need at least one seed")
    runs = [run_fn(seed) for seed in seeds]
    summary = {}
    for key in runs[0]:
        values = np.array([run[key] for run in runs], dtype=np.float64)
        summary[key] = {
            "mean": float(values.mean()),
            "std": float(values.std(ddof=1)) if len(values) > 1 else 0.0,
        }
    return summary
