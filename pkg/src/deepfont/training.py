"""Two-phase training: autoencoder pretraining of the shared feature layers,
supervised training of the classifier layers on top of them, and fine-tuning
under a hard rank constraint on one fully connected layer.
"""
import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np

from deepfont import augment
from deepfont.augment import VARIANT_STEPS
from deepfont.errors import NumericError
from deepfont.network import (FC, TRAIN, build_scae, forward, backward, init_model,
                              logits_index, network_input, predict_logits)
from deepfont.numerics import mse_loss, softmax_xent
from deepfont.numerics.linalg import truncated_svd

log = logging.getLogger(__name__)

SCAE, SUPERVISED, RANK_FT = "SCAE", "SUPERVISED", "RANK_FT"
SCAE_VARIANTS = ("N", "S", "F", "R", "FR")


@dataclass
class TrainConfig:
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 32
    lr_drop_factor: float = 10.0
    patience: int = 3
    max_epochs: int = 30
    max_lr_drops: int = 3
    seed: int = 0
    fr_mix: float = 0.5
    rank_constraint: tuple = None
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("lr0", "batch_size", "patience", "max_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("momentum must lie in [0, 1) and weight_decay be >= 0")
        if self.lr_drop_factor <= 1:
            raise ValueError("lr_drop_factor must exceed 1")
        if not 0 < self.fr_mix < 1:
            raise ValueError("fr_mix must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        d = dict(d)
        if d.get("rank_constraint") is not None:
            d["rank_constraint"] = tuple(d["rank_constraint"])
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    lr: float
    train_loss: float
    val_metric: float
    seconds: float
    extra: dict = field(default_factory=dict)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def add(self, record):
        same = [r for r in self.records if r.phase == record.phase]
        if same and record.epoch <= same[-1].epoch:
            raise ValueError("epochs must increase within a phase")
        if same and record.lr > same[-1].lr:
            raise ValueError("learning rate must not increase within a phase")
        self.records.append(record)
        log.info("%s epoch %d lr %.5g loss %.5f val %.5f", record.phase, record.epoch,
                 record.lr, record.train_loss, record.val_metric)

    def phase(self, name):
        return [r for r in self.records if r.phase == name]


class SGDState:
    def __init__(self, model):
        self.velocity = [{k: np.zeros_like(v) for k, v in p.items()} for p in model.params]


def sgd_step(model, grads, state, config, lr):
    """Momentum SGD with L2 weight decay on weights (not biases). Frozen layers skipped."""
    for j, g in enumerate(grads):
        if g is None or model.frozen[j]:
            continue
        p, v = model.params[j], state.velocity[j]
        for name in ("w", "b"):
            step = g[name] + config.weight_decay * p[name] if name == "w" else g[name]
            v[name] *= config.momentum
            v[name] -= lr * step
            p[name] += v[name]


def _rng(seed, *tags):
    return np.random.default_rng([seed, *tags])


def sample_patches(images, rng, idx=None):
    idx = range(len(images)) if idx is None else idx
    return np.stack([augment.sample_patch(images[i], rng).pixels for i in idx])


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def fixed_patches(images, seed, dtype=np.float32):
    """One deterministic patch per image, for validation."""
    return network_input(sample_patches(images, np.random.default_rng(seed)), dtype)


def relative_mse(model, x, batch=32):
    """Reconstruction error normalized by the total energy of the inputs."""
    err = energy = 0.0
    for i in range(0, len(x), batch):
        xb = x[i:i + batch]
        out = forward(model, xb).acts[-1]
        err += float(np.sum((out.astype(np.float64) - xb) ** 2))
        energy += float(np.sum(xb.astype(np.float64) ** 2))
    return err / energy


def _check_loss(loss, phase):
    if not np.isfinite(loss):
        raise NumericError(f"{phase} loss became non-finite; lower the learning rate")
    return loss


def top1_error(model, x, labels):
    pred = predict_logits(model, x).argmax(axis=1)
    return float(np.mean(pred != labels))


def scae_recipe(variant):
    """Which data a variant trains on: (syn augmentation steps or None, uses real data)."""
    if variant not in SCAE_VARIANTS:
        raise ValueError(f"unknown SCAE variant {variant!r}; expected one of {SCAE_VARIANTS}")
    if variant == "R":
        return None, True
    if variant == "FR":
        return VARIANT_STEPS["F"], True
    return VARIANT_STEPS[variant], False


def _check_recipe(variant, syn, real):
    steps, needs_real = scae_recipe(variant)
    if steps is not None:
        if syn is None:
            raise ValueError(f"variant {variant} needs synthetic data")
        if syn.augment_steps is not None and frozenset(syn.augment_steps) != steps:
            raise ValueError(f"variant {variant} needs synthetic data with steps {sorted(steps)}, "
                             f"got {sorted(syn.augment_steps)}")
    if needs_real and real is None:
        raise ValueError(f"variant {variant} needs pseudo-real data")


def _mixed_schedule(n_steps, mix):
    """Deterministic interleaving: True for a synthetic batch, False for a real one."""
    return [int((i + 1) * mix) > int(i * mix) for i in range(n_steps)]


def train_scae(variant, syn, real, config, cnn_spec, val_sets=None, k_split=None):
    """Unsupervised reconstruction training at a constant learning rate.

    `syn`/`real` are manifests (either may be None if the variant does not use
    it). `val_sets` maps a name (e.g. "N", "R") to held-out images; their relative
    MSE is logged each epoch. Returns (autoencoder model, TrainLog).
    """
    _check_recipe(variant, syn, real)
    steps, needs_real = scae_recipe(variant)
    dtype = np.dtype(config.dtype)
    spec = build_scae(cnn_spec, k_split)
    model = init_model(spec, _rng(config.seed, 1), dtype)
    state = SGDState(model)
    pools = []
    if steps is not None:
        pools.append(syn.load_images())
    if needs_real:
        pools.append(real.load_images())
    val_x = {name: fixed_patches(imgs, config.seed + 7, dtype) for name, imgs in (val_sets or {}).items()}
    train_log = TrainLog()
    bs = config.batch_size
    n_steps = int(np.ceil(np.mean([len(p) for p in pools]) / bs))

    def val_metrics():
        return {f"val_{name}": relative_mse(model, x) for name, x in val_x.items()}

    def headline(metrics):
        if not metrics:
            return float("nan")
        return metrics.get("val_R", next(iter(metrics.values())))

    probe = network_input(sample_patches(pools[0], _rng(config.seed, 2),
                                         range(min(len(pools[0]), 128))), dtype)
    m0 = val_metrics()
    train_log.add(EpochRecord(0, SCAE, config.lr0, mse_loss(forward(model, probe).acts[-1], probe)[0],
                              headline(m0), 0.0, m0))
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        rng = _rng(config.seed, 3, epoch)
        streams = [iter([]) for _ in pools]
        schedule = _mixed_schedule(n_steps, config.fr_mix) if len(pools) == 2 else [True] * n_steps
        losses = []
        for use_first in schedule:
            k = 0 if use_first else 1
            batch = next(streams[k], None)
            if batch is None:
                streams[k] = iter(_batches(len(pools[k]), bs, rng))
                batch = next(streams[k])
            x = network_input(sample_patches(pools[k], rng, batch), dtype)
            trace = forward(model, x, TRAIN, rng)
            loss, grad = mse_loss(trace.acts[-1], x)
            _check_loss(loss, SCAE)
            sgd_step(model, backward(model, trace, grad, upto=len(spec.layers)), state, config,
                     config.lr0)
            losses.append(loss)
        metrics = val_metrics()
        train_log.add(EpochRecord(epoch, SCAE, config.lr0, float(np.mean(losses)), headline(metrics),
                                  time.perf_counter() - t0, metrics))
    return model, train_log


def _labeled(manifest):
    images = manifest.load_images()
    labels = manifest.labels
    if (labels < 0).any():
        raise ValueError("supervised training needs a labeled manifest")
    return images, labels


def _supervised_epoch(model, images, labels, state, config, lr, rng, after_step=None):
    dtype = model.dtype
    idx = logits_index(model.spec)
    losses = []
    for batch in _batches(len(images), config.batch_size, rng):
        x = network_input(sample_patches(images, rng, batch), dtype)
        trace = forward(model, x, TRAIN, rng, stop=idx)
        loss, grad = softmax_xent(trace.acts[-1], labels[batch])
        _check_loss(loss, SUPERVISED)
        sgd_step(model, backward(model, trace, grad), state, config, lr)
        losses.append(loss)
        if after_step is not None:
            after_step()
    return float(np.mean(losses))


def train_supervised(model, train, val, config, phase=SUPERVISED):
    """Cross-entropy training of the non-frozen layers on labeled synthetic patches.

    The learning rate is divided by lr_drop_factor when validation top-1 error has
    not improved for `patience` epochs; training stops after max_epochs, or at
    the next plateau once max_lr_drops drops have been made.
    """
    model = model.copy()
    images, labels = _labeled(train)
    val_images, val_labels = _labeled(val)
    val_x = fixed_patches(val_images, config.seed + 11, model.dtype)
    state = SGDState(model)
    train_log = TrainLog()
    lr, drops, best, stale = config.lr0, 0, np.inf, 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        loss = _supervised_epoch(model, images, labels, state, config, lr,
                                 _rng(config.seed, 4, epoch))
        err = top1_error(model, val_x, val_labels)
        train_log.add(EpochRecord(epoch, phase, lr, loss, err, time.perf_counter() - t0))
        if err < best:
            best, stale = err, 0
        else:
            stale += 1
        if stale >= config.patience:
            if drops >= config.max_lr_drops:
                break
            lr /= config.lr_drop_factor
            drops += 1
            stale = 0
    return model, train_log


class RankProjector:
    """Replaces a dense layer's weight by its best rank-k approximation.

    The singular basis of the previous projection seeds the next one, so after
    a single SGD step only the pairs touching the top-k directions need work.
    """

    def __init__(self, k):
        self.k = k
        self._basis = None

    def __call__(self, w):
        wt = np.asarray(w, dtype=np.float64)
        transpose = wt.shape[0] < wt.shape[1]
        if transpose:
            wt = wt.T
        if self.k >= wt.shape[1]:
            return w.copy()
        res, self._basis = truncated_svd(wt, self.k, self._basis)
        out = res.reconstruct()
        return (out.T if transpose else out).astype(w.dtype)


def train_rank_constrained(model, layer_id, k, train, val, config, min_steps=0, on_step=None):
    """Fine-tune with a hard rank-k projection of one FC weight after every step.

    Runs until the validation top-1 error stops improving for `patience` epochs
    (and at least `min_steps` steps have been taken), or max_epochs. `on_step`
    is called as on_step(step, model) after every projected update.
    """
    model = model.copy()
    j = model.spec.index_of(layer_id)
    if model.spec.layers[model.spec.weighted[j]].kind != FC:
        raise ValueError(f"layer {layer_id!r} is not fully connected")
    if "w" not in model.params[j]:
        raise ValueError(f"layer {layer_id!r} is already factorized")
    images, labels = _labeled(train)
    val_images, val_labels = _labeled(val)
    val_x = fixed_patches(val_images, config.seed + 11, model.dtype)
    project = RankProjector(k)
    p = model.params[j]
    p["w"] = project(p["w"])
    state = SGDState(model)
    steps = 0

    def after_step():
        nonlocal steps
        p["w"] = project(p["w"])
        steps += 1
        if on_step is not None:
            on_step(steps, model)

    train_log = TrainLog()
    best, stale = np.inf, 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        loss = _supervised_epoch(model, images, labels, state, config, config.lr0,
                                 _rng(config.seed, 5, epoch), after_step)
        err = top1_error(model, val_x, val_labels)
        train_log.add(EpochRecord(epoch, RANK_FT, config.lr0, loss, err, time.perf_counter() - t0,
                                  {"steps": steps}))
        if err < best:
            best, stale = err, 0
        else:
            stale += 1
        if stale >= config.patience and steps >= min_steps:
            break
    return model, train_log
