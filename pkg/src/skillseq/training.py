"""Training loops: denoising autoencoder and frozen-encoder skill models.

Both loops share the same recipe: one sample per optimizer step, Adam
with kernel L2 decay, an activity penalty on every convolution output,
per-epoch reshuffling, a stratified validation split, and early stopping
on validation loss with best-weight restoration.  Training stops after
``patience`` consecutive epochs without strict improvement.

All trainable parameters live in one flat buffer; tensor leaves hold
views into it and their gradients accumulate into a parallel flat
gradient buffer, so an optimizer step is a handful of vectorized
operations regardless of layer count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .data import NORMALIZED, PASS_FAIL, fit_znorm, apply_znorm, one_hot, class_weights
from .layers import ForwardContext, init_stack_params, is_kernel_param, forward_stack
from .model import (ArchConfig, ModelBundle, build_classifier, encoder_specs,
                    decoder_specs, encode_values)
from .optim import AdamState, adam_step_masked
from .seeding import make_rng, PURPOSE

__all__ = ["TrainConfig", "TrainHistory", "add_gaussian_noise", "train_dae",
           "train_supervised", "train_classifier"]

_LOSSES = ("bce", "mse", "cosine")


def add_gaussian_noise(values, sigma, seed):
    """Corrupt a sequence with independent N(0, sigma^2) draws.

    Deterministic per seed; the caller keeps the clean array as the
    reconstruction target.  sigma = 0 returns an identical copy.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    values = np.asarray(values, dtype=np.float64)
    rng = make_rng(seed, PURPOSE["noise"])
    return values + rng.normal(0.0, sigma, size=values.shape)


@dataclass(frozen=True)
class TrainConfig:
    """One training run's recipe."""

    learning_rate: float
    max_epochs: int
    patience: int
    loss: str
    l2: float = 1e-5
    noise_sigma: float = 0.001
    val_fraction: float = 0.1
    seed: int = 0
    class_weighting: str = "balanced"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.loss not in _LOSSES:
            raise ValueError(f"loss must be one of {_LOSSES}, got '{self.loss}'")
        if not 0.0 < self.val_fraction < 0.5:
            raise ValueError(f"val_fraction must lie in (0, 0.5), got {self.val_fraction}")
        if self.l2 < 0 or self.noise_sigma < 0:
            raise ValueError("l2 and noise_sigma must be >= 0")
        if self.class_weighting not in ("balanced", "none"):
            raise ValueError(f"class_weighting must be balanced or none, got '{self.class_weighting}'")

    @staticmethod
    def dae_default(**overrides):
        base = dict(learning_rate=0.001, max_epochs=100, patience=4, loss="bce")
        base.update(overrides)
        return TrainConfig(**base)

    @staticmethod
    def classifier_default(**overrides):
        base = dict(learning_rate=0.0002, max_epochs=300, patience=20, loss="cosine")
        base.update(overrides)
        return TrainConfig(**base)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0


class _FlatParams:
    """Trainable parameter groups flattened into one buffer.

    ``tensors[group]`` wraps views into the buffer; gradients accumulate
    into views of a parallel buffer, so zeroing and stepping are single
    vector operations.
    """

    def __init__(self, group_arrays, trainable):
        entries = []
        for g in sorted(group_arrays):
            for k in sorted(group_arrays[g]):
                entries.append((g, k, group_arrays[g][k]))
        total = sum(a.size for g, _, a in entries if trainable.get(g, True))
        self.theta = np.empty(total)
        self.grad = np.zeros(total)
        self.decay_mask = np.zeros(total)
        self.tensors = {g: {} for g in group_arrays}
        off = 0
        for g, k, arr in entries:
            if trainable.get(g, True):
                view = self.theta[off:off + arr.size].reshape(arr.shape)
                view[...] = arr
                t = tz.Tensor(view, requires_grad=True)
                t.grad = self.grad[off:off + arr.size].reshape(arr.shape)
                if is_kernel_param(k):
                    self.decay_mask[off:off + arr.size] = 1.0
                off += arr.size
            else:
                t = tz.Tensor(arr, requires_grad=False)
            self.tensors[g][k] = t

    def zero_grads(self):
        self.grad[:] = 0.0

    def snapshot(self):
        return self.theta.copy()

    def restore(self, snap):
        self.theta[:] = snap

    def export(self):
        out = {}
        for g, params in self.tensors.items():
            for k, t in params.items():
                out[f"{g}/{k}"] = t.data.copy()
        return out


def _val_split(indices, strata, frac, seed):
    """Deterministic stratified split; strata with one member stay in train."""
    rng = make_rng(seed, PURPOSE["val_split"])
    by = {}
    for i in indices:
        by.setdefault(strata[i], []).append(i)
    val = []
    for s in sorted(by, key=str):
        members = list(by[s])
        rng.shuffle(members)
        n_v = int(round(frac * len(members)))
        n_v = min(n_v, len(members) - 1)
        val.extend(members[:n_v])
    if not val:
        sizes = {s: len(m) for s, m in by.items()}
        biggest = max(sorted(by, key=str), key=lambda s: sizes[s])
        if len(by[biggest]) > 1:
            val = [by[biggest][0]]
    val_set = set(val)
    train = [i for i in indices if i not in val_set]
    if not train:
        raise ValueError("validation split consumed all training samples")
    return train, sorted(val_set)


def _loss_node(kind, pred, target, weight):
    return tz.loss_eval(kind, pred, target, weight)


def _run_training(forward_train, forward_val, val_indices, train_indices,
                  flat, config):
    """Generic loop: per-sample Adam steps, early stopping, best restore."""
    opt = AdamState(learning_rate=config.learning_rate, l2=config.l2)
    history = TrainHistory()
    best = np.inf
    best_snap = flat.snapshot()
    wait = 0
    for epoch in range(1, config.max_epochs + 1):
        order = make_rng(config.seed, PURPOSE["shuffle"], epoch).permutation(len(train_indices))
        total = 0.0
        for oi in order:
            i = train_indices[oi]
            flat.zero_grads()
            loss = forward_train(i, epoch)
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            tz.backward(loss)
            adam_step_masked(opt, flat.theta, flat.grad, flat.decay_mask)
            total += float(loss.data)
        history.train_loss.append(total / max(len(train_indices), 1))
        vloss = float(np.mean([forward_val(i) for i in val_indices]))
        if not np.isfinite(vloss):
            raise FloatingPointError(f"non-finite validation loss at epoch {epoch}")
        history.val_loss.append(vloss)
        if vloss < best:
            best = vloss
            best_snap = flat.snapshot()
            history.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                history.stopped_epoch = epoch
                break
    else:
        history.stopped_epoch = config.max_epochs
    flat.restore(best_snap)
    return history


def train_dae(trials, minmax, config, arch=None):
    """Train the denoising autoencoder on normalized trials.

    Inputs are corrupted by the network's own noise layer (train mode
    only); targets are the clean sequences.  Returns a frozen
    autoencoder bundle and the loss history.
    """
    arch = arch or ArchConfig()
    if len(trials) < 2:
        raise ValueError("training needs at least two trials")
    for t in trials:
        if t.stage != NORMALIZED:
            raise ValueError(f"{t.trial_id}: train_dae expects normalized trials")
        if t.values.min() < 0.0 or t.values.max() > 1.0:
            raise ValueError(f"{t.trial_id}: values outside [0, 1]")
    in_ch = len(trials[0].channels)
    enc = encoder_specs(in_ch, arch, config.noise_sigma)
    dec = decoder_specs(in_ch, arch)
    rng = make_rng(config.seed, PURPOSE["init"], 1)
    groups = {
        "encoder": init_stack_params(enc, rng),
        "decoder": init_stack_params(dec, rng),
    }
    flat = _FlatParams(groups, {"encoder": True, "decoder": True})
    specs = {"encoder": enc, "decoder": dec}

    values = [t.values for t in trials]
    labels = {i: (trials[i].class_label or "") for i in range(len(trials))}
    train_idx, val_idx = _val_split(range(len(trials)), labels, config.val_fraction,
                                    config.seed)
    noise_rng = make_rng(config.seed, PURPOSE["noise"])

    def fwd(i, train):
        ctx = ForwardContext(train=train, rng=noise_rng,
                             activity_l2=config.l2 if train else 0.0)
        x = tz.constant(values[i])
        z = forward_stack(specs["encoder"], flat.tensors["encoder"], x, ctx)
        out = forward_stack(specs["decoder"], flat.tensors["decoder"], z, ctx)
        loss = _loss_node(config.loss, out, values[i], 1.0)
        if ctx.activity:
            loss = tz.add_n([loss] + ctx.activity)
        return loss

    history = _run_training(
        forward_train=lambda i, e: fwd(i, True),
        forward_val=lambda i: float(fwd(i, False).data),
        val_indices=val_idx, train_indices=train_idx,
        flat=flat, config=config,
    )
    bundle = ModelBundle(
        mode="autoencoder",
        groups=specs,
        weights=flat.export(),
        trainable={"encoder": False, "decoder": False},
        minmax=minmax,
        score_stats=None,
        class_names=None,
    )
    return bundle, history


def train_supervised(bundle, trials, config, labels=None):
    """Train the non-frozen head of a built skill model.

    Classification: one-hot targets, cosine loss, inverse-frequency
    class weights.  Regression: scores z-normalized with statistics
    fitted on these trials, squared-error loss.  ``labels`` overrides
    the targets stored on the trials (class names for classification,
    scores for regression).  Encoder features are precomputed once per
    trial since the encoder never updates.
    """
    mode = bundle.mode
    if mode not in ("classification", "regression"):
        raise ValueError(f"train_supervised needs a skill bundle, got mode '{mode}'")
    class_names = bundle.class_names
    if len(trials) < 2:
        raise ValueError("training needs at least two trials")
    for t in trials:
        if t.stage != NORMALIZED:
            raise ValueError(f"{t.trial_id}: train_supervised expects normalized trials")
    if mode == "classification" and config.loss == "bce":
        raise ValueError("bce loss is reserved for reconstruction training")
    if labels is not None and len(labels) != len(trials):
        raise ValueError(f"{len(labels)} labels for {len(trials)} trials")

    # frozen encoder: features computed once
    feats = [encode_values(bundle, t.values) for t in trials]

    score_stats = None
    if mode == "classification":
        given = labels if labels is not None else [t.class_label for t in trials]
        labels = []
        for t, lb in zip(trials, given):
            if lb is None:
                raise ValueError(f"{t.trial_id}: unlabeled trial in classification training")
            if lb not in class_names:
                raise ValueError(f"{t.trial_id}: unknown class '{lb}'")
            labels.append(lb)
        targets = [one_hot(lb, class_names) for lb in labels]
        if config.class_weighting == "balanced":
            weights = class_weights(labels, class_names)
        else:
            weights = {i: 1.0 for i in range(len(class_names))}
        sample_w = [weights[class_names.index(lb)] for lb in labels]
        strata = {i: labels[i] for i in range(len(trials))}
    else:
        scores = labels if labels is not None else [t.score for t in trials]
        for t, s in zip(trials, scores):
            if s is None:
                raise ValueError(f"{t.trial_id}: unscored trial in regression training")
        score_stats = fit_znorm(scores, ids=[t.trial_id for t in trials])
        targets = [np.array([apply_znorm(s, score_stats)]) for s in scores]
        sample_w = [1.0 for _ in trials]
        strata = {i: "" for i in range(len(trials))}

    head = bundle.groups["head"]
    flat = _FlatParams(
        {"encoder": bundle.group_params("encoder"), "head": bundle.group_params("head")},
        {"encoder": False, "head": True},
    )
    train_idx, val_idx = _val_split(range(len(trials)), strata, config.val_fraction,
                                    config.seed)

    def fwd(i, train):
        ctx = ForwardContext(train=train, activity_l2=config.l2 if train else 0.0)
        out = forward_stack(head, flat.tensors["head"], tz.constant(feats[i]), ctx)
        loss = _loss_node(config.loss, out, targets[i], sample_w[i])
        if ctx.activity:
            loss = tz.add_n([loss] + ctx.activity)
        return loss

    history = _run_training(
        forward_train=lambda i, e: fwd(i, True),
        forward_val=lambda i: float(fwd(i, False).data),
        val_indices=val_idx, train_indices=train_idx,
        flat=flat, config=config,
    )
    new_weights = dict(bundle.weights)
    new_weights.update({k: v for k, v in flat.export().items() if k.startswith("head/")})
    out = ModelBundle(
        mode=mode,
        groups=bundle.groups,
        weights=new_weights,
        trainable={"encoder": False, "head": True},
        minmax=bundle.minmax,
        score_stats=score_stats,
        class_names=bundle.class_names,
    )
    return out, history


def train_classifier(dae_bundle, trials, config, arch=None, mode="classification",
                     class_names=PASS_FAIL):
    """Build a skill model over the frozen encoder and train its head."""
    bundle = build_classifier(dae_bundle, mode, arch=arch, seed=config.seed,
                              class_names=class_names)
    return train_supervised(bundle, trials, config)
