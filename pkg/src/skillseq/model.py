"""Network architecture, bundles, and prediction.

The embedding network is a denoising autoencoder: a noise layer, a
widening convolution, a residual attention block, and a narrowing
convolution produce a per-timestep embedding; the decoder mirrors the
encoder (without attention) and ends in a sigmoid so reconstructions
live in [0, 1].  Skill models reuse the frozen encoder and add a small
dilated attention block over the embedding, global average pooling, and
a dense head (2-way softmax for pass/fail, single linear unit for
scores).

A ModelBundle carries everything needed to reproduce predictions:
layer specs per group, named weights, per-group trainable flags, the
preprocessing statistics the weights were fitted against, and the mode.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as tz
from .data import (DOWNSAMPLED, NORMALIZED, PASS_FAIL, MinMaxStats, ScoreStats,
                   apply_minmax, invert_znorm)
from .layers import ForwardContext, LayerSpec, forward_stack, init_stack_params, wrap_params
from .records import PredictionRecord
from .seeding import make_rng, PURPOSE

__all__ = [
    "ArchConfig",
    "ModelBundle",
    "encoder_specs",
    "decoder_specs",
    "head_specs",
    "build_classifier",
    "embed",
    "reconstruct",
    "predict",
    "head_forward",
]

MODES = ("autoencoder", "classification", "regression")


@dataclass(frozen=True)
class ArchConfig:
    """Width/shape knobs for the default architecture."""

    enc_width: int = 16
    emb_channels: int = 8
    kernel_size: int = 5
    reduction: int = 2
    clf_width: int = 16
    clf_dilation: int = 2

    def __post_init__(self):
        for name in ("enc_width", "emb_channels", "clf_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def encoder_specs(in_channels, arch, noise_sigma):
    return (
        LayerSpec("gaussian-noise", sigma=noise_sigma),
        LayerSpec("conv1d", in_channels=in_channels, out_channels=arch.enc_width,
                  kernel_size=arch.kernel_size),
        LayerSpec("selu"),
        LayerSpec("residual-scse-block", in_channels=arch.enc_width,
                  kernel_size=arch.kernel_size, reduction=arch.reduction),
        LayerSpec("conv1d", in_channels=arch.enc_width, out_channels=arch.emb_channels,
                  kernel_size=arch.kernel_size),
        LayerSpec("selu"),
    )


def decoder_specs(out_channels, arch):
    return (
        LayerSpec("conv1d", in_channels=arch.emb_channels, out_channels=arch.enc_width,
                  kernel_size=arch.kernel_size),
        LayerSpec("selu"),
        LayerSpec("conv1d", in_channels=arch.enc_width, out_channels=out_channels,
                  kernel_size=arch.kernel_size),
        LayerSpec("sigmoid"),
    )


def head_specs(arch, n_out, classification):
    specs = [
        LayerSpec("conv1d", in_channels=arch.emb_channels, out_channels=arch.clf_width,
                  kernel_size=1),
        LayerSpec("selu"),
        LayerSpec("residual-scse-block", in_channels=arch.clf_width,
                  kernel_size=arch.kernel_size, dilation=arch.clf_dilation,
                  reduction=arch.reduction),
        LayerSpec("gap"),
        LayerSpec("dense", in_channels=arch.clf_width, out_channels=n_out),
    ]
    if classification:
        specs.append(LayerSpec("softmax"))
    return tuple(specs)


@dataclass
class ModelBundle:
    """Weights plus everything needed to reproduce their predictions."""

    mode: str
    groups: dict            # group name -> tuple of LayerSpec
    weights: dict           # "group/<i>.<field>" -> ndarray
    trainable: dict         # group name -> bool
    minmax: MinMaxStats | None = None
    score_stats: ScoreStats | None = None
    class_names: tuple | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode '{self.mode}'; expected one of {MODES}")
        if "encoder" not in self.groups:
            raise ValueError("bundle must contain an encoder group")
        if self.mode == "autoencoder" and "decoder" not in self.groups:
            raise ValueError("autoencoder bundle needs a decoder group")
        if self.mode in ("classification", "regression"):
            head = self.groups.get("head")
            if not head:
                raise ValueError(f"{self.mode} bundle needs a head group")
            if self.trainable.get("encoder", True):
                raise ValueError("encoder must be frozen in a skill-model bundle")
            dense = [s for s in head if s.kind == "dense"]
            if len(dense) != 1:
                raise ValueError("head must contain exactly one dense layer")
            if self.mode == "classification":
                if head[-1].kind != "softmax" or dense[0].out_channels != 2:
                    raise ValueError("classification head must end in a 2-way softmax")
                if self.class_names is None or len(self.class_names) != 2:
                    raise ValueError("classification bundle needs two class names")
            else:
                if head[-1].kind == "softmax" or dense[0].out_channels != 1:
                    raise ValueError("regression head must be a single linear unit")
        for g, specs in self.groups.items():
            for i, s in enumerate(specs):
                for fname in _spec_fields(s):
                    key = f"{g}/{i}.{fname}"
                    if key not in self.weights:
                        raise ValueError(f"missing weight array '{key}'")

    def group_params(self, group):
        pfx = f"{group}/"
        return {k[len(pfx):]: v for k, v in self.weights.items() if k.startswith(pfx)}


def _spec_fields(spec):
    from .layers import _spec_param_shapes
    return _spec_param_shapes(spec).keys()


def _group_tensor_params(bundle, group):
    return wrap_params(bundle.group_params(group), requires_grad=False)


def _normalized(bundle, trial):
    if trial.stage == NORMALIZED:
        raise ValueError(
            f"{trial.trial_id}: already normalized; pass the downsampled trial so "
            "the bundle's own statistics apply"
        )
    if trial.stage != DOWNSAMPLED:
        raise ValueError(f"{trial.trial_id}: predict needs a downsampled trial")
    if bundle.minmax is None:
        raise ValueError("bundle carries no normalization statistics")
    return apply_minmax(trial, bundle.minmax)


def embed(bundle, trial):
    """Frozen-encoder embedding of a downsampled trial: (T, emb) array."""
    norm = _normalized(bundle, trial)
    return encode_values(bundle, norm.values)


def encode_values(bundle, values):
    """Encoder forward over already-normalized (T, C) values."""
    x = _forward_group(bundle, "encoder", values)
    return x.data


def _forward_group(bundle, group, values, ctx=None):
    params = _group_tensor_params(bundle, group)
    return forward_stack(bundle.groups[group], params, tz.constant(values), ctx)


def head_forward(bundle, features, capture=False):
    """Head forward over encoder features; optionally returns pre-GAP
    activations (for attribution maps)."""
    ctx = ForwardContext()
    out = _forward_group(bundle, "head", features, ctx)
    if capture:
        return out.data, ctx.captures["pre_gap"].data
    return out.data


def reconstruct(bundle, trial):
    """Autoencoder reconstruction in normalized units."""
    if bundle.mode != "autoencoder":
        raise ValueError(f"reconstruct needs an autoencoder bundle, got {bundle.mode}")
    norm = _normalized(bundle, trial)
    z = encode_values(bundle, norm.values)
    return _forward_group(bundle, "decoder", z).data


def build_classifier(dae_bundle, mode, arch=None, seed=0, class_names=PASS_FAIL):
    """Attach a fresh skill head to a trained autoencoder's encoder.

    The encoder group (specs and weights) is copied verbatim and stays
    frozen; only the head will train.
    """
    if dae_bundle.mode != "autoencoder":
        raise ValueError(f"expected an autoencoder bundle, got {dae_bundle.mode}")
    if mode not in ("classification", "regression"):
        raise ValueError(f"mode must be classification or regression, got '{mode}'")
    arch = arch or ArchConfig()
    emb = dae_bundle.groups["encoder"][-2].out_channels
    if emb != arch.emb_channels:
        arch = replace(arch, emb_channels=emb)
    n_out = len(class_names) if mode == "classification" else 1
    head = head_specs(arch, n_out, mode == "classification")
    rng = make_rng(seed, PURPOSE["init"], 2)
    weights = {f"head/{k}": v for k, v in init_stack_params(head, rng).items()}
    for k, v in dae_bundle.weights.items():
        if k.startswith("encoder/"):
            weights[k] = v.copy()
    return ModelBundle(
        mode=mode,
        groups={"encoder": dae_bundle.groups["encoder"], "head": head},
        weights=weights,
        trainable={"encoder": False, "head": True},
        minmax=dae_bundle.minmax,
        score_stats=None,
        class_names=tuple(class_names) if mode == "classification" else None,
    )


def predict(bundle, trial):
    """PredictionRecord for one downsampled trial.

    Classification: per-class confidences and the argmax class (lowest
    index wins ties).  Regression: score mapped back to original units.
    """
    if bundle.mode == "autoencoder":
        raise ValueError("cannot predict with an autoencoder bundle; build a skill model")
    norm = _normalized(bundle, trial)
    feats = encode_values(bundle, norm.values)
    out = head_forward(bundle, feats)
    actual = None
    if trial.class_label is not None and bundle.class_names \
            and trial.class_label in bundle.class_names:
        actual = bundle.class_names.index(trial.class_label)
    if bundle.mode == "classification":
        conf = tuple(float(c) for c in out)
        pred = int(np.argmax(out))  # np.argmax returns the first (lowest) maximum
        return PredictionRecord(
            trial_id=trial.trial_id, subject_id=trial.subject_id,
            trial_index=trial.trial_index,
            actual=actual, predicted=pred, confidences=conf,
            true_score=trial.score, pred_score=None,
        )
    if bundle.score_stats is None:
        raise ValueError("regression bundle carries no score statistics")
    z = float(out[0])
    return PredictionRecord(
        trial_id=trial.trial_id, subject_id=trial.subject_id,
        trial_index=trial.trial_index,
        actual=actual, predicted=None, confidences=None,
        true_score=trial.score,
        pred_score=invert_znorm(z, bundle.score_stats),
    )
