"""Shared fixtures: tiny datasets and one small trained model.

Training-based tests reuse the session-scoped bundles below so the unit
suite stays fast; anything probing training behavior itself builds its
own throwaway configuration.
"""

from __future__ import annotations

import numpy as np
import pytest

from skillseq.data import (
    Dataset,
    Trial,
    apply_minmax,
    fit_minmax,
    prepare_stage2,
)
from skillseq.model import ArchConfig
from skillseq.synth import SynthSpec, synth_dataset
from skillseq.training import TrainConfig, train_classifier, train_dae


def make_trial(values, subject="S1", index=0, rate=1.0, channels=None,
               score=None, label=None, stage=0):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if channels is None:
        channels = tuple(f"c{i}" for i in range(values.shape[1]))
    return Trial(subject_id=subject, trial_index=index, sample_rate_hz=rate,
                 channels=tuple(channels), values=values, score=score,
                 class_label=label, stage=stage)


SMALL_ARCH = ArchConfig(enc_width=6, emb_channels=4, kernel_size=3,
                        reduction=2, clf_width=6, clf_dilation=2)


@pytest.fixture(scope="session")
def small_dataset():
    return synth_dataset(SynthSpec(n_subjects=4, trials_per_subject=10, seed=5))


@pytest.fixture(scope="session")
def small_normalized(small_dataset):
    stage2 = [prepare_stage2(t) for t in small_dataset.trials]
    minmax = fit_minmax(stage2)
    return [apply_minmax(t, minmax) for t in stage2], minmax


@pytest.fixture(scope="session")
def small_dae(small_normalized):
    trials, minmax = small_normalized
    cfg = TrainConfig(learning_rate=0.001, max_epochs=2, patience=4,
                      loss="bce", seed=1)
    bundle, history = train_dae(trials, minmax, cfg, SMALL_ARCH)
    return bundle, history


@pytest.fixture(scope="session")
def small_classifier(small_dae, small_normalized):
    trials, _ = small_normalized
    dae_bundle, _ = small_dae
    cfg = TrainConfig(learning_rate=0.0007, max_epochs=3, patience=20,
                      loss="cosine", seed=1)
    bundle, history = train_classifier(dae_bundle, trials, cfg, SMALL_ARCH)
    return bundle, history


@pytest.fixture(scope="session")
def small_regressor(small_dae, small_normalized):
    trials, _ = small_normalized
    dae_bundle, _ = small_dae
    cfg = TrainConfig(learning_rate=0.0007, max_epochs=3, patience=20,
                      loss="mse", seed=1)
    bundle, history = train_classifier(dae_bundle, trials, cfg, SMALL_ARCH,
                                       mode="regression")
    return bundle, history
