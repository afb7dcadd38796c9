"""Per-timestep activation maps and the masking they drive.

A map scores each timestep's contribution to one output unit: the
pre-pooling feature row dotted with that unit's dense weights.  Scores
are rescaled per trial to [0, 1] intensities; a trial with a constant
score profile carries no contrast and gets a neutral all-ones mask.

Masking multiplies a downsampled trial's channel values by the
intensities, timestep by timestep, so low-relevance segments are
attenuated before normalization ever sees them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .data import DOWNSAMPLED, Dataset
from .model import embed, head_forward

__all__ = [
    "CamMap",
    "compute_cam",
    "mask_trial",
    "mask_dataset",
    "mask_with_cams",
    "write_cams_csv",
    "read_cams_csv",
]


@dataclass(frozen=True)
class CamMap:
    """Relevance-over-time for one trial and one output unit."""

    trial_id: str
    class_index: int
    raw: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.float64)
        inten = np.asarray(self.intensity, dtype=np.float64)
        if raw.ndim != 1 or raw.shape != inten.shape:
            raise ValueError("raw and intensity must be equal-length 1-D arrays")
        if raw.size == 0:
            raise ValueError("empty activation map")
        if not (np.isfinite(raw).all() and np.isfinite(inten).all()):
            raise ValueError(f"{self.trial_id}: non-finite activation map")
        if inten.min() < 0.0 or inten.max() > 1.0:
            raise ValueError(f"{self.trial_id}: intensities must lie in [0, 1]")
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "intensity", inten)

    def __len__(self):
        return self.raw.size

    @staticmethod
    def from_raw(trial_id, class_index, raw):
        raw = np.asarray(raw, dtype=np.float64)
        lo, hi = float(raw.min()), float(raw.max())
        if hi > lo:
            intensity = (raw - lo) / (hi - lo)
        else:
            intensity = np.ones_like(raw)
        return CamMap(trial_id=trial_id, class_index=int(class_index),
                      raw=raw, intensity=intensity)


def compute_cam(bundle, trial, target_class=None):
    """Activation map of a downsampled trial for one output unit.

    ``target_class`` defaults to the predicted class (regression models
    have a single unit, index 0).
    """
    if bundle.mode == "autoencoder":
        raise ValueError("activation maps need a skill model, not an autoencoder")
    feats = embed(bundle, trial)
    out, pre_gap = head_forward(bundle, feats, capture=True)
    dense_idx = next(i for i, s in enumerate(bundle.groups["head"]) if s.kind == "dense")
    w = bundle.weights[f"head/{dense_idx}.w"]
    if target_class is None:
        target_class = int(np.argmax(out)) if bundle.mode == "classification" else 0
    if not 0 <= target_class < w.shape[1]:
        raise ValueError(f"class index {target_class} out of range for {w.shape[1]} outputs")
    raw = pre_gap @ w[:, target_class]
    return CamMap.from_raw(trial.trial_id, target_class, raw)


def mask_trial(trial, cam):
    """Attenuate a downsampled trial by its map's intensities."""
    if trial.stage != DOWNSAMPLED:
        raise ValueError(f"{trial.trial_id}: masking applies to downsampled trials")
    if cam.trial_id != trial.trial_id:
        raise ValueError(f"map for {cam.trial_id} applied to {trial.trial_id}")
    if len(cam) != trial.values.shape[0]:
        raise ValueError(
            f"{trial.trial_id}: map length {len(cam)} != trial length {trial.values.shape[0]}"
        )
    return replace(trial, values=trial.values * cam.intensity[:, None])


def mask_with_cams(dataset, cams):
    """Masked copy of a dataset; every trial needs a map in ``cams``."""
    missing = [t.trial_id for t in dataset.trials if t.trial_id not in cams]
    if missing:
        raise ValueError(f"no activation map for {len(missing)} trials, e.g. {missing[0]}")
    return Dataset([mask_trial(t, cams[t.trial_id]) for t in dataset.trials])


def mask_dataset(dataset, bundle):
    """Attenuate every trial by its own true-class activation map.

    Labeled trials use their label's output unit; unlabeled ones fall
    back to the predicted class.
    """
    cams = {}
    for t in dataset.trials:
        target = None
        if t.class_label is not None and bundle.class_names:
            target = bundle.class_names.index(t.class_label)
        cams[t.trial_id] = compute_cam(bundle, t, target_class=target)
    return mask_with_cams(dataset, cams)


def write_cams_csv(cams, path):
    """Persist maps one row per timestep, sorted by trial then time."""
    by_id = sorted(cams, key=lambda c: c.trial_id)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial_id", "class_index", "t", "raw", "intensity"])
        for cam in by_id:
            for t in range(len(cam)):
                w.writerow([cam.trial_id, cam.class_index, t,
                            repr(float(cam.raw[t])), repr(float(cam.intensity[t]))])


def read_cams_csv(path):
    """Inverse of write_cams_csv: mapping trial_id -> CamMap."""
    rows = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["trial_id", "class_index", "t", "raw", "intensity"]:
            raise ValueError(f"{path}: unrecognized activation-map header {header}")
        for row in r:
            tid, ci, t, raw, inten = row
            rows.setdefault(tid, []).append((int(t), int(ci), float(raw), float(inten)))
    cams = {}
    for tid, entries in rows.items():
        entries.sort()
        ts = [e[0] for e in entries]
        if ts != list(range(len(ts))):
            raise ValueError(f"{path}: {tid} has non-contiguous timesteps")
        classes = {e[1] for e in entries}
        if len(classes) != 1:
            raise ValueError(f"{path}: {tid} mixes class indices")
        cams[tid] = CamMap(
            trial_id=tid,
            class_index=entries[0][1],
            raw=np.array([e[2] for e in entries]),
            intensity=np.array([e[3] for e in entries]),
        )
    return cams
