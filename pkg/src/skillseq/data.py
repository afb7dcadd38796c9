"""Trial containers, CSV ingestion, and the preprocessing chain.

A trial moves through explicit stages:

    RAW (0) -> FILLED (1) -> DOWNSAMPLED (2) -> NORMALIZED (3)

Gap filling replaces missing detections, downsampling reduces the frame
rate, min-max normalization maps each channel into [0, 1] using
statistics fitted on training trials only.  Every stage transition is
enforced so statistics can never leak across the fit/apply boundary.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "RAW", "FILLED", "DOWNSAMPLED", "NORMALIZED",
    "PASS_FAIL", "GRS_LEVELS",
    "Trial", "Dataset", "MinMaxStats", "ScoreStats",
    "TrialFormatError",
    "fill_gaps", "downsample",
    "fit_minmax", "apply_minmax", "invert_minmax",
    "fit_znorm", "apply_znorm", "invert_znorm",
    "one_hot", "class_weights",
    "parse_trial_csv", "parse_trial_text", "write_trial_csv",
    "load_manifest", "write_manifest", "dataset_fingerprint",
    "prepare_stage2",
]

RAW, FILLED, DOWNSAMPLED, NORMALIZED = 0, 1, 2, 3
_STAGE_NAMES = {0: "raw", 1: "filled", 2: "downsampled", 3: "normalized"}

PASS_FAIL = ("pass", "fail")
GRS_LEVELS = ("novice", "intermediate", "expert")


class TrialFormatError(ValueError):
    """Raised for malformed trial or manifest files."""


@dataclass
class Trial:
    """One recorded exercise: a (T, C) float64 value matrix plus labels.

    NaN cells mark missing detections; they are only legal before the
    FILLED stage.  ``score`` and ``class_label`` are None when the trial
    is unlabeled.
    """

    subject_id: str
    trial_index: int
    sample_rate_hz: float
    channels: tuple
    values: np.ndarray
    score: float | None = None
    class_label: str | None = None
    stage: int = RAW

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"values must be 2-D (T, C), got shape {self.values.shape}")
        if self.values.shape[1] != len(self.channels):
            raise ValueError(
                f"{len(self.channels)} channel names but {self.values.shape[1]} value columns"
            )
        if self.values.shape[0] < 1:
            raise ValueError("trial must contain at least one frame")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        if self.stage >= FILLED and np.isnan(self.values).any():
            raise ValueError(f"NaN values not allowed at stage {_STAGE_NAMES[self.stage]}")

    @property
    def trial_id(self):
        return f"{self.subject_id}:{self.trial_index}"

    @property
    def n_frames(self):
        return self.values.shape[0]


def _require_stage(trial, stage, op):
    if trial.stage != stage:
        raise ValueError(
            f"{op} requires a {_STAGE_NAMES[stage]} trial, "
            f"got {_STAGE_NAMES[trial.stage]} ({trial.trial_id})"
        )


def fill_gaps(trial):
    """Replace missing runs with constants; RAW -> FILLED.

    An interior gap becomes the mean of its two nearest observed
    neighbors; leading and trailing gaps copy the nearest observed value.
    A channel with no observed value at all is rejected.
    """
    _require_stage(trial, RAW, "fill_gaps")
    vals = trial.values.copy()
    for c, name in enumerate(trial.channels):
        col = vals[:, c]
        valid = np.flatnonzero(~np.isnan(col))
        if valid.size == 0:
            raise ValueError(f"channel '{name}' of {trial.trial_id} has no observed values")
        if valid.size == col.size:
            continue
        first, last = valid[0], valid[-1]
        col[:first] = col[first]
        col[last + 1:] = col[last]
        for i, j in zip(valid[:-1], valid[1:]):
            if j > i + 1:
                col[i + 1:j] = 0.5 * (col[i] + col[j])
    return replace(trial, values=vals, stage=FILLED)


def downsample(trial, target_hz=1.0):
    """Keep every stride-th frame starting at frame 0; FILLED -> DOWNSAMPLED.

    stride = floor(rate/target + 0.5), so recorded rates that are near
    multiples of the target collapse to the intended integer stride.
    """
    _require_stage(trial, FILLED, "downsample")
    if target_hz <= 0:
        raise ValueError(f"target_hz must be > 0, got {target_hz}")
    stride = int(math.floor(trial.sample_rate_hz / target_hz + 0.5))
    if stride < 1:
        raise ValueError(
            f"cannot downsample {trial.sample_rate_hz} Hz to {target_hz} Hz (stride < 1)"
        )
    vals = trial.values[::stride].copy()
    return replace(
        trial,
        values=vals,
        sample_rate_hz=trial.sample_rate_hz / stride,
        stage=DOWNSAMPLED,
    )


def prepare_stage2(trial, target_hz=1.0):
    """fill_gaps + downsample convenience."""
    return downsample(fill_gaps(trial), target_hz=target_hz)


@dataclass(frozen=True)
class MinMaxStats:
    """Per-channel [min, max] fitted on a known set of trials.

    ``source_ids`` records provenance so leakage checks can verify that
    no evaluation trial contributed to the fit.
    """

    channels: tuple
    mins: np.ndarray
    maxs: np.ndarray
    source_ids: tuple

    def to_dict(self):
        return {
            "channels": list(self.channels),
            "mins": [float(v) for v in self.mins],
            "maxs": [float(v) for v in self.maxs],
            "source_ids": list(self.source_ids),
        }

    @staticmethod
    def from_dict(d):
        return MinMaxStats(
            channels=tuple(d["channels"]),
            mins=np.array(d["mins"], dtype=np.float64),
            maxs=np.array(d["maxs"], dtype=np.float64),
            source_ids=tuple(d["source_ids"]),
        )


def fit_minmax(trials):
    """Per-channel extrema over downsampled trials."""
    if not trials:
        raise ValueError("fit_minmax needs at least one trial")
    channels = trials[0].channels
    mins = np.full(len(channels), np.inf)
    maxs = np.full(len(channels), -np.inf)
    ids = []
    for t in trials:
        _require_stage(t, DOWNSAMPLED, "fit_minmax")
        if t.channels != channels:
            raise ValueError(
                f"channel mismatch: {t.trial_id} has {t.channels}, expected {channels}"
            )
        mins = np.minimum(mins, t.values.min(axis=0))
        maxs = np.maximum(maxs, t.values.max(axis=0))
        ids.append(t.trial_id)
    for c, name in enumerate(channels):
        if not maxs[c] > mins[c]:
            raise ValueError(f"channel '{name}' is constant over the fit set (zero range)")
    return MinMaxStats(channels=channels, mins=mins, maxs=maxs, source_ids=tuple(ids))


def apply_minmax(trial, stats):
    """Map values into [0, 1] with clamping; DOWNSAMPLED -> NORMALIZED."""
    _require_stage(trial, DOWNSAMPLED, "apply_minmax")
    if trial.channels != stats.channels:
        raise ValueError(
            f"channel mismatch: trial has {trial.channels}, stats fit on {stats.channels}"
        )
    rng = stats.maxs - stats.mins
    vals = np.clip((trial.values - stats.mins) / rng, 0.0, 1.0)
    return replace(trial, values=vals, stage=NORMALIZED)


def invert_minmax(values, stats):
    """Map normalized values back to original units."""
    return np.asarray(values) * (stats.maxs - stats.mins) + stats.mins


@dataclass(frozen=True)
class ScoreStats:
    """Mean and population standard deviation of training scores."""

    mean: float
    std: float
    source_ids: tuple

    def to_dict(self):
        return {"mean": self.mean, "std": self.std, "source_ids": list(self.source_ids)}

    @staticmethod
    def from_dict(d):
        return ScoreStats(mean=float(d["mean"]), std=float(d["std"]),
                          source_ids=tuple(d["source_ids"]))


def fit_znorm(scores, ids=None):
    """Fit score statistics from plain scores or from scored trials."""
    items = list(scores)
    vals = []
    for t in items:
        if hasattr(t, "score"):
            if t.score is None:
                raise ValueError(f"{t.trial_id} has no score; cannot fit score statistics")
            vals.append(float(t.score))
        else:
            vals.append(float(t))
    if ids is not None:
        out_ids = list(ids)
    else:
        out_ids = [t.trial_id for t in items if hasattr(t, "trial_id")]
        if len(out_ids) != len(items):
            out_ids = []
    if len(vals) < 2:
        raise ValueError("need at least two scores to fit score statistics")
    arr = np.array(vals, dtype=np.float64)
    std = float(arr.std(ddof=0))
    if std == 0.0:
        raise ValueError("scores are constant over the fit set (zero spread)")
    return ScoreStats(mean=float(arr.mean()), std=std, source_ids=tuple(out_ids))


def apply_znorm(score, stats):
    return (score - stats.mean) / stats.std


def invert_znorm(z, stats):
    return z * stats.std + stats.mean


def one_hot(label, classes=PASS_FAIL):
    """Unit vector for a class label under a fixed class order.

    ``classes`` may also be a class count: 2 selects the pass/fail
    order, 3 the novice/intermediate/expert order.  Integer labels are
    taken as indices directly.
    """
    if isinstance(classes, (int, np.integer)):
        orders = {2: PASS_FAIL, 3: GRS_LEVELS}
        if classes not in orders:
            raise ValueError(f"no fixed class order for {classes} classes")
        classes = orders[classes]
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        idx = int(label)
        if not 0 <= idx < len(classes):
            raise ValueError(f"label index {idx} outside [0, {len(classes)})")
    else:
        if label not in classes:
            raise ValueError(f"unknown class '{label}'; expected one of {classes}")
        idx = classes.index(label)
    v = np.zeros(len(classes))
    v[idx] = 1.0
    return v


def class_weights(labels, classes=PASS_FAIL):
    """Inverse-frequency weights: N / (K * N_class), keyed by class index."""
    counts = [sum(1 for lb in labels if lb == c) for c in classes]
    n, k = len(labels), len(classes)
    if any(cnt == 0 for cnt in counts):
        missing = [c for c, cnt in zip(classes, counts) if cnt == 0]
        raise ValueError(f"no samples for class(es) {missing}; cannot weight")
    return {i: n / (k * cnt) for i, cnt in enumerate(counts)}


# ---------------------------------------------------------------------------
# trial CSV format
# ---------------------------------------------------------------------------

_REQUIRED_HEADER_KEYS = ("subject", "trial", "rate_hz")
_HEADER_KEYS = _REQUIRED_HEADER_KEYS + ("score", "class")


def parse_trial_csv(path):
    """Parse one trial file.

    Format: ``# key=value`` comment headers (subject, trial, rate_hz,
    optional score/class with NA for absent), then a ``t,<ch>,...``
    header row, then one row per frame.  Empty cells mark missing
    detections.  Errors carry the line number and column name.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    return parse_trial_text(text, origin=str(path))


def parse_trial_text(text, origin="<string>"):
    meta = {}
    lines = text.splitlines()
    i = 0
    for i, line in enumerate(lines):
        if not line.startswith("#"):
            break
        body = line[1:].strip()
        if "=" not in body:
            raise TrialFormatError(f"{origin} line {i + 1}: header comment without '='")
        key, _, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _HEADER_KEYS:
            raise TrialFormatError(f"{origin} line {i + 1}: unknown header key '{key}'")
        if key in meta:
            raise TrialFormatError(f"{origin} line {i + 1}: duplicate header key '{key}'")
        meta[key] = value
    else:
        i = len(lines)
    for key in _REQUIRED_HEADER_KEYS:
        if key not in meta:
            raise TrialFormatError(f"{origin}: missing required header '# {key}='")

    try:
        trial_index = int(meta["trial"])
    except ValueError:
        raise TrialFormatError(f"{origin}: trial must be an integer, got '{meta['trial']}'")
    try:
        rate = float(meta["rate_hz"])
    except ValueError:
        raise TrialFormatError(f"{origin}: rate_hz must be numeric, got '{meta['rate_hz']}'")

    score = None
    if meta.get("score", "NA") != "NA":
        try:
            score = float(meta["score"])
        except ValueError:
            raise TrialFormatError(f"{origin}: score must be numeric or NA, got '{meta['score']}'")
    label = None
    if meta.get("class", "NA") != "NA":
        label = meta["class"]

    rows = list(csv.reader(io.StringIO("\n".join(lines[i:]))))
    if not rows:
        raise TrialFormatError(f"{origin}: missing column header row")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "t":
        raise TrialFormatError(f"{origin} line {i + 1}: first column must be 't', got '{header[0] if header else ''}'")
    channels = tuple(header[1:])
    if len(channels) < 1:
        raise TrialFormatError(f"{origin}: no channel columns")
    if len(set(channels)) != len(channels):
        raise TrialFormatError(f"{origin}: duplicate channel names in {channels}")

    data = []
    last_t = None
    for r, row in enumerate(rows[1:]):
        lineno = i + 2 + r
        if len(row) == 0 or (len(row) == 1 and row[0].strip() == ""):
            continue
        if len(row) != len(header):
            raise TrialFormatError(
                f"{origin} line {lineno}: expected {len(header)} fields, got {len(row)}"
            )
        try:
            t_val = int(row[0])
        except ValueError:
            raise TrialFormatError(f"{origin} line {lineno}, column 't': non-integer value '{row[0]}'")
        if last_t is not None and t_val <= last_t:
            raise TrialFormatError(
                f"{origin} line {lineno}, column 't': timestamp {t_val} not increasing (previous {last_t})"
            )
        last_t = t_val
        vals = np.empty(len(channels))
        for c, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell == "":
                vals[c] = np.nan
            else:
                try:
                    vals[c] = float(cell)
                except ValueError:
                    raise TrialFormatError(
                        f"{origin} line {lineno}, column '{channels[c]}': non-numeric value '{cell}'"
                    )
        data.append(vals)
    if not data:
        raise TrialFormatError(f"{origin}: no data rows")

    try:
        return Trial(
            subject_id=meta["subject"],
            trial_index=trial_index,
            sample_rate_hz=rate,
            channels=channels,
            values=np.vstack(data),
            score=score,
            class_label=label,
            stage=RAW,
        )
    except ValueError as e:
        raise TrialFormatError(f"{origin}: {e}")


def write_trial_csv(trial, path):
    """Serialize a trial; exact inverse of parse_trial_csv for RAW trials."""
    buf = [
        f"# subject={trial.subject_id}",
        f"# trial={trial.trial_index}",
        f"# rate_hz={trial.sample_rate_hz!r}",
        f"# score={'NA' if trial.score is None else repr(trial.score)}",
        f"# class={'NA' if trial.class_label is None else trial.class_label}",
        "t," + ",".join(trial.channels),
    ]
    for t in range(trial.n_frames):
        cells = [str(t)]
        for v in trial.values[t]:
            cells.append("" if np.isnan(v) else repr(float(v)))
        buf.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(buf) + "\n")


# ---------------------------------------------------------------------------
# datasets and manifests
# ---------------------------------------------------------------------------

class Dataset:
    """A list of trials with uniform channel layout and unique ids."""

    def __init__(self, trials):
        trials = list(trials)
        if not trials:
            raise ValueError("dataset must contain at least one trial")
        channels = trials[0].channels
        seen = set()
        for t in trials:
            if t.channels != channels:
                raise ValueError(
                    f"channel mismatch: {t.trial_id} has {t.channels}, expected {channels}"
                )
            if t.trial_id in seen:
                raise ValueError(f"duplicate trial id {t.trial_id}")
            seen.add(t.trial_id)
        self.trials = trials
        self.channels = channels
        self._by_id = {t.trial_id: t for t in trials}

    def __len__(self):
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    def by_id(self, trial_id):
        if trial_id not in self._by_id:
            raise KeyError(f"no trial with id {trial_id}")
        return self._by_id[trial_id]

    @property
    def ids(self):
        return [t.trial_id for t in self.trials]

    def subjects(self):
        return sorted({t.subject_id for t in self.trials})

    def labels(self):
        return [t.class_label for t in self.trials]

    def imbalance_ratio(self):
        """Majority / minority class count; None unless every trial is labeled."""
        labels = self.labels()
        if any(lb is None for lb in labels):
            return None
        counts = {}
        for lb in labels:
            counts[lb] = counts.get(lb, 0) + 1
        if len(counts) < 2:
            return None
        return max(counts.values()) / min(counts.values())

    def map_trials(self, fn):
        return Dataset([fn(t) for t in self.trials])


def load_manifest(path):
    """Read a ``path,subject,trial`` manifest and parse every trial file.

    Relative paths resolve against the manifest's directory.  The
    subject/trial columns must agree with each file's own header.
    """
    base = os.path.dirname(os.path.abspath(path))
    trials = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["path", "subject", "trial"]:
        raise TrialFormatError(f"{path}: manifest header must be 'path,subject,trial'")
    for r, row in enumerate(rows[1:]):
        if len(row) == 0 or (len(row) == 1 and row[0].strip() == ""):
            continue
        if len(row) != 3:
            raise TrialFormatError(f"{path} line {r + 2}: expected 3 fields, got {len(row)}")
        tpath, subject, tindex = row[0].strip(), row[1].strip(), row[2].strip()
        full = tpath if os.path.isabs(tpath) else os.path.join(base, tpath)
        trial = parse_trial_csv(full)
        if trial.subject_id != subject or str(trial.trial_index) != tindex:
            raise TrialFormatError(
                f"{path} line {r + 2}: manifest says {subject}:{tindex}, "
                f"file says {trial.trial_id}"
            )
        trials.append(trial)
    return Dataset(trials)


def write_manifest(dataset, paths, out_path):
    """Write a manifest for trials stored at the given (parallel) paths."""
    base = os.path.dirname(os.path.abspath(out_path))
    lines = ["path,subject,trial"]
    for trial, p in zip(dataset.trials, paths):
        rel = os.path.relpath(p, base)
        lines.append(f"{rel},{trial.subject_id},{trial.trial_index}")
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def dataset_fingerprint(dataset):
    """sha256 over a canonical serialization of every trial, order-free."""
    h = hashlib.sha256()
    for t in sorted(dataset.trials, key=lambda t: t.trial_id):
        head = (
            f"{t.subject_id}|{t.trial_index}|{t.sample_rate_hz!r}|"
            f"{','.join(t.channels)}|{t.score!r}|{t.class_label}|{t.stage}|"
        )
        h.update(head.encode("utf-8"))
        h.update(np.ascontiguousarray(t.values, dtype="<f8").tobytes())
    return h.hexdigest()
