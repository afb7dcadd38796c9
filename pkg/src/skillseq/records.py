"""Prediction records: the unit consumed by metrics and trust measures."""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .data import PASS_FAIL

__all__ = ["PredictionRecord", "write_records_csv", "read_records_csv",
           "records_csv_classes"]


@dataclass(frozen=True)
class PredictionRecord:
    """One evaluated trial.

    Classification fills ``actual``/``predicted`` (class indices) and
    ``confidences``; regression fills ``true_score``/``pred_score``.
    """

    trial_id: str
    subject_id: str
    trial_index: int
    actual: int | None = None
    predicted: int | None = None
    confidences: tuple | None = None
    true_score: float | None = None
    pred_score: float | None = None

    def __post_init__(self):
        if self.confidences is not None:
            if self.predicted is None:
                raise ValueError("confidences without a predicted class")
            total = sum(self.confidences)
            if not abs(total - 1.0) < 1e-9:
                raise ValueError(f"confidences must sum to 1, got {total!r}")


def _opt(v):
    return "" if v is None else repr(v)


def write_records_csv(records, path, classes=PASS_FAIL):
    """Lossless (repr round-trip) CSV serialization."""
    conf_cols = [f"conf_{c}" for c in classes]
    header = ["trial_id", "subject", "trial", "actual", "predicted",
              *conf_cols, "true_score", "pred_score"]
    lines = [",".join(header)]
    for r in records:
        confs = ["" for _ in classes] if r.confidences is None \
            else [repr(float(c)) for c in r.confidences]
        row = [
            r.trial_id, r.subject_id, str(r.trial_index),
            "" if r.actual is None else str(r.actual),
            "" if r.predicted is None else str(r.predicted),
            *confs,
            _opt(r.true_score), _opt(r.pred_score),
        ]
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _header_classes(header, path):
    """Class names encoded in the conf_* columns of a records header."""
    prefix = ["trial_id", "subject", "trial", "actual", "predicted"]
    suffix = ["true_score", "pred_score"]
    if header[:5] != prefix or header[-2:] != suffix:
        raise ValueError(f"{path}: unexpected records header {header}")
    middle = header[5:-2]
    if not middle or any(not col.startswith("conf_") for col in middle):
        raise ValueError(f"{path}: unexpected records header {header}")
    return tuple(col[len("conf_"):] for col in middle)


def records_csv_classes(path):
    """Class names a records file was written with, read from its header."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise ValueError(f"{path}: empty records file")
    return _header_classes(header, path)


def read_records_csv(path, classes=None):
    """Parse records back; ``classes=None`` takes names from the header."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty records file")
    header = rows[0]
    found = _header_classes(header, path)
    if classes is None:
        classes = found
    elif found != tuple(classes):
        raise ValueError(
            f"{path}: header classes {found} do not match expected {tuple(classes)}"
        )
    out = []
    nc = len(classes)
    for row in rows[1:]:
        if not row:
            continue
        confs = row[5:5 + nc]
        out.append(PredictionRecord(
            trial_id=row[0],
            subject_id=row[1],
            trial_index=int(row[2]),
            actual=int(row[3]) if row[3] != "" else None,
            predicted=int(row[4]) if row[4] != "" else None,
            confidences=tuple(float(c) for c in confs) if confs[0] != "" else None,
            true_score=float(row[5 + nc]) if row[5 + nc] != "" else None,
            pred_score=float(row[6 + nc]) if row[6 + nc] != "" else None,
        ))
    return out
