"""Cross-validated training runs and the masking study built on them.

A run takes a dataset plus RunSettings, trains one embedding + skill
model per fold (training data only: normalization statistics, class
weights, and validation splits never see the test side), and persists
everything needed to replay it: the resolved settings, the dataset
fingerprint, the fold roster, per-fold weights, predictions, and
activation maps.  Reports are canonical text, so a replay from the same
artifacts is byte-identical.

The masking study (validate_cams) reloads a finished run, attenuates
every trial with the activation map computed when that trial was in the
test fold, retrains under the identical roster and derived seeds, and
compares per-fold metrics with a one-sided signed-rank test.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .bundle import save_bundle
from .data import (
    DOWNSAMPLED,
    RAW,
    PASS_FAIL,
    Dataset,
    dataset_fingerprint,
    apply_minmax,
    fit_minmax,
    load_manifest,
    prepare_stage2,
)
from .explain import compute_cam, mask_with_cams, read_cams_csv, write_cams_csv
from .folds import FoldAssignment, loso_folds, louo_folds, stratified_kfold
from .metrics import binary_metrics, roc_auc, spearman, wilcoxon_one_sided
from .model import ArchConfig, predict
from .records import read_records_csv, write_records_csv
from .reports import fmt_value, kv_line
from .training import TrainConfig, train_classifier, train_dae

__all__ = [
    "RunSettings",
    "FoldOutcome",
    "RunResult",
    "MaskingStudy",
    "parse_scheme",
    "run_cv",
    "validate_cams",
    "load_run_settings",
    "derive_fold_seed",
    "encoder_fingerprint",
    "settings_text",
    "metrics_report_text",
]

CLASSIFICATION_METRICS = ("accuracy", "auc", "sensitivity", "specificity")
REGRESSION_METRICS = ("spearman", "spearman_p")

SETTINGS_FILE = "run.cfg"
FOLDS_FILE = "folds.txt"
METRICS_FILE = "metrics.txt"
MASKING_FILE = "cam_validation.txt"


def parse_scheme(token):
    """'stratified<k>' | 'loso' | 'louo' -> (kind, k or None)."""
    if token in ("loso", "louo"):
        return token, None
    if token.startswith("stratified"):
        tail = token[len("stratified"):]
        if tail.isdigit() and int(tail) >= 2:
            return "stratified", int(tail)
    raise ValueError(
        f"unrecognized scheme '{token}' (expected stratified<k>, loso, or louo)"
    )


@dataclass(frozen=True)
class RunSettings:
    """Everything that determines a run besides the dataset itself."""

    mode: str
    scheme: str
    seed: int
    dae: TrainConfig
    clf: TrainConfig
    target_hz: float = 1.0
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self):
        if self.mode not in ("classification", "regression"):
            raise ValueError(f"mode must be classification or regression, got '{self.mode}'")
        parse_scheme(self.scheme)
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.target_hz <= 0:
            raise ValueError("target_hz must be > 0")
        if self.mode == "classification" and self.clf.loss == "mse":
            raise ValueError("classification head trains on cosine loss, not mse")
        if self.mode == "regression" and self.clf.loss != "mse":
            raise ValueError("regression head trains on mse loss")

    def to_lines(self):
        """Canonical key = value lines; the fold-level seeds are derived,
        so only the run seed is recorded."""
        lines = [
            kv_line("mode", self.mode),
            kv_line("scheme", self.scheme),
            kv_line("seed", self.seed),
            ("target_hz", repr(float(self.target_hz))),
        ]
        for prefix, cfg in (("dae", self.dae), ("clf", self.clf)):
            lines.extend([
                (f"{prefix}_learning_rate", repr(float(cfg.learning_rate))),
                (f"{prefix}_max_epochs", str(cfg.max_epochs)),
                (f"{prefix}_patience", str(cfg.patience)),
                (f"{prefix}_loss", cfg.loss),
                (f"{prefix}_l2", repr(float(cfg.l2))),
                (f"{prefix}_noise_sigma", repr(float(cfg.noise_sigma))),
                (f"{prefix}_val_fraction", repr(float(cfg.val_fraction))),
                (f"{prefix}_class_weighting", cfg.class_weighting),
            ])
        for f in fields(ArchConfig):
            lines.append((f"arch_{f.name}", str(getattr(self.arch, f.name))))
        out = []
        for item in lines:
            out.append(item if isinstance(item, str) else f"{item[0]} = {item[1]}")
        return out


def settings_text(settings, extras=()):
    """Snapshot body: settings lines plus (key, value) extras, sorted."""
    lines = settings.to_lines() + [f"{k} = {v}" for k, v in extras]
    return "\n".join(sorted(lines)) + "\n"


def _parse_kv_text(text):
    pairs = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise ValueError(f"line {ln}: expected 'key = value', got {line!r}")
        if key in pairs:
            raise ValueError(f"line {ln}: duplicate key '{key}'")
        pairs[key] = value
    return pairs


def settings_from_pairs(pairs):
    """Rebuild RunSettings from snapshot pairs; unknown keys are returned
    untouched so callers can handle manifest paths and hashes."""
    take = dict(pairs)

    def pop(key, conv=str):
        if key not in take:
            raise ValueError(f"run settings missing key '{key}'")
        raw = take.pop(key)
        try:
            return conv(raw)
        except ValueError as exc:
            raise ValueError(f"key '{key}': {exc}") from None

    def train_cfg(prefix):
        return TrainConfig(
            learning_rate=pop(f"{prefix}_learning_rate", float),
            max_epochs=pop(f"{prefix}_max_epochs", int),
            patience=pop(f"{prefix}_patience", int),
            loss=pop(f"{prefix}_loss"),
            l2=pop(f"{prefix}_l2", float),
            noise_sigma=pop(f"{prefix}_noise_sigma", float),
            val_fraction=pop(f"{prefix}_val_fraction", float),
            class_weighting=pop(f"{prefix}_class_weighting"),
        )

    mode = pop("mode")
    scheme = pop("scheme")
    seed = pop("seed", int)
    target_hz = pop("target_hz", float)
    dae = train_cfg("dae")
    clf = train_cfg("clf")
    arch = ArchConfig(**{f.name: pop(f"arch_{f.name}", int) for f in fields(ArchConfig)})
    settings = RunSettings(mode=mode, scheme=scheme, seed=seed, dae=dae, clf=clf,
                           target_hz=target_hz, arch=arch)
    return settings, take


def load_run_settings(run_dir):
    """(RunSettings, extras dict) from a run directory's snapshot."""
    path = os.path.join(run_dir, SETTINGS_FILE)
    with open(path, "r", encoding="utf-8") as fh:
        pairs = _parse_kv_text(fh.read())
    return settings_from_pairs(pairs)


def derive_fold_seed(run_seed, fold_index, stage):
    """Per-fold training seed; stage 0 trains the embedding, 1 the head."""
    return ((run_seed + 1) * 1_000_003 + fold_index) * 2 + stage


@dataclass(frozen=True)
class FoldOutcome:
    name: str
    status: str
    records: tuple
    metrics: dict
    bundle: object
    dae_epochs: int = 0
    clf_epochs: int = 0
    encoder_sha_before: str = ""
    encoder_sha_after: str = ""

    @property
    def ok(self):
        return self.status == "ok"


def encoder_fingerprint(bundle):
    """sha256 over the encoder group's parameter bytes, name-ordered."""
    h = hashlib.sha256()
    for name in sorted(bundle.weights):
        if name.startswith("encoder/"):
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(bundle.weights[name], dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class RunResult:
    settings: RunSettings
    dataset_sha256: str
    assignment: FoldAssignment
    outcomes: tuple
    metrics_text: str
    out_dir: str


def _prepare(dataset, target_hz):
    stages = {t.stage for t in dataset.trials}
    if stages == {RAW}:
        return Dataset([prepare_stage2(t, target_hz) for t in dataset.trials])
    if stages == {DOWNSAMPLED}:
        return dataset
    raise ValueError("run needs a dataset of raw trials or downsampled trials, not a mix")


def _build_assignment(stage2, settings):
    kind, k = parse_scheme(settings.scheme)
    trials = stage2.trials
    if kind == "stratified":
        labels = [t.class_label for t in trials]
        if any(lb is None for lb in labels):
            raise ValueError("stratified scheme needs a class label on every trial")
        return stratified_kfold([t.trial_id for t in trials], labels, k, settings.seed)
    if kind == "loso":
        return loso_folds(trials)
    return louo_folds(trials)


def _classification_metrics(records):
    actual = [r.actual for r in records]
    predicted = [r.predicted for r in records]
    bm = binary_metrics(actual, predicted, positive=0)
    try:
        auc = roc_auc(
            np.array([r.confidences[0] for r in records]),
            np.array([a == 0 for a in actual]),
        )
    except ValueError:
        auc = None
    return {"accuracy": bm.accuracy, "auc": auc,
            "sensitivity": bm.sensitivity, "specificity": bm.specificity}


def _regression_metrics(records):
    true = [r.true_score for r in records]
    pred = [r.pred_score for r in records]
    try:
        rho, p = spearman(true, pred)
    except ValueError:
        return {"spearman": None, "spearman_p": None}
    return {"spearman": rho, "spearman_p": p}


def fold_metrics(mode, records):
    if not records:
        return {m: None for m in metric_names(mode)}
    if mode == "classification":
        return _classification_metrics(records)
    return _regression_metrics(records)


def metric_names(mode):
    return CLASSIFICATION_METRICS if mode == "classification" else REGRESSION_METRICS


def _fold_guard(settings, train_trials):
    if settings.mode == "classification":
        labels = {t.class_label for t in train_trials}
        if None in labels:
            return "failed: training trial without class label"
        if len(labels) < 2:
            return f"failed: single-class training data ({labels.pop()})"
    else:
        scores = [t.score for t in train_trials]
        if any(s is None for s in scores):
            return "failed: training trial without score"
        if len(set(scores)) < 2:
            return "failed: constant training scores"
    return None


def _run_fold(args):
    settings, fold_index, fold, train_trials, test_trials = args
    reason = _fold_guard(settings, train_trials)
    if reason is not None:
        return FoldOutcome(name=fold.name, status=reason, records=(),
                           metrics=None, bundle=None)
    minmax = fit_minmax(train_trials)
    assert set(minmax.source_ids) <= set(fold.train_ids)
    norm_train = [apply_minmax(t, minmax) for t in train_trials]
    dae_cfg = replace(settings.dae, seed=derive_fold_seed(settings.seed, fold_index, 0))
    clf_cfg = replace(settings.clf, seed=derive_fold_seed(settings.seed, fold_index, 1))
    dae_bundle, dae_hist = train_dae(norm_train, minmax, dae_cfg, settings.arch)
    sha_before = encoder_fingerprint(dae_bundle)
    skill, clf_hist = train_classifier(
        dae_bundle, norm_train, clf_cfg, settings.arch, settings.mode
    )
    records = tuple(predict(skill, t) for t in test_trials)
    return FoldOutcome(
        name=fold.name,
        status="ok",
        records=records,
        metrics=fold_metrics(settings.mode, records),
        bundle=skill,
        dae_epochs=len(dae_hist.train_loss),
        clf_epochs=len(clf_hist.train_loss),
        encoder_sha_before=sha_before,
        encoder_sha_after=encoder_fingerprint(skill),
    )


def _aggregate_lines(mode, outcomes):
    lines = []
    for m in metric_names(mode):
        vals = [o.metrics[m] for o in outcomes
                if o.ok and o.metrics is not None and o.metrics[m] is not None]
        if vals:
            lines.append(kv_line(f"aggregate {m} mean", float(np.mean(vals))))
            lines.append(kv_line(f"aggregate {m} std", float(np.std(vals))))
            lines.append(kv_line(f"aggregate {m} n_folds", len(vals)))
        else:
            lines.append(kv_line(f"aggregate {m} mean", None))
            lines.append(kv_line(f"aggregate {m} std", None))
            lines.append(kv_line(f"aggregate {m} n_folds", 0))
    pooled = [r for o in outcomes if o.ok for r in o.records]
    for m, v in fold_metrics(mode, tuple(pooled)).items():
        lines.append(kv_line(f"pooled {m}", v))
    lines.append(kv_line("pooled n", len(pooled)))
    return lines


def metrics_report_text(settings, dataset_sha, assignment, outcomes):
    """Canonical run report: header, per-fold block, aggregate block.

    Aggregate std is the population standard deviation over the folds
    that produced the metric; pooled lines recompute each metric over
    all out-of-fold predictions at once.
    """
    lines = [
        "report = metrics",
        kv_line("mode", settings.mode),
        kv_line("scheme", settings.scheme),
        kv_line("seed", settings.seed),
        kv_line("dataset_sha256", dataset_sha),
        kv_line("folds_sha256", assignment.fingerprint()),
        kv_line("n_folds", len(assignment.folds)),
    ]
    for o in outcomes:
        lines.append(kv_line(f"fold {o.name} status", o.status))
        if not o.ok:
            continue
        lines.append(kv_line(f"fold {o.name} n", len(o.records)))
        lines.append(kv_line(f"fold {o.name} dae_epochs", o.dae_epochs))
        lines.append(kv_line(f"fold {o.name} clf_epochs", o.clf_epochs))
        lines.append(kv_line(f"fold {o.name} encoder_sha256", o.encoder_sha_after))
        for m in metric_names(settings.mode):
            lines.append(kv_line(f"fold {o.name} {m}", o.metrics[m]))
    lines.extend(_aggregate_lines(settings.mode, outcomes))
    return "\n".join(lines) + "\n"


def _persist_fold(out_dir, settings, stage2_by_id, fold, outcome):
    fold_dir = os.path.join(out_dir, f"fold_{fold.name}")
    os.makedirs(fold_dir, exist_ok=True)
    if not outcome.ok:
        return
    save_bundle(outcome.bundle, os.path.join(fold_dir, "bundle.skq"))
    write_records_csv(outcome.records, os.path.join(fold_dir, "predictions.csv"))
    if settings.mode == "classification":
        cams = []
        for rec in outcome.records:
            trial = stage2_by_id[rec.trial_id]
            target = rec.actual if rec.actual is not None else rec.predicted
            cams.append(compute_cam(outcome.bundle, trial, target_class=target))
        write_cams_csv(cams, os.path.join(fold_dir, "cams.csv"))


def run_cv(dataset, settings, out_dir=None, fold_assignment=None,
           manifest_path=None, jobs=1, progress=None):
    """Train and evaluate one model per fold; optionally persist the run.

    ``fold_assignment`` replays a fixed roster (the masking study depends
    on this); otherwise the roster comes from the settings' scheme and
    seed.  ``jobs`` > 1 trains folds in separate processes; outputs are
    identical to the serial path.
    """
    stage2 = _prepare(dataset, settings.target_hz)
    by_id = {t.trial_id: t for t in stage2.trials}
    dataset_sha = dataset_fingerprint(dataset)
    assignment = fold_assignment or _build_assignment(stage2, settings)

    covered = set()
    for f in assignment.folds:
        for tid in f.train_ids + f.test_ids:
            if tid not in by_id:
                raise ValueError(f"fold {f.name} references unknown trial {tid}")
        covered.update(f.test_ids)
    if covered != set(by_id):
        raise ValueError("fold assignment does not test every trial exactly once")

    tasks = []
    for i, fold in enumerate(assignment.folds):
        train_trials = [by_id[t] for t in fold.train_ids]
        test_trials = [by_id[t] for t in fold.test_ids]
        tasks.append((settings, i, fold, train_trials, test_trials))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_fold, tasks))
        if progress:
            for o in outcomes:
                progress(f"fold {o.name}: {o.status}")
    else:
        outcomes = []
        for task in tasks:
            outcome = _run_fold(task)
            outcomes.append(outcome)
            if progress:
                progress(f"fold {outcome.name}: {outcome.status}")
    outcomes = tuple(outcomes)

    text = metrics_report_text(settings, dataset_sha, assignment, outcomes)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        extras = [("dataset_sha256", dataset_sha)]
        if manifest_path is not None:
            extras.append(("manifest", os.path.abspath(manifest_path)))
        with open(os.path.join(out_dir, SETTINGS_FILE), "w", encoding="utf-8") as fh:
            fh.write(settings_text(settings, extras))
        with open(os.path.join(out_dir, FOLDS_FILE), "w", encoding="utf-8") as fh:
            fh.write(assignment.canonical_text())
        with open(os.path.join(out_dir, METRICS_FILE), "w", encoding="utf-8") as fh:
            fh.write(text)
        for fold, outcome in zip(assignment.folds, outcomes):
            _persist_fold(out_dir, settings, by_id, fold, outcome)
    return RunResult(
        settings=settings,
        dataset_sha256=dataset_sha,
        assignment=assignment,
        outcomes=outcomes,
        metrics_text=text,
        out_dir=out_dir,
    )


@dataclass(frozen=True)
class MaskingStudy:
    """Paired before/after comparison for one finished run."""

    baseline_sha256: str
    masked_sha256: str
    folds_sha256: str
    fold_names: tuple
    before: dict
    after: dict
    tests: dict
    masked_result: RunResult
    text: str


def _paired_values(metric, fold_names, before, after):
    pairs = []
    for name in fold_names:
        b = before[name].get(metric) if before[name] else None
        a = after[name].get(metric) if after[name] else None
        if b is not None and a is not None:
            pairs.append((b, a))
    return pairs


def validate_cams(run_dir, out_dir=None, dataset=None, jobs=1, progress=None):
    """Masked-retraining study over a persisted classification run.

    Every trial is attenuated by the activation map recorded when it was
    in the test fold, the run is repeated under the identical roster and
    derived seeds, and each metric's per-fold before/after values enter
    a one-sided signed-rank test (masking should not hurt).  The dataset
    is reloaded from the recorded manifest unless passed in; either way
    its fingerprint must match the snapshot before anything trains.
    """
    settings, extras = load_run_settings(run_dir)
    if settings.mode != "classification":
        raise ValueError("the masking study applies to classification runs")
    if dataset is None:
        manifest = extras.get("manifest")
        if manifest is None:
            raise ValueError("run snapshot records no manifest; pass the dataset explicitly")
        dataset = load_manifest(manifest)
    recorded_sha = extras.get("dataset_sha256")
    actual_sha = dataset_fingerprint(dataset)
    if recorded_sha != actual_sha:
        raise ValueError(
            f"dataset fingerprint {actual_sha[:12]}... does not match the "
            f"run snapshot ({str(recorded_sha)[:12]}...); refusing to pair folds"
        )

    with open(os.path.join(run_dir, FOLDS_FILE), "r", encoding="utf-8") as fh:
        assignment = FoldAssignment.from_canonical_text(fh.read())

    before = {}
    cams = {}
    fold_names = tuple(f.name for f in assignment.folds)
    for fold in assignment.folds:
        fold_dir = os.path.join(run_dir, f"fold_{fold.name}")
        pred_path = os.path.join(fold_dir, "predictions.csv")
        if not os.path.exists(pred_path):
            before[fold.name] = None
            continue
        records = read_records_csv(pred_path)
        before[fold.name] = fold_metrics("classification", tuple(records))
        fold_cams = read_cams_csv(os.path.join(fold_dir, "cams.csv"))
        if set(fold_cams) != set(fold.test_ids):
            raise ValueError(f"fold {fold.name}: activation maps do not cover its test set")
        cams.update(fold_cams)

    stage2 = _prepare(dataset, settings.target_hz)
    masked = mask_with_cams(stage2, cams)
    masked_out = os.path.join(out_dir, "masked") if out_dir else None
    masked_result = run_cv(masked, settings, out_dir=masked_out,
                           fold_assignment=assignment, jobs=jobs, progress=progress)

    after = {o.name: (o.metrics if o.ok else None) for o in masked_result.outcomes}

    tests = {}
    for metric in ("accuracy", "sensitivity", "specificity", "auc"):
        pairs = _paired_values(metric, fold_names, before, after)
        entry = {
            "n_pairs": len(pairs),
            "before_mean": float(np.mean([p[0] for p in pairs])) if pairs else None,
            "after_mean": float(np.mean([p[1] for p in pairs])) if pairs else None,
            "w": None,
            "p": None,
            "note": "",
        }
        if pairs:
            try:
                w, p = wilcoxon_one_sided([p[0] for p in pairs], [p[1] for p in pairs])
                entry["w"], entry["p"] = w, p
            except ValueError as exc:
                entry["note"] = str(exc)
        tests[metric] = entry

    lines = [
        "report = cam-validation",
        kv_line("baseline_dataset_sha256", actual_sha),
        kv_line("masked_dataset_sha256", masked_result.dataset_sha256),
        kv_line("folds_sha256", assignment.fingerprint()),
        kv_line("n_folds", len(fold_names)),
    ]
    for name in fold_names:
        for metric in ("accuracy", "sensitivity", "specificity", "auc"):
            b = before[name].get(metric) if before[name] else None
            a = after[name].get(metric) if after[name] else None
            lines.append(kv_line(f"fold {name} {metric} before", b))
            lines.append(kv_line(f"fold {name} {metric} after", a))
    for metric, entry in tests.items():
        for k in ("n_pairs", "before_mean", "after_mean", "w", "p"):
            lines.append(kv_line(f"metric {metric} {k}", entry[k]))
        if entry["note"]:
            lines.append(f"metric {metric} note = {entry['note']}")
    text = "\n".join(lines) + "\n"

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, MASKING_FILE), "w", encoding="utf-8") as fh:
            fh.write(text)

    return MaskingStudy(
        baseline_sha256=actual_sha,
        masked_sha256=masked_result.dataset_sha256,
        folds_sha256=assignment.fingerprint(),
        fold_names=fold_names,
        before=before,
        after=after,
        tests=tests,
        masked_result=masked_result,
        text=text,
    )
