"""Command-line front end for the full pipeline.

Subcommands: synth, ingest-check, train-dae, train-classifier,
evaluate, predict, cam, trust, validate-cam, gradcheck.

Exit codes: 0 success, 2 usage error (bad flags, unknown config keys,
missing inputs, conflicting settings), 1 runtime failure.  On any
failure the last line of output is a single-line diagnostic of the form
``error: usage: <message>`` or ``error: runtime: <message>``.

Settings resolve as flags > config file > defaults, with the
SKILLSEQ_SEED environment variable as the weakest seed source.  Run
directories are self-contained: the persisted snapshot plus manifest
reproduce every report byte for byte.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .bundle import BundleFormatError, load_bundle, save_bundle
from .config import (
    RUN_KEYS,
    SYNTH_KEYS,
    ConfigError,
    read_config_file,
    resolve_run_config,
    resolve_synth_spec,
)
from .crossval import run_cv, validate_cams
from .data import (
    RAW,
    Dataset,
    apply_minmax,
    dataset_fingerprint,
    fit_minmax,
    load_manifest,
    prepare_stage2,
)
from .explain import compute_cam, write_cams_csv
from .gradcheck import run_gradcheck
from .model import predict as model_predict
from .overlay import render_cam_overlay
from .records import read_records_csv, records_csv_classes, write_records_csv
from .reports import fmt9, kv_line
from .synth import write_synth_dataset
from .training import train_classifier, train_dae
from .trust import build_trust_report

__all__ = ["main", "dispatch"]

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Invocation problem: wrong flags, missing inputs, bad settings."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _fail(kind, message):
    flat = " ".join(str(message).split())
    print(f"error: {kind}: {flat}", file=sys.stderr)
    return EXIT_USAGE if kind == "usage" else EXIT_RUNTIME


def _add_key_flags(parser, keys, skip=()):
    for key in keys:
        if key in skip:
            continue
        parser.add_argument(f"--{key.replace('_', '-')}", dest=f"key_{key}",
                            metavar="V", default=None)


def _flag_values(args, keys):
    """Typed values for the --key flags that were actually given."""
    out = {}
    for key, conv in keys.items():
        raw = getattr(args, f"key_{key}", None)
        if raw is None:
            continue
        try:
            out[key] = conv(raw)
        except ValueError as exc:
            raise UsageError(f"flag --{key.replace('_', '-')}: {exc}") from None
    return out


def _run_settings(args, need_manifest=True):
    file_pairs = read_config_file(args.config) if args.config else None
    settings, manifest, out = resolve_run_config(
        file_pairs, _flag_values(args, RUN_KEYS), origin=args.config or "")
    manifest = args.manifest or manifest
    out = args.out or out
    if need_manifest and manifest is None:
        raise UsageError("no dataset manifest; pass --manifest or set it in the config")
    if manifest is not None and not os.path.exists(manifest):
        raise UsageError(f"manifest not found: {manifest}")
    recorded_sha = None
    if file_pairs and "dataset_sha256" in file_pairs:
        recorded_sha = file_pairs["dataset_sha256"][0]
    return settings, manifest, out, recorded_sha


def _load_verified(manifest, recorded_sha):
    dataset = load_manifest(manifest)
    if recorded_sha is not None:
        actual = dataset_fingerprint(dataset)
        if actual != recorded_sha:
            raise UsageError(
                f"dataset fingerprint {actual[:12]}... does not match the config "
                f"snapshot ({recorded_sha[:12]}...)"
            )
    return dataset


def _normalized_training_set(dataset, target_hz):
    stage2 = [prepare_stage2(t, target_hz) if t.stage == RAW else t
              for t in dataset.trials]
    minmax = fit_minmax(stage2)
    return [apply_minmax(t, minmax) for t in stage2], minmax, Dataset(stage2)


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_synth(args):
    file_pairs = read_config_file(args.spec) if args.spec else None
    spec = resolve_synth_spec(file_pairs, _flag_values(args, SYNTH_KEYS),
                              origin=args.spec or "")
    manifest = write_synth_dataset(spec, args.out)
    print(kv_line("trials", spec.n_subjects * spec.trials_per_subject))
    print(kv_line("manifest", manifest))
    return EXIT_OK


def _cmd_ingest_check(args):
    if not os.path.exists(args.manifest):
        raise UsageError(f"manifest not found: {args.manifest}")
    ds = load_manifest(args.manifest)
    trials = ds.trials
    print(kv_line("trials", len(trials)))
    print(kv_line("subjects", len({t.subject_id for t in trials})))
    print(kv_line("channels", ",".join(trials[0].channels)))
    print(kv_line("labeled", sum(1 for t in trials if t.class_label is not None)))
    print(kv_line("scored", sum(1 for t in trials if t.score is not None)))
    print(kv_line("min_frames", min(t.values.shape[0] for t in trials)))
    print(kv_line("max_frames", max(t.values.shape[0] for t in trials)))
    print(kv_line("dataset_sha256", dataset_fingerprint(ds)))
    return EXIT_OK


def _cmd_train_dae(args):
    settings, manifest, out, recorded = _run_settings(args)
    if out is None:
        raise UsageError("no output directory; pass --out")
    dataset = _load_verified(manifest, recorded)
    norm, minmax, _ = _normalized_training_set(dataset, settings.target_hz)
    from dataclasses import replace
    bundle, history = train_dae(norm, minmax, replace(settings.dae, seed=settings.seed),
                                settings.arch)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "dae.skq")
    save_bundle(bundle, path)
    print(kv_line("bundle", path))
    print(kv_line("epochs", len(history.train_loss)))
    print(kv_line("best_epoch", history.best_epoch))
    print(kv_line("best_val_loss", min(history.val_loss)))
    return EXIT_OK


def _cmd_train_classifier(args):
    settings, manifest, out, recorded = _run_settings(args)
    if out is None:
        raise UsageError("no output directory; pass --out")
    dataset = _load_verified(manifest, recorded)
    norm, minmax, _ = _normalized_training_set(dataset, settings.target_hz)
    from dataclasses import replace
    if args.dae:
        dae_bundle = load_bundle(args.dae)
        if dae_bundle.mode != "autoencoder":
            raise UsageError(f"--dae bundle has mode '{dae_bundle.mode}', expected autoencoder")
    else:
        dae_bundle, _ = train_dae(norm, minmax, replace(settings.dae, seed=settings.seed),
                                  settings.arch)
    clf_cfg = replace(settings.clf, seed=settings.seed)
    bundle, history = train_classifier(dae_bundle, norm, clf_cfg, settings.arch,
                                       settings.mode)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "skill.skq")
    save_bundle(bundle, path)
    print(kv_line("bundle", path))
    print(kv_line("mode", settings.mode))
    print(kv_line("epochs", len(history.train_loss)))
    print(kv_line("best_epoch", history.best_epoch))
    print(kv_line("best_val_loss", min(history.val_loss)))
    return EXIT_OK


def _cmd_evaluate(args):
    settings, manifest, out, recorded = _run_settings(args)
    dataset = _load_verified(manifest, recorded)
    result = run_cv(dataset, settings, out_dir=out, manifest_path=manifest,
                    jobs=args.jobs, progress=print if args.verbose else None)
    if out is not None:
        print(kv_line("run", out))
        for line in result.metrics_text.splitlines():
            if line.startswith(("aggregate ", "pooled ")):
                print(line)
    else:
        print(result.metrics_text, end="")
    return EXIT_OK


def _prepared_trials(args, dataset):
    target_hz = 1.0
    if getattr(args, "key_target_hz", None) is not None:
        target_hz = RUN_KEYS["target_hz"](args.key_target_hz)
    return [prepare_stage2(t, target_hz) if t.stage == RAW else t
            for t in dataset.trials]


def _cmd_predict(args):
    bundle = load_bundle(args.bundle)
    if bundle.mode == "autoencoder":
        raise UsageError("predict needs a classification or regression bundle")
    dataset = load_manifest(args.manifest)
    records = [model_predict(bundle, t) for t in _prepared_trials(args, dataset)]
    write_records_csv(records, args.out,
                      classes=bundle.class_names or ("score",))
    print(kv_line("records", args.out))
    if bundle.mode == "classification":
        known = [r for r in records if r.actual is not None]
        if known:
            acc = sum(1 for r in known if r.predicted == r.actual) / len(known)
            print(kv_line("accuracy", acc))
    return EXIT_OK


def _resolve_target_class(raw, bundle):
    if raw is None:
        return None
    if bundle.class_names and raw in bundle.class_names:
        return bundle.class_names.index(raw)
    try:
        return int(raw)
    except ValueError:
        raise UsageError(
            f"--target-class '{raw}' is neither a class name nor an index"
        ) from None


def _cmd_cam(args):
    bundle = load_bundle(args.bundle)
    if bundle.mode == "autoencoder":
        raise UsageError("activation maps need a classification or regression bundle")
    dataset = load_manifest(args.manifest)
    override = _resolve_target_class(args.target_class, bundle)
    prepared = _prepared_trials(args, dataset)
    cams = []
    for raw_trial, trial in zip(dataset.trials, prepared):
        target = override
        if target is None and trial.class_label is not None and bundle.class_names:
            target = bundle.class_names.index(trial.class_label)
        cams.append(compute_cam(bundle, trial, target_class=target))
    write_cams_csv(cams, args.out)
    print(kv_line("cams", args.out))
    if args.overlay_dir:
        os.makedirs(args.overlay_dir, exist_ok=True)
        for raw_trial, cam in zip(dataset.trials, cams):
            path = os.path.join(args.overlay_dir,
                                f"{raw_trial.subject_id}_{raw_trial.trial_index:03d}.svg")
            render_cam_overlay(raw_trial, cam, path)
        print(kv_line("overlays", args.overlay_dir))
    return EXIT_OK


def _cmd_trust(args):
    if not os.path.exists(args.records):
        raise UsageError(f"records file not found: {args.records}")
    records = read_records_csv(args.records)
    usable = [r for r in records if r.confidences is not None]
    if not usable:
        raise UsageError(f"{args.records}: no classification records with confidences")
    report = build_trust_report(usable, alpha=args.alpha, beta=args.beta,
                                class_names=records_csv_classes(args.records))
    os.makedirs(args.out, exist_ok=True)
    lines = [
        "report = trust",
        kv_line("n", report.n),
        kv_line("alpha", report.alpha),
        kv_line("beta", report.beta),
    ]
    for z in sorted(report.t_m):
        name = report.class_names[z]
        lines.append(kv_line(f"class {name} count", report.class_counts[z]))
        lines.append(kv_line(f"class {name} trust", report.t_m[z]))
    lines.append(kv_line("nts", report.nts))
    lines.append(kv_line("mean_correct", report.mean_correct))
    lines.append(kv_line("mean_incorrect", report.mean_incorrect))
    text = "\n".join(lines) + "\n"
    path = os.path.join(args.out, "trust.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)

    def write_curve(name, dens):
        if dens is None:
            return
        cpath = os.path.join(args.out, f"density_{name}.csv")
        with open(cpath, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("grid,density\n")
            for g, d in zip(report.grid, dens):
                fh.write(f"{fmt9(g)},{fmt9(d)}\n")

    write_curve("correct", report.density_correct)
    write_curve("incorrect", report.density_incorrect)
    for z, (dc, dw) in report.per_class_densities.items():
        write_curve(f"{report.class_names[z]}_correct", dc)
        write_curve(f"{report.class_names[z]}_incorrect", dw)
    print(text, end="")
    print(kv_line("report", path))
    return EXIT_OK


def _cmd_validate_cam(args):
    if not os.path.isdir(args.run):
        raise UsageError(f"run directory not found: {args.run}")
    for needed in ("run.cfg", "folds.txt"):
        if not os.path.exists(os.path.join(args.run, needed)):
            raise UsageError(f"{args.run} is missing baseline artifact {needed}")
    study = validate_cams(args.run, out_dir=args.out, jobs=args.jobs,
                          progress=print if args.verbose else None)
    print(study.text, end="")
    return EXIT_OK


def _cmd_gradcheck(args):
    results = run_gradcheck(configs_per_op=args.configs, base_seed=args.seed)
    by_op = {}
    for r in results:
        by_op[r.operation] = max(by_op.get(r.operation, 0.0), r.max_error)
    for op in sorted(by_op):
        print(kv_line(f"max_rel_err {op}", by_op[op]))
    worst = max(results, key=lambda r: r.max_error)
    print(kv_line("checks", len(results)))
    print(kv_line("worst", worst.max_error))
    if not all(r.passed for r in results):
        bad = sorted({r.operation for r in results if not r.passed})
        raise RuntimeError(f"gradient check failed for: {', '.join(bad)}")
    print("status = pass")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="skillseq",
                     description="Tool-motion skill scoring pipeline")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="generator config file")
    p.add_argument("--out", required=True, help="output directory")
    _add_key_flags(p, SYNTH_KEYS)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest-check", help="validate a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_ingest_check)

    for name, handler in (("train-dae", _cmd_train_dae),
                          ("train-classifier", _cmd_train_classifier),
                          ("evaluate", _cmd_evaluate)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} over a manifest")
        p.add_argument("--config", help="run config file")
        p.add_argument("--manifest")
        p.add_argument("--out")
        _add_key_flags(p, RUN_KEYS, skip=("manifest", "out"))
        if name == "train-classifier":
            p.add_argument("--dae", help="reuse a trained autoencoder bundle")
        if name == "evaluate":
            p.add_argument("--jobs", type=int, default=1)
            p.add_argument("--verbose", action="store_true")
        p.set_defaults(func=handler)

    p = sub.add_parser("predict", help="score trials with a trained bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output records CSV")
    p.add_argument("--target-hz", dest="key_target_hz", metavar="V")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("cam", help="per-timestep activation maps")
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--target-class", help="class name or output index")
    p.add_argument("--overlay-dir", help="also render one trajectory figure per trial")
    p.add_argument("--target-hz", dest="key_target_hz", metavar="V")
    p.set_defaults(func=_cmd_cam)

    p = sub.add_parser("trust", help="trust report from prediction records")
    p.add_argument("--records", required=True, help="prediction records CSV")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_trust)

    p = sub.add_parser("validate-cam", help="masked retraining study over a run")
    p.add_argument("--run", required=True, help="baseline run directory")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_validate_cam)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def dispatch(argv):
    """Run one invocation; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required (see --help)")
        if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args)
    except SystemExit as exc:          # argparse --help
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        return _fail("usage", exc)
    except KeyboardInterrupt:
        raise
    except (ValueError, OSError, RuntimeError, BundleFormatError,
            FloatingPointError, KeyError) as exc:
        return _fail("runtime", exc)


def main(argv=None):
    sys.exit(dispatch(sys.argv[1:] if argv is None else list(argv)))
