"""Line-oriented run configuration: files, flags, and defaults.

Config files are UTF-8 text, one ``key = value`` per line; blank lines
and lines starting with ``#`` are ignored.  Values resolve with flag >
file > default precedence; the seed additionally falls back to the
SKILLSEQ_SEED environment variable before its built-in default, so a
shell can pin reproducibility without touching files or flags.  Every
diagnostic names the offending key and, for file input, its line.
"""

from __future__ import annotations

import os
from dataclasses import fields

from .crossval import RunSettings, parse_scheme
from .model import ArchConfig
from .synth import SynthSpec
from .training import TrainConfig

__all__ = [
    "ConfigError",
    "parse_config_text",
    "read_config_file",
    "resolve_run_config",
    "resolve_synth_spec",
    "SEED_ENV_VAR",
]

SEED_ENV_VAR = "SKILLSEQ_SEED"


class ConfigError(ValueError):
    """Bad configuration input; the message names key and location."""


def parse_config_text(text, origin="<config>"):
    """key -> (raw value, line number); duplicates and junk lines rejected."""
    pairs = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"{origin} line {ln}: expected 'key = value', got {line.strip()!r}")
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"{origin} line {ln}: empty key")
        if key in pairs:
            raise ConfigError(
                f"{origin} line {ln}: duplicate key '{key}' (first set on line {pairs[key][1]})"
            )
        pairs[key] = (value, ln)
    return pairs


def read_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config_text(text, origin=str(path))


def _conv_int(raw):
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"expected an integer, got '{raw}'") from None


def _conv_float(raw):
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"expected a number, got '{raw}'") from None


def _conv_str(raw):
    return raw


def _conv_mode(raw):
    norm = {"classify": "classification", "classification": "classification",
            "regress": "regression", "regression": "regression"}
    if raw not in norm:
        raise ValueError(f"expected classify or regress, got '{raw}'")
    return norm[raw]


def _conv_scheme(raw):
    parse_scheme(raw)
    return raw


def _conv_loss(raw):
    if raw not in ("bce", "mse", "cosine"):
        raise ValueError(f"expected bce, mse, or cosine, got '{raw}'")
    return raw


def _conv_weighting(raw):
    if raw not in ("balanced", "none"):
        raise ValueError(f"expected balanced or none, got '{raw}'")
    return raw


def _conv_pair(raw):
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected 'low,high', got '{raw}'")
    return (_conv_float(parts[0]), _conv_float(parts[1]))


def _train_keys(prefix):
    return {
        f"{prefix}_learning_rate": _conv_float,
        f"{prefix}_max_epochs": _conv_int,
        f"{prefix}_patience": _conv_int,
        f"{prefix}_loss": _conv_loss,
        f"{prefix}_l2": _conv_float,
        f"{prefix}_noise_sigma": _conv_float,
        f"{prefix}_val_fraction": _conv_float,
        f"{prefix}_class_weighting": _conv_weighting,
    }


RUN_KEYS = {
    "mode": _conv_mode,
    "scheme": _conv_scheme,
    "seed": _conv_int,
    "target_hz": _conv_float,
    "manifest": _conv_str,
    "out": _conv_str,
    **_train_keys("dae"),
    **_train_keys("clf"),
    **{f"arch_{f.name}": _conv_int for f in fields(ArchConfig)},
}

# snapshot files may carry these; they are verified, not configured
SNAPSHOT_ONLY_KEYS = ("dataset_sha256",)

SYNTH_KEYS = {
    "n_subjects": _conv_int,
    "trials_per_subject": _conv_int,
    "pass_fraction": _conv_float,
    "seed": _conv_int,
    "sample_rate_hz": _conv_float,
    "missing_fraction": _conv_float,
    "distractor_prob": _conv_float,
    "subject_bias": _conv_float,
    "pass_duration": _conv_pair,
    "fail_duration": _conv_pair,
    "pass_jitter": _conv_float,
    "fail_jitter": _conv_float,
}


def _convert_all(pairs, keys, extra_ok=(), origin=""):
    """Raw (value, line) pairs -> typed values with key-precise errors."""
    out = {}
    lead = f"{origin} " if origin else ""
    for key, (raw, ln) in pairs.items():
        where = f"{lead}line {ln}: " if ln else lead
        if key in extra_ok:
            out[key] = raw
            continue
        if key not in keys:
            raise ConfigError(f"{where}unknown key '{key}'")
        try:
            out[key] = keys[key](raw)
        except ValueError as exc:
            raise ConfigError(f"{where}key '{key}': {exc}") from None
    return out


def resolve_run_config(file_pairs=None, flag_pairs=None, env=None, origin=""):
    """Resolve an evaluation run's settings from all sources.

    ``file_pairs`` comes from read_config_file, ``flag_pairs`` is a
    plain dict of already-typed flag values (None entries skipped).
    Returns (RunSettings, manifest or None, out_dir or None).
    """
    env = os.environ if env is None else env
    values = {}

    if env.get(SEED_ENV_VAR) is not None:
        raw = env[SEED_ENV_VAR]
        try:
            values["seed"] = _conv_int(raw)
        except ValueError as exc:
            raise ConfigError(f"environment {SEED_ENV_VAR}: {exc}") from None

    if file_pairs:
        converted = _convert_all(file_pairs, RUN_KEYS, extra_ok=SNAPSHOT_ONLY_KEYS,
                                 origin=origin)
        for k in SNAPSHOT_ONLY_KEYS:
            converted.pop(k, None)
        values.update(converted)

    if flag_pairs:
        values.update({k: v for k, v in flag_pairs.items() if v is not None})

    mode = values.get("mode", "classification")
    seed = values.get("seed", 0)
    target_hz = values.get("target_hz", 1.0)
    scheme = values.get("scheme", "stratified10")

    def train_cfg(prefix, base):
        overrides = {}
        for f in ("learning_rate", "max_epochs", "patience", "loss", "l2",
                  "noise_sigma", "val_fraction", "class_weighting"):
            key = f"{prefix}_{f}"
            if key in values:
                overrides[f] = values[key]
        try:
            return base(**overrides)
        except ValueError as exc:
            raise ConfigError(f"{prefix} training settings: {exc}") from None

    dae = train_cfg("dae", TrainConfig.dae_default)
    if mode == "regression" and "clf_loss" not in values:
        values["clf_loss"] = "mse"
    clf = train_cfg("clf", TrainConfig.classifier_default)

    arch_over = {f.name: values[f"arch_{f.name}"] for f in fields(ArchConfig)
                 if f"arch_{f.name}" in values}
    try:
        arch = ArchConfig(**arch_over)
        settings = RunSettings(mode=mode, scheme=scheme, seed=seed,
                               dae=dae, clf=clf, target_hz=target_hz, arch=arch)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return settings, values.get("manifest"), values.get("out")


def resolve_synth_spec(file_pairs=None, flag_pairs=None, env=None, origin=""):
    """Resolve a generator spec with the same precedence rules."""
    env = os.environ if env is None else env
    values = {}
    if env.get(SEED_ENV_VAR) is not None:
        try:
            values["seed"] = _conv_int(env[SEED_ENV_VAR])
        except ValueError as exc:
            raise ConfigError(f"environment {SEED_ENV_VAR}: {exc}") from None
    if file_pairs:
        values.update(_convert_all(file_pairs, SYNTH_KEYS, origin=origin))
    if flag_pairs:
        values.update({k: v for k, v in flag_pairs.items() if v is not None})
    try:
        return SynthSpec(**values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"generator settings: {exc}") from None
