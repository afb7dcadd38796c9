"""Synthetic corpus generator: determinism, regime counts, learnability.

The learnability oracle is a depth-2 threshold classifier on two plain
summary statistics (duration, roughness).  If that simple rule already
separates the classes well, a sequence model has a fair target; the
oracle shares no code with the model stack.
"""

import numpy as np
import pytest

from skillseq.data import RAW, dataset_fingerprint, load_manifest
from skillseq.synth import CLASS_THRESHOLD, SynthSpec, score_trajectory, synth_dataset
from skillseq.synth import write_synth_dataset


SPEC = SynthSpec(n_subjects=6, trials_per_subject=20, seed=3)


@pytest.fixture(scope="module")
def corpus():
    return synth_dataset(SPEC)


def test_deterministic_generation(corpus):
    again = synth_dataset(SPEC)
    assert dataset_fingerprint(again) == dataset_fingerprint(corpus)


def test_seed_changes_content(corpus):
    other = synth_dataset(SynthSpec(n_subjects=6, trials_per_subject=20, seed=4))
    assert dataset_fingerprint(other) != dataset_fingerprint(corpus)


def test_exact_trial_and_class_counts(corpus):
    trials = corpus.trials
    assert len(trials) == 120
    n_pass = sum(1 for t in trials if t.class_label == "pass")
    assert n_pass == round(0.9 * 120)
    subjects = {t.subject_id for t in trials}
    assert len(subjects) == 6
    for s in subjects:
        assert sum(1 for t in trials if t.subject_id == s) == 20


def test_trials_are_raw_with_scores(corpus):
    for t in corpus.trials:
        assert t.stage == RAW
        assert t.score is not None
        assert t.class_label in ("pass", "fail")
        assert t.channels == ("sx", "sy", "gx", "gy")


def test_labels_match_score_threshold(corpus):
    # high score = good technique; the pass side sits above the threshold
    for t in corpus.trials:
        want = "pass" if t.score >= CLASS_THRESHOLD else "fail"
        assert t.class_label == want, t.trial_id


def test_scores_keep_margin_around_threshold(corpus):
    scores = np.array([t.score for t in corpus.trials])
    assert np.min(np.abs(scores - CLASS_THRESHOLD)) > 1.0


def test_missing_samples_present_but_sparse(corpus):
    total = sum(t.values.size for t in corpus.trials)
    missing = sum(int(np.isnan(t.values).sum()) for t in corpus.trials)
    assert 0 < missing < 0.05 * total


def test_coordinates_fit_camera_frame(corpus):
    for t in corpus.trials:
        v = t.values
        ok = ~np.isnan(v)
        assert np.all(v[:, [0, 2]][ok[:, [0, 2]]] >= 0.0)
        assert np.all(v[:, [0, 2]][ok[:, [0, 2]]] <= 640.0)
        assert np.all(v[:, [1, 3]][ok[:, [1, 3]]] >= 0.0)
        assert np.all(v[:, [1, 3]][ok[:, [1, 3]]] <= 480.0)


def stump_accuracy(trials):
    """Depth-2 oracle: duration split, then roughness split on the long side."""
    feats = []
    for t in trials:
        v = t.values
        col = v[:, 0]
        col = col[~np.isnan(col)]
        dur = len(v) / t.sample_rate_hz
        rough = float(np.median(np.abs(np.diff(col, 2)))) if len(col) > 4 else 0.0
        feats.append((dur, rough, t.class_label))
    best = 0.0
    durations = sorted({f[0] for f in feats})
    for cut in durations:
        for rcut in np.percentile([f[1] for f in feats], [25, 50, 75, 90]):
            correct = 0
            for dur, rough, label in feats:
                guess = "pass" if dur <= cut and rough <= rcut else "fail"
                correct += guess == label
            best = max(best, correct / len(feats))
    return best


def test_simple_rule_separates_classes(corpus):
    assert stump_accuracy(corpus.trials) >= 0.95


def test_duration_regimes_overlap_is_limited(corpus):
    pass_durs = [len(t.values) for t in corpus.trials if t.class_label == "pass"]
    fail_durs = [len(t.values) for t in corpus.trials if t.class_label == "fail"]
    assert max(pass_durs) < min(fail_durs)


def test_score_trajectory_penalizes_jitter():
    rng = np.random.default_rng(0)
    t_axis = np.linspace(0, 4 * np.pi, 120)
    smooth = np.stack([np.cos(t_axis) * 100 + 300, np.sin(t_axis) * 80 + 240,
                       np.cos(t_axis) * 90 + 320, np.sin(t_axis) * 70 + 200], axis=1)
    jittery = smooth + rng.normal(0, 15.0, smooth.shape)
    assert score_trajectory(jittery, 1.0) < score_trajectory(smooth, 1.0)


def test_write_synth_dataset_round_trips(tmp_path):
    spec = SynthSpec(n_subjects=2, trials_per_subject=5, seed=8)
    manifest = write_synth_dataset(spec, tmp_path)
    back = load_manifest(manifest)
    assert dataset_fingerprint(back) == dataset_fingerprint(synth_dataset(spec))


def test_invalid_spec_rejected():
    for bad in (dict(pass_fraction=1.5), dict(pass_fraction=-0.1),
                dict(n_subjects=0), dict(trials_per_subject=0),
                dict(missing_fraction=-0.1), dict(sample_rate_hz=0.0)):
        try:
            SynthSpec(**bad)
        except ValueError:
            continue
        raise AssertionError(f"SynthSpec accepted {bad}")
