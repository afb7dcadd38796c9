"""Model construction, embedding, prediction, and training contracts."""

import numpy as np
import pytest
from dataclasses import replace

from conftest import SMALL_ARCH, make_trial
from skillseq.bundle import load_bundle, save_bundle
from skillseq.data import DOWNSAMPLED, apply_minmax, fit_minmax, prepare_stage2
from skillseq.model import (
    ArchConfig,
    build_classifier,
    embed,
    encoder_specs,
    head_specs,
    predict,
    reconstruct,
)
from skillseq.training import TrainConfig, add_gaussian_noise, train_dae, train_supervised


def test_arch_validation():
    with pytest.raises(ValueError):
        ArchConfig(kernel_size=4)
    with pytest.raises(ValueError):
        ArchConfig(enc_width=5, reduction=2)   # reduction must divide width


def test_embedding_channels_and_length(small_dae, small_normalized):
    bundle, _ = small_dae
    trials, _ = small_normalized
    for t in trials[:5]:
        z = embed(bundle, t)
        assert z.shape == (t.n_frames, SMALL_ARCH.emb_channels)


def test_reconstruction_shape_and_range(small_dae, small_normalized):
    bundle, _ = small_dae
    trials, _ = small_normalized
    t = trials[0]
    r = reconstruct(bundle, t)
    assert r.shape == t.values.shape
    assert np.all(r >= 0.0) and np.all(r <= 1.0)   # sigmoid output layer


def test_training_reduces_reconstruction_loss(small_dae):
    _, history = small_dae
    assert history.val_loss[-1] <= history.val_loss[0] * 1.05
    assert len(history.train_loss) == len(history.val_loss)


def test_classifier_keeps_encoder_weights(small_dae, small_classifier):
    dae, _ = small_dae
    clf, _ = small_classifier
    enc_names = [n for n in dae.weights if n.startswith("encoder/")]
    assert enc_names
    for n in enc_names:
        np.testing.assert_array_equal(clf.weights[n], dae.weights[n])
    assert clf.trainable["encoder"] is False
    assert clf.trainable["head"] is True


def test_classifier_confidences_form_distribution(small_classifier,
                                                  small_normalized):
    bundle, _ = small_classifier
    trials, _ = small_normalized
    for t in trials[:8]:
        r = predict(bundle, t)
        assert r.predicted in (0, 1)
        assert sum(r.confidences) == pytest.approx(1.0, abs=1e-9)
        assert r.predicted == int(np.argmax(r.confidences))
        assert r.actual == (0 if t.class_label == "pass" else 1)


def test_untrained_head_is_uninformative(small_dae, small_normalized):
    """Zero-init final dense layer emits exactly uniform confidences."""
    dae, _ = small_dae
    trials, _ = small_normalized
    bundle = build_classifier(dae, "classification", SMALL_ARCH, seed=0)
    dense_w = bundle.weights["head/4.w"]
    bundle.weights["head/4.w"] = np.zeros_like(dense_w)
    bundle.weights["head/4.b"] = np.zeros_like(bundle.weights["head/4.b"])
    r = predict(bundle, trials[0])
    np.testing.assert_allclose(r.confidences, [0.5, 0.5], atol=1e-12)


def test_variable_length_inputs_share_one_model(small_classifier,
                                                small_normalized):
    bundle, _ = small_classifier
    trials, _ = small_normalized
    lengths = {t.n_frames for t in trials}
    assert len(lengths) > 1
    for t in trials[:10]:
        r = predict(bundle, t)
        assert len(r.confidences) == 2


def test_regression_predicts_back_in_score_units(small_regressor,
                                                 small_normalized):
    bundle, _ = small_regressor
    trials, _ = small_normalized
    r = predict(bundle, trials[0])
    assert r.confidences is None and r.predicted is None
    assert r.pred_score is not None
    assert 0.0 < r.pred_score < 400.0
    assert r.true_score == trials[0].score


def test_bundle_round_trip_bit_identical(small_classifier, small_normalized,
                                         tmp_path):
    bundle, _ = small_classifier
    trials, _ = small_normalized
    path = tmp_path / "m.skq"
    save_bundle(bundle, path)
    back = load_bundle(path)
    assert back.mode == bundle.mode
    assert back.class_names == bundle.class_names
    assert set(back.weights) == set(bundle.weights)
    for n, w in bundle.weights.items():
        np.testing.assert_array_equal(back.weights[n], w)
    for t in trials[:6]:
        a, b = predict(bundle, t), predict(back, t)
        assert a.confidences == b.confidences
        assert a.predicted == b.predicted


def test_bundle_detects_corruption(small_dae, tmp_path):
    bundle, _ = small_dae
    path = tmp_path / "m.skq"
    save_bundle(bundle, path)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    from skillseq.bundle import BundleFormatError
    with pytest.raises(BundleFormatError):
        load_bundle(path)


def test_gaussian_noise_properties():
    x = np.zeros((1000, 4))
    noisy = add_gaussian_noise(x, sigma=0.01, seed=5)
    assert abs(noisy.mean()) < 0.001
    assert noisy.std() == pytest.approx(0.01, rel=0.1)
    np.testing.assert_array_equal(add_gaussian_noise(x, 0.01, 5), noisy)
    np.testing.assert_array_equal(add_gaussian_noise(x, 0.0, 5), x)
    with pytest.raises(ValueError):
        add_gaussian_noise(x, -0.1, 5)


def test_prediction_is_deterministic_at_inference(small_classifier,
                                                  small_normalized):
    """Train-time noise must not leak into prediction."""
    bundle, _ = small_classifier
    trials, _ = small_normalized
    t = trials[1]
    assert predict(bundle, t).confidences == predict(bundle, t).confidences


def test_early_stopping_restores_best_epoch(small_normalized):
    trials, minmax = small_normalized
    cfg = TrainConfig(learning_rate=0.01, max_epochs=12, patience=2,
                      loss="bce", seed=2)
    bundle, history = train_dae(trials[:12], minmax, cfg, SMALL_ARCH)
    best = history.best_epoch
    assert history.val_loss[best - 1] == min(history.val_loss)
    if history.stopped_epoch < 12:
        # strict improvement required: everything after best was >= best
        after = history.val_loss[best:]
        assert all(v >= history.val_loss[best - 1] for v in after)


def test_train_supervised_rejects_autoencoder_bundle(small_dae,
                                                     small_normalized):
    dae, _ = small_dae
    trials, _ = small_normalized
    cfg = TrainConfig(learning_rate=0.001, max_epochs=1, patience=1,
                      loss="cosine", seed=0)
    with pytest.raises(ValueError):
        train_supervised(dae, trials, cfg)


def test_classification_requires_mse_free_loss(small_dae, small_normalized):
    dae, _ = small_dae
    trials, _ = small_normalized
    cfg = TrainConfig(learning_rate=0.001, max_epochs=1, patience=1,
                      loss="mse", seed=0)
    from skillseq.training import train_classifier
    with pytest.raises(ValueError):
        train_classifier(dae, trials, cfg, SMALL_ARCH, mode="classification")


def test_model_inputs_must_be_normalized(small_classifier):
    bundle, _ = small_classifier
    t = make_trial(np.random.default_rng(0).uniform(size=(20, 4)),
                   channels=("sx", "sy", "gx", "gy"), stage=DOWNSAMPLED)
    with pytest.raises(ValueError):
        predict(bundle, t)


def test_head_dense_is_named_head_4(small_classifier):
    bundle, _ = small_classifier
    assert "head/4.w" in bundle.weights
    assert bundle.weights["head/4.w"].shape[1] == 2


def test_encoder_head_spec_shapes():
    arch = SMALL_ARCH
    enc = encoder_specs(arch, n_channels=4)
    head = head_specs(arch, n_out=2)
    assert enc[0].kind == "gaussian-noise"
    assert head[-2].kind == "gap" or head[-1].kind in ("dense", "softmax")
