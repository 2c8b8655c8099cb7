"""Smoke tests for the python bindings."""

import math

import numpy as np
import pytest

import s3lspeech as s3l


def test_synth_and_mel_shapes():
    samples, labels = s3l.synth_utterance(seed=42, duration_min_s=1.0, duration_max_s=1.0)
    assert len(samples) == 16000
    assert labels, "labels expected on synthetic utterances"
    assert max(abs(samples)) <= 0.9

    mel = s3l.log_mel(samples)
    assert mel.shape == (40, 98)
    assert np.all(mel >= math.log(1e-10))

    again, _ = s3l.synth_utterance(seed=42, duration_min_s=1.0, duration_max_s=1.0)
    assert np.array_equal(samples, again)


def test_mel_scale_and_filterbank():
    assert s3l.hz_to_mel(1000.0) == pytest.approx(999.9855, abs=1e-3)
    fb = s3l.mel_filterbank(40, 400)
    assert fb.shape == (40, 201)
    assert np.all(fb >= 0.0)
    assert np.all(fb.max(axis=1) == 1.0)


def test_mfcc_constant_column():
    mel = np.full((8, 3), 2.0)
    coeffs = s3l.mfcc(mel, n_coeff=8)
    assert coeffs[0, 0] == pytest.approx(2.0 * math.sqrt(8.0))
    assert np.allclose(coeffs[1:], 0.0, atol=1e-9)


def test_augmentations():
    clean, _ = s3l.synth_utterance(seed=3, duration_min_s=1.0, duration_max_s=1.0)
    noise = s3l.synth_noise("white", len(clean) + 100, seed=4)
    mixed = s3l.mix_noise(clean, noise, snr_db=100.0, seed=5)
    assert np.max(np.abs(mixed - clean)) < 1e-4

    mel = s3l.log_mel(clean)
    out, record = s3l.spec_augment(mel, seed=7)
    assert out.shape == mel.shape
    shifted, p = s3l.positional_shift(mel, max_shift=8, seed=9)
    assert shifted.shape[1] == mel.shape[1] + p
    if p:
        assert np.array_equal(shifted[:, p:], mel)


def test_losses_and_metrics():
    # uniform distractor sets: identical teacher rows give ln(T)
    rng = np.random.default_rng(0)
    student = rng.normal(size=(5, 8))
    teacher = np.tile(rng.normal(size=(1, 8)), (5, 1))
    assert s3l.contrastive_loss(student, teacher, tau=0.1) == pytest.approx(math.log(5.0))

    lp = np.log(np.array([[0.6, 0.3, 0.1]]))
    assert s3l.ctc_loss(lp, [0]) == pytest.approx(-math.log(0.6))
    assert s3l.greedy_ctc_decode(np.log(np.array([[0.8, 0.1, 0.1], [0.1, 0.1, 0.8], [0.1, 0.8, 0.1]]))) == [0, 1]

    assert s3l.levenshtein([1, 2, 3], [1, 3]) == 1
    assert s3l.token_error_rate([([1, 2], [1, 2])]) == 0.0
    assert s3l.utterance_error_rate([([1], [2]), ([1], [1])]) == 0.5


def test_kmeans_and_masks():
    pts = np.concatenate([np.zeros((6, 2)), np.ones((6, 2)) * 5.0])
    centroids, inertia = s3l.kmeans_fit(pts, k=2, iters=10, seed=1)
    assert centroids.shape == (2, 2)
    assert inertia[-1] == pytest.approx(0.0)
    labels = s3l.kmeans_assign(pts, centroids)
    assert len(set(labels[:6])) == 1 and len(set(labels[6:])) == 1

    idx = s3l.mask_spans(100, start_prob=1.0, span=5, seed=0)
    assert len(idx) == 100


def test_schedule_and_batching():
    assert s3l.lr_at("cosine", 3e-4, 1000, 0) == pytest.approx(3e-4)
    assert s3l.lr_at("cosine", 3e-4, 1000, 500) == pytest.approx(1.5e-4)
    batches, waste = s3l.plan_batches([50, 60, 70, 80], frame_budget=150, seed=0)
    seen = sorted(u for b in batches for u in b)
    assert seen == [0, 1, 2, 3]
    assert 0.0 <= waste < 1.0


def test_encoder_forward():
    enc = s3l.Encoder.from_preset("tiny", seed=1)
    assert enc.downsample() == 8
    samples, _ = s3l.synth_utterance(seed=11, duration_min_s=1.0, duration_max_s=1.0)
    mel = s3l.log_mel(samples)
    final, layers = enc.encode(mel)
    assert final.shape[1] == 64
    assert len(layers) == 4
    agg = enc.aggregated(mel)
    assert agg.shape == final.shape

    paper = s3l.Encoder.from_preset("paper", seed=1)
    assert paper.param_count() == pytest.approx(23.2e6, rel=0.2)
