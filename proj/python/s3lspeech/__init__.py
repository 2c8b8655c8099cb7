"""Sustainable self-supervised speech representation learning.

Thin python surface over the C++ core: synthetic speech DSP, the
teacher-student encoder, training objectives, and evaluation metrics.
"""

from ._core import (  # noqa: F401
    ConfigError,
    Encoder,
    S3lError,
    contrastive_loss,
    ctc_loss,
    dtw_distance,
    greedy_ctc_decode,
    hz_to_mel,
    kmeans_assign,
    kmeans_fit,
    levenshtein,
    log_mel,
    lr_at,
    mask_spans,
    mel_filterbank,
    mel_to_hz,
    mfcc,
    mix_noise,
    plan_batches,
    positional_shift,
    spec_augment,
    synth_noise,
    synth_utterance,
    token_error_rate,
    utterance_error_rate,
)

__all__ = [
    "ConfigError",
    "Encoder",
    "S3lError",
    "contrastive_loss",
    "ctc_loss",
    "dtw_distance",
    "greedy_ctc_decode",
    "hz_to_mel",
    "kmeans_assign",
    "kmeans_fit",
    "levenshtein",
    "log_mel",
    "lr_at",
    "mask_spans",
    "mel_filterbank",
    "mel_to_hz",
    "mfcc",
    "mix_noise",
    "plan_batches",
    "positional_shift",
    "spec_augment",
    "synth_noise",
    "synth_utterance",
    "token_error_rate",
    "utterance_error_rate",
]
