"""Autoencoder-fingerprint augmentation for deepfake detectors (native core)."""

from ._core import (
    AutoencoderPool,
    DetectorModel,
    FforgeError,
    LinearScorer,
    Scorer,
    apply_perturbation,
    chain_apply,
    gen_real,
    inject_fingerprint,
    jpeg_roundtrip,
    mae,
    perturbation_names,
    pgd_whitebox,
    psnr,
    roc_auc,
    run_build_pool,
    run_evaluate,
    run_synth,
    run_train,
    video_scores,
)

__all__ = [
    "AutoencoderPool",
    "DetectorModel",
    "FforgeError",
    "LinearScorer",
    "Scorer",
    "apply_perturbation",
    "chain_apply",
    "gen_real",
    "inject_fingerprint",
    "jpeg_roundtrip",
    "mae",
    "perturbation_names",
    "pgd_whitebox",
    "psnr",
    "roc_auc",
    "run_build_pool",
    "run_evaluate",
    "run_synth",
    "run_train",
    "video_scores",
]
