"""Shared fixtures: synthetic toy corpus, desk-scale configs, and trained
models reused across test modules (training them once per session keeps the
suite inside its runtime budget).
"""

from __future__ import annotations

import numpy as np
import pytest
import torch

import stegavox as sv

torch.set_num_threads(2)

SR = 16000
# Desk-scale geometry used by the training-dependent tests.
TOY_FRAMES = 16
TOY_LR = 2e-3


def toy_clip(rng: np.random.Generator, n: int = 4000, sr: int = SR) -> np.ndarray:
    """Speech-like synthetic clip: harmonic stack with random tilt, a
    high-band tone (keeps spectra two-sided), and fast amplitude modulation
    so short crops still vary frame to frame."""
    t = np.arange(n) / sr
    f0 = rng.uniform(100, 300)
    sig = np.zeros(n)
    for h in range(1, 9):
        if f0 * h > sr / 2 * 0.9:
            break
        amp = rng.uniform(0.3, 1.0) / h ** rng.uniform(0.3, 0.8)
        sig += amp * np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi))
    fh = rng.uniform(4000, 7000)
    sig += rng.uniform(0.2, 0.6) * np.sin(2 * np.pi * fh * t + rng.uniform(0, 2 * np.pi))
    rate = rng.uniform(40, 150)
    sig *= 0.55 + 0.45 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    sig += 0.02 * rng.standard_normal(n)
    return 0.5 * sig / np.max(np.abs(sig))


def write_toy_corpus(root, n_train=20, n_val=6, n_test=6, seed=123, n_samples=4000):
    rng = np.random.default_rng(seed)
    for split, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        for i in range(n):
            clip = sv.AudioClip(toy_clip(rng, n_samples), SR)
            sv.write_wav(root / split / f"clip_{i:03d}.wav", clip)
    return root


@pytest.fixture(scope="session")
def toy_corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("toycorpus")
    return write_toy_corpus(root)


@pytest.fixture(scope="session")
def toy_manifest(toy_corpus_dir):
    return sv.scan_corpus(toy_corpus_dir)


@pytest.fixture(scope="session")
def toy_stft():
    return sv.StftConfig(fft_size=64, hop=16, window_length=64, sample_rate=SR)


@pytest.fixture(scope="session")
def grad_stft():
    """Geometry for finite-difference checks (fft_size 32, T = 8 crops)."""
    return sv.StftConfig(fft_size=32, hop=8, window_length=32, sample_rate=SR)


def train_toy(manifest, stft_config, regime="sfs", k=1, decoder_mode=None,
              iterations=1500, kernel_count=4, seed=0, lr=TOY_LR,
              out_dir=None, checkpoint_every=0, lambda_g=0.0):
    if decoder_mode is None:
        decoder_mode = "single" if k == 1 else "multi"
    cfg = sv.TrainConfig(regime=regime, k=k, decoder_mode=decoder_mode,
                         iterations=iterations, frames_per_example=TOY_FRAMES,
                         batch_size=8, seed=seed, learning_rate=lr,
                         lambda_g=lambda_g, checkpoint_every=checkpoint_every)
    arch = sv.ArchitectureSpec(kernel_count=kernel_count, k=k,
                               conditional=decoder_mode == "conditional",
                               with_discriminator=lambda_g > 0)
    sampler = sv.BatchSampler(manifest, stft_config, k=k,
                              frames_per_example=TOY_FRAMES, batch_size=8,
                              seed=seed)
    model = sv.init_model(arch, stft_config, seed=seed)
    return sv.train(sampler, cfg, model, out_dir=out_dir)


@pytest.fixture(scope="session")
def trained_sfs_k1(toy_manifest, toy_stft):
    """SFS k=1 workhorse model shared by trend/flip/consistency tests."""
    model, reports = train_toy(toy_manifest, toy_stft, regime="sfs", k=1)
    return model, reports


@pytest.fixture(scope="session")
def trained_sfs_k3(toy_manifest, toy_stft):
    model, reports = train_toy(toy_manifest, toy_stft, regime="sfs", k=3)
    return model, reports


@pytest.fixture(scope="session")
def trained_ftd_no_finetune(toy_manifest, toy_stft, tmp_path_factory):
    """FTD at double budget with a checkpoint exactly at the phase boundary:
    the phase-1-only model (no time-domain constraint ever applied)."""
    out = tmp_path_factory.mktemp("ftd_run")
    train_toy(toy_manifest, toy_stft, regime="ftd", k=1, iterations=3000,
              checkpoint_every=1500, out_dir=out)
    model, header = sv.load_checkpoint(out / "ckpt_0001500.svox")
    assert header["iteration"] == 1500
    return model


@pytest.fixture(scope="session")
def trained_conditional_k3(toy_manifest, toy_stft):
    model, reports = train_toy(toy_manifest, toy_stft, regime="sfs", k=3,
                               decoder_mode="conditional", iterations=3000,
                               kernel_count=8)
    return model, reports


@pytest.fixture(scope="session")
def small_model(toy_stft):
    """Untrained tiny model for shape/loss-formula tests."""
    return sv.init_model(sv.ArchitectureSpec(kernel_count=2, k=1), toy_stft, seed=5)
