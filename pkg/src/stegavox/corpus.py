"""Dataset ingestion: WAV scanning and validation, split assignment,
carrier/message pairing with fixed-length random crops, and noise banks
(directory of WAVs or a seeded synthetic babble fallback).

Input format: RIFF WAV, PCM 16-bit, mono, at the configured sample rate.
"""

from __future__ import annotations

import csv
import hashlib
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.signal
import torch

from .dsp import AudioClip, StftConfig, magnitude_phase, stft_tensor
from .errors import ConfigError, EmptyCorpusError, FormatError, InvalidInput
from .training import inject_noise

SPLITS = ("train", "val", "test")


def read_wav(path: str | Path, expect_rate: int | None = None) -> AudioClip:
    """Load a PCM-16 mono WAV as a float clip in [-1, 1]."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as f:
            n_channels = f.getnchannels()
            sampwidth = f.getsampwidth()
            rate = f.getframerate()
            frames = f.readframes(f.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a readable WAV file ({exc})") from None
    if n_channels != 1:
        raise FormatError(f"{path}: expected mono, got {n_channels} channels")
    if sampwidth != 2:
        raise FormatError(f"{path}: expected 16-bit PCM, got {8 * sampwidth}-bit")
    if expect_rate is not None and rate != expect_rate:
        raise FormatError(f"{path}: sample rate {rate} != expected {expect_rate}")
    samples = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate)


def write_wav(path: str | Path, clip: AudioClip, peak_guard: bool = True) -> float:
    """Write a clip as PCM-16 mono WAV.

    When the clip would clip, scales it to unit peak first; returns the
    applied scale (1.0 when untouched).
    """
    samples = clip.samples
    scale = 1.0
    peak = clip.peak()
    if peak_guard and peak > 1.0:
        scale = 1.0 / peak
        samples = samples * scale
    pcm = np.clip(np.round(samples * 32767.0), -32768, 32767).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(clip.sample_rate)
        f.writeframes(pcm.tobytes())
    return scale


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    n_samples: int
    split: str


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    sample_rate: int = 16000
    diagnostics: list[str] = field(default_factory=list)

    def for_split(self, split: str) -> list[ManifestEntry]:
        if split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {split!r}")
        return [e for e in self.entries if e.split == split]

    def save_csv(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["path", "samples", "split"])
            for e in self.entries:
                w.writerow([e.path, e.n_samples, e.split])

    @classmethod
    def load_csv(cls, path: str | Path, sample_rate: int = 16000) -> "CorpusManifest":
        entries = []
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                entries.append(ManifestEntry(row["path"], int(row["samples"]), row["split"]))
        return cls(entries, sample_rate)


def _hash_split(rel_path: str, seed: int) -> str:
    """Seeded 80/10/10 assignment, stable across runs and machines."""
    digest = hashlib.sha256(f"{seed}:{rel_path}".encode()).digest()
    frac = int.from_bytes(digest[:8], "big") / 2**64
    if frac < 0.8:
        return "train"
    return "val" if frac < 0.9 else "test"


def scan_corpus(root_dir: str | Path, split_rule: str = "auto", seed: int = 0,
                sample_rate: int = 16000) -> CorpusManifest:
    """Recursively discover valid WAVs under ``root_dir`` and assign splits.

    ``split_rule``: "auto" honors explicit train/val/test subdirectories when
    present, falling back to the seeded hash split; "hash" forces the hash
    split; "dirs" requires the subdirectories.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise InvalidInput(f"corpus root {root} is not a directory")
    if split_rule not in ("auto", "hash", "dirs"):
        raise ConfigError(f"unknown split_rule {split_rule!r}")

    paths = sorted(p for p in root.rglob("*") if p.suffix.lower() == ".wav")
    have_split_dirs = any((root / s).is_dir() for s in SPLITS)
    use_dirs = split_rule == "dirs" or (split_rule == "auto" and have_split_dirs)
    if split_rule == "dirs" and not have_split_dirs:
        raise ConfigError(f"{root} has no train/val/test subdirectories")

    entries, diagnostics = [], []
    for p in paths:
        rel = p.relative_to(root).as_posix()
        try:
            clip = read_wav(p, expect_rate=sample_rate)
        except FormatError as exc:
            diagnostics.append(str(exc))
            continue
        if use_dirs:
            top = p.relative_to(root).parts[0]
            if top not in SPLITS:
                diagnostics.append(f"{p}: not under a train/val/test subdirectory, skipped")
                continue
            split = top
        else:
            split = _hash_split(rel, seed)
        entries.append(ManifestEntry(str(p), len(clip), split))
    if not entries:
        raise EmptyCorpusError(f"no valid {sample_rate} Hz mono PCM-16 WAVs under {root}")
    return CorpusManifest(entries, sample_rate, diagnostics)


# ---------------------------------------------------------------------------
# noise banks
# ---------------------------------------------------------------------------


class DirectoryNoiseBank:
    """Random crops from a directory of noise WAVs; short files are tiled."""

    def __init__(self, root: str | Path, sample_rate: int = 16000):
        root = Path(root)
        self.paths = sorted(p for p in root.rglob("*") if p.suffix.lower() == ".wav")
        if not self.paths:
            raise EmptyCorpusError(f"no noise WAVs under {root}")
        self.sample_rate = sample_rate

    def crop(self, n_samples: int, rng: np.random.Generator) -> np.ndarray:
        path = self.paths[int(rng.integers(len(self.paths)))]
        samples = read_wav(path, expect_rate=self.sample_rate).samples
        if len(samples) < n_samples:
            reps = -(-n_samples // len(samples))
            samples = np.tile(samples, reps)
        start = int(rng.integers(len(samples) - n_samples + 1))
        return samples[start : start + n_samples]


class SyntheticBabble:
    """Speech-shaped babble: several voices of tilted noise with syllabic
    amplitude modulation. Deterministic given the caller's rng."""

    def __init__(self, sample_rate: int = 16000, voices: int = 6):
        self.sample_rate = sample_rate
        self.voices = voices
        # gentle low-pass tilt approximating the long-term speech spectrum
        self._b, self._a = scipy.signal.butter(2, 2000 / (sample_rate / 2), "lowpass")

    def crop(self, n_samples: int, rng: np.random.Generator) -> np.ndarray:
        t = np.arange(n_samples) / self.sample_rate
        out = np.zeros(n_samples)
        for _ in range(self.voices):
            voice = scipy.signal.lfilter(self._b, self._a, rng.standard_normal(n_samples))
            rate = rng.uniform(2.0, 6.0)  # syllables per second
            envelope = 0.5 + 0.5 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
            out += voice * envelope
        peak = np.max(np.abs(out))
        return out / (peak * 2.0) if peak > 0 else out


def make_noise_bank(source: str | Path | None, sample_rate: int = 16000):
    """None, "babble" for the synthetic fallback, or a directory of WAVs."""
    if source is None or source == "none":
        return None
    if source == "babble":
        return SyntheticBabble(sample_rate)
    return DirectoryNoiseBank(source, sample_rate)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class ExampleSource:
    carrier_path: str
    carrier_offset: int
    message_paths: list[str]
    message_offsets: list[int]
    noise_scale: float = 1.0


@dataclass
class ExampleBatch:
    carriers: torch.Tensor        # (B, F, T) magnitudes
    carrier_phases: torch.Tensor  # (B, F, T)
    messages: torch.Tensor        # (B, k, F, T) magnitudes
    sources: list[ExampleSource]


class BatchSampler:
    """Deterministic carrier/message batch construction.

    Every batch is a pure function of (manifest order, seed, iteration):
    per example one carrier and k distinct message clips are drawn without
    replacement, cropped at random offsets to exactly ``frames_per_example``
    analysis frames, noise-injected (carriers only, when a bank is given),
    and transformed to magnitude/phase.
    """

    def __init__(self, manifest: CorpusManifest, stft_config: StftConfig,
                 k: int = 1, frames_per_example: int = 64, batch_size: int = 8,
                 split: str = "train", noise_bank=None, noise_coeff: float = 0.5,
                 seed: int = 0, dtype: torch.dtype = torch.float32):
        self.entries = manifest.for_split(split)
        if len(self.entries) < k + 1:
            raise ConfigError(
                f"split {split!r} has {len(self.entries)} clips; need at least "
                f"{k + 1} distinct clips for one carrier plus {k} messages"
            )
        self.stft_config = stft_config
        self.k = k
        self.frames_per_example = frames_per_example
        self.batch_size = batch_size
        self.noise_bank = noise_bank
        self.noise_coeff = noise_coeff
        self.seed = seed
        self.dtype = dtype
        self.crop_samples = stft_config.sample_count(frames_per_example)
        self._clip_cache: dict[str, np.ndarray] = {}

    def _samples(self, path: str) -> np.ndarray:
        if path not in self._clip_cache:
            self._clip_cache[path] = read_wav(path).samples
        return self._clip_cache[path]

    def _crop(self, path: str, rng: np.random.Generator) -> tuple[np.ndarray, int]:
        samples = self._samples(path)
        if len(samples) >= self.crop_samples:
            offset = int(rng.integers(len(samples) - self.crop_samples + 1))
            return samples[offset : offset + self.crop_samples], offset
        # short clip: keep it all, zero-pad the tail
        padded = np.zeros(self.crop_samples)
        padded[: len(samples)] = samples
        return padded, 0

    def sample(self, iteration: int) -> ExampleBatch:
        rng = np.random.default_rng((self.seed, iteration))
        waves = np.zeros((self.batch_size, 1 + self.k, self.crop_samples))
        sources = []
        for b in range(self.batch_size):
            picks = rng.choice(len(self.entries), size=1 + self.k, replace=False)
            carrier_entry = self.entries[picks[0]]
            carrier, c_off = self._crop(carrier_entry.path, rng)
            noise_scale = 1.0
            if self.noise_bank is not None and self.noise_coeff != 0:
                noise = self.noise_bank.crop(self.crop_samples, rng)
                carrier, noise_scale = inject_noise(carrier, noise, self.noise_coeff)
            waves[b, 0] = carrier
            msg_paths, msg_offsets = [], []
            for j, idx in enumerate(picks[1:]):
                entry = self.entries[idx]
                crop, off = self._crop(entry.path, rng)
                waves[b, 1 + j] = crop
                msg_paths.append(entry.path)
                msg_offsets.append(off)
            sources.append(ExampleSource(carrier_entry.path, c_off, msg_paths,
                                         msg_offsets, noise_scale))

        flat = torch.as_tensor(waves.reshape(-1, self.crop_samples), dtype=torch.float64)
        re, im = stft_tensor(flat, self.stft_config)
        mag, phase = magnitude_phase(re, im)
        f, t = mag.shape[-2:]
        mag = mag.reshape(self.batch_size, 1 + self.k, f, t)
        phase = phase.reshape(self.batch_size, 1 + self.k, f, t)
        return ExampleBatch(
            carriers=mag[:, 0].to(self.dtype),
            carrier_phases=phase[:, 0].to(self.dtype),
            messages=mag[:, 1:].to(self.dtype),
            sources=sources,
        )
