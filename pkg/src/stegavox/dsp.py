"""Deterministic, differentiable signal transforms.

STFT and ISTFT are realized as linear operators (complex 1D-convolution
equivalents built from windowed DFT-basis kernels), so spectrogram
estimates can be pushed through a time-domain round trip inside a training
graph. Also provides phase handling and Griffin-Lim phase recovery.

All public functions operate on the numpy-backed domain types
(:class:`AudioClip`, :class:`MagSpec`, :class:`PhaseSpec`) in double
precision; the tensor-level helpers (``stft_tensor`` and friends) follow
the dtype of their inputs and are the ones the training loop consumes.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.signal
import torch
import torch.nn.functional as F

from .errors import ConfigError, FormatError, InvalidInput

# Relative floor for the window-squared overlap-add envelope. A window/hop
# pair whose steady-state envelope dips below this fraction of its peak has
# no well-conditioned least-squares inverse and is rejected at construction.
OVERLAP_ADD_TOL = 1e-8

# Magnitude floor used only inside gradient-carrying paths, to keep
# d(sqrt)/dx finite at zero-energy bins. Orders of magnitude below every
# tolerance in this package.
_GRAD_SAFE_FLOOR = 1e-24


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis geometry shared by every transform in a pipeline."""

    fft_size: int = 512
    hop: int = 160
    window_length: int = 512
    window: str = "hann"
    sample_rate: int = 16000

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size % 2 != 0:
            raise ConfigError(f"fft_size must be a positive even integer, got {self.fft_size}")
        if self.hop < 1:
            raise ConfigError(f"hop must be positive, got {self.hop}")
        if not 1 <= self.window_length <= self.fft_size:
            raise ConfigError(
                f"window_length must be in [1, fft_size], got {self.window_length} vs fft_size {self.fft_size}"
            )
        if self.hop > self.window_length:
            raise ConfigError(
                f"hop {self.hop} > window_length {self.window_length}: frames would not overlap"
            )
        if self.sample_rate < 1:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        env = _overlap_envelope(self)
        if env.min() < OVERLAP_ADD_TOL * env.max():
            raise ConfigError(
                f"window {self.window!r} (length {self.window_length}) at hop {self.hop} "
                f"violates the overlap-add condition: envelope min/max = "
                f"{env.min():.3e}/{env.max():.3e}"
            )

    @property
    def frequency_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad(self) -> int:
        """Reflective padding applied to each end of a clip before framing."""
        return self.window_length // 2

    def frame_count(self, n_samples: int) -> int:
        """Number of analysis frames produced for a clip of ``n_samples``."""
        padded = n_samples + 2 * self.pad
        return (padded - self.window_length) // self.hop + 1

    def sample_count(self, n_frames: int) -> int:
        """Clip length reconstructed from ``n_frames`` analysis frames."""
        return (n_frames - 1) * self.hop + self.window_length - 2 * self.pad

    def window_values(self) -> np.ndarray:
        return _window_values(self)


@functools.lru_cache(maxsize=32)
def _window_values(cfg: StftConfig) -> np.ndarray:
    try:
        w = scipy.signal.get_window(cfg.window, cfg.window_length, fftbins=True)
    except ValueError as exc:
        raise ConfigError(f"unknown window {cfg.window!r}: {exc}") from None
    return np.asarray(w, dtype=np.float64)


def _overlap_envelope(cfg: StftConfig) -> np.ndarray:
    """Steady-state overlap-add envelope of the squared analysis window."""
    wsq = _window_values(cfg) ** 2
    n_frames = 4 * (cfg.window_length // cfg.hop + 1)
    env = np.zeros((n_frames - 1) * cfg.hop + cfg.window_length)
    for m in range(n_frames):
        env[m * cfg.hop : m * cfg.hop + cfg.window_length] += wsq
    return env[cfg.window_length : -cfg.window_length]


@dataclass
class AudioClip:
    """A mono waveform with its sample rate."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidInput(f"AudioClip must be mono (1-D), got shape {self.samples.shape}")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise InvalidInput("AudioClip contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(np.square(self.samples)))) if len(self) else 0.0

    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if len(self) else 0.0


@dataclass
class MagSpec:
    """F x T grid of nonnegative STFT magnitudes."""

    values: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InvalidInput(f"MagSpec must be 2-D (F x T), got shape {self.values.shape}")
        if self.values.shape[0] != self.config.frequency_bins:
            raise InvalidInput(
                f"MagSpec has {self.values.shape[0]} bins but config implies "
                f"{self.config.frequency_bins}"
            )
        if self.values.size and self.values.min() < 0:
            raise InvalidInput("MagSpec values must be nonnegative")

    @property
    def shape(self):
        return self.values.shape


@dataclass
class PhaseSpec:
    """F x T grid of phase angles in radians, shape-matched to a MagSpec."""

    values: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InvalidInput(f"PhaseSpec must be 2-D (F x T), got shape {self.values.shape}")
        if self.values.shape[0] != self.config.frequency_bins:
            raise InvalidInput(
                f"PhaseSpec has {self.values.shape[0]} bins but config implies "
                f"{self.config.frequency_bins}"
            )

    @property
    def shape(self):
        return self.values.shape


# ---------------------------------------------------------------------------
# tensor-level transforms (differentiable; used directly by the training loop)
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=8)
def _kernels(cfg: StftConfig, dtype: torch.dtype):
    """Analysis/synthesis conv kernels for one config.

    Analysis computes X_k = sum_n w[n] x[n] exp(-2i pi k (n+off)/N) via a
    strided conv1d; synthesis applies the conjugate-symmetric inverse DFT
    weighted by the window again (least-squares frames), via
    conv_transpose1d, to be divided by the squared-window envelope.
    """
    w = _window_values(cfg)
    wl, n_fft = cfg.window_length, cfg.fft_size
    n = np.arange(wl)
    off = (n_fft - wl) // 2  # centered zero-padding offset for short windows
    k = np.arange(cfg.frequency_bins)[:, None]
    ang = 2.0 * np.pi * k * (n[None, :] + off) / n_fft
    a_real = w * np.cos(ang)
    a_imag = -w * np.sin(ang)
    analysis = torch.as_tensor(
        np.concatenate([a_real, a_imag], axis=0)[:, None, :], dtype=dtype
    )
    alpha = np.full(cfg.frequency_bins, 2.0)
    alpha[0] = 1.0
    if n_fft % 2 == 0:
        alpha[-1] = 1.0
    s_real = (alpha[:, None] * a_real) / n_fft
    s_imag = (alpha[:, None] * a_imag) / n_fft
    synthesis = torch.as_tensor(
        np.concatenate([s_real, s_imag], axis=0)[:, None, :], dtype=dtype
    )
    wsq = torch.as_tensor((w * w)[None, None, :], dtype=dtype)
    return analysis, synthesis, wsq


def _as_batched(x: torch.Tensor, want_dims: int):
    if x.dim() == want_dims - 1:
        return x.unsqueeze(0), True
    if x.dim() == want_dims:
        return x, False
    raise InvalidInput(f"expected a {want_dims - 1}-D or {want_dims}-D tensor, got {x.dim()}-D")


def stft_tensor(x: torch.Tensor, cfg: StftConfig):
    """Windowed DFT of a waveform tensor ``(L,)`` or ``(B, L)``.

    Returns real and imaginary parts, each ``(F, T)`` or ``(B, F, T)``.
    """
    x, squeezed = _as_batched(x, 2)
    if x.shape[-1] <= cfg.pad:
        raise InvalidInput(
            f"clip of {x.shape[-1]} samples is too short for reflective padding of {cfg.pad}"
        )
    analysis, _, _ = _kernels(cfg, x.dtype)
    xp = F.pad(x.unsqueeze(1), (cfg.pad, cfg.pad), mode="reflect")
    spec = F.conv1d(xp, analysis, stride=cfg.hop)
    fb = cfg.frequency_bins
    re, im = spec[:, :fb], spec[:, fb:]
    if squeezed:
        re, im = re.squeeze(0), im.squeeze(0)
    return re, im


def istft_tensor(re: torch.Tensor, im: torch.Tensor, cfg: StftConfig, length: int | None = None):
    """Least-squares inverse of :func:`stft_tensor` via weighted overlap-add."""
    if re.shape != im.shape:
        raise InvalidInput(f"real/imaginary shapes differ: {tuple(re.shape)} vs {tuple(im.shape)}")
    re, squeezed = _as_batched(re, 3)
    im, _ = _as_batched(im, 3)
    n_frames = re.shape[-1]
    if length is None:
        length = cfg.sample_count(n_frames)
    _, synthesis, wsq = _kernels(cfg, re.dtype)
    spec = torch.cat([re, im], dim=1)
    y = F.conv_transpose1d(spec, synthesis, stride=cfg.hop)
    ones = torch.ones(1, 1, n_frames, dtype=re.dtype, device=re.device)
    env = F.conv_transpose1d(ones, wsq, stride=cfg.hop)
    # Envelope zeros only ever occur inside the discarded padding region;
    # the clamp keeps 0-gradient NaNs from leaking out of it.
    y = y / env.clamp(min=torch.finfo(re.dtype).tiny)
    y = y[:, 0, cfg.pad : cfg.pad + length]
    return y.squeeze(0) if squeezed else y


def magnitude_phase(re: torch.Tensor, im: torch.Tensor):
    """Exact magnitude and phase; zero bins map to (0, 0)."""
    return torch.sqrt(re * re + im * im), torch.atan2(im, re)


def polar_tensor(mag: torch.Tensor, phase: torch.Tensor):
    """Real/imaginary parts of ``mag * exp(i * phase)``."""
    return mag * torch.cos(phase), mag * torch.sin(phase)


def stft_istft_tensor(mag: torch.Tensor, phase: torch.Tensor, cfg: StftConfig) -> torch.Tensor:
    """Time-domain round trip of a magnitude estimate under a fixed phase.

    Attaches ``phase`` (constant, no gradient), synthesizes audio, re-analyzes
    it, and returns the re-measured magnitude. Differentiable w.r.t. ``mag``.
    """
    if mag.shape != phase.shape:
        raise InvalidInput(
            f"magnitude/phase shapes differ: {tuple(mag.shape)} vs {tuple(phase.shape)}"
        )
    phase = phase.detach()
    re, im = polar_tensor(mag, phase)
    audio = istft_tensor(re, im, cfg)
    re2, im2 = stft_tensor(audio, cfg)
    return torch.sqrt(torch.clamp(re2 * re2 + im2 * im2, min=_GRAD_SAFE_FLOOR))


# ---------------------------------------------------------------------------
# public operations on domain types
# ---------------------------------------------------------------------------


def stft(clip: AudioClip, cfg: StftConfig | None = None):
    """Magnitude and phase of the windowed DFT of ``clip`` at each hop."""
    cfg = cfg or StftConfig()
    if len(clip) == 0:
        raise InvalidInput("cannot analyze an empty clip")
    if clip.sample_rate != cfg.sample_rate:
        raise FormatError(
            f"clip sample rate {clip.sample_rate} != configured {cfg.sample_rate}"
        )
    x = torch.as_tensor(clip.samples, dtype=torch.float64)
    re, im = stft_tensor(x, cfg)
    mag, phase = magnitude_phase(re, im)
    return MagSpec(mag.numpy(), cfg), PhaseSpec(phase.numpy(), cfg)


def istft(mag: MagSpec, phase: PhaseSpec, cfg: StftConfig | None = None) -> AudioClip:
    """Overlap-add synthesis with squared-window envelope compensation."""
    cfg = cfg or mag.config
    if mag.shape != phase.shape:
        raise InvalidInput(f"magnitude/phase shapes differ: {mag.shape} vs {phase.shape}")
    m = torch.as_tensor(mag.values, dtype=torch.float64)
    p = torch.as_tensor(phase.values, dtype=torch.float64)
    re, im = polar_tensor(m, p)
    y = istft_tensor(re, im, cfg)
    return AudioClip(y.numpy(), cfg.sample_rate)


def stft_istft_layer(
    mag_hat: MagSpec, carrier_phase: PhaseSpec, cfg: StftConfig | None = None
) -> MagSpec:
    """Magnitude after synthesizing ``mag_hat`` under ``carrier_phase`` and re-analyzing."""
    cfg = cfg or mag_hat.config
    if mag_hat.shape != carrier_phase.shape:
        raise InvalidInput(
            f"magnitude/phase shapes differ: {mag_hat.shape} vs {carrier_phase.shape}"
        )
    m = torch.as_tensor(mag_hat.values, dtype=torch.float64)
    p = torch.as_tensor(carrier_phase.values, dtype=torch.float64)
    out = stft_istft_tensor(m, p, cfg)
    return MagSpec(out.numpy(), cfg)


def griffin_lim(
    mag: MagSpec,
    cfg: StftConfig | None = None,
    iterations: int = 50,
    seed: int = 0,
    return_residuals: bool = False,
):
    """Recover a waveform whose STFT magnitude approximates ``mag``.

    Classic alternating projection between the set of consistent spectrograms
    and the set of spectra with the given magnitude, starting from seeded
    random phase. With the least-squares ISTFT used here the spectral
    convergence residual |||STFT(x)| - mag|| / ||mag|| is non-increasing.
    """
    cfg = cfg or mag.config
    if iterations < 1:
        raise InvalidInput(f"iterations must be >= 1, got {iterations}")
    if mag.values.size and mag.values.min() < 0:
        raise InvalidInput("Griffin-Lim requires nonnegative magnitudes")
    target = torch.as_tensor(mag.values, dtype=torch.float64)
    rng = np.random.default_rng(seed)
    phase = torch.as_tensor(
        rng.uniform(-np.pi, np.pi, size=mag.shape), dtype=torch.float64
    )
    norm = torch.linalg.norm(target)
    re, im = polar_tensor(target, phase)
    y = istft_tensor(re, im, cfg)
    residuals = []
    for _ in range(iterations):
        re, im = stft_tensor(y, cfg)
        cur = torch.sqrt(re * re + im * im)
        if norm > 0:
            residuals.append(float(torch.linalg.norm(cur - target) / norm))
        else:
            residuals.append(0.0)
        scale = target / cur.clamp(min=torch.finfo(torch.float64).tiny)
        y = istft_tensor(re * scale, im * scale, cfg)
    clip = AudioClip(y.numpy(), cfg.sample_rate)
    return (clip, residuals) if return_residuals else clip
