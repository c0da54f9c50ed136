"""End-to-end pipelines on audio: hiding messages in a carrier, revealing
them from a stego waveform, held-out evaluation with Table-style summaries,
residual spectrogram export, time/frequency flip preprocessing, and ABX
stimulus package generation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import BatchSampler, CorpusManifest, read_wav, write_wav
from .dsp import (AudioClip, MagSpec, PhaseSpec, griffin_lim, istft,
                  istft_tensor, magnitude_phase, polar_tensor, stft, stft_tensor)
from .errors import ConfigError, FormatError, InvalidInput
from .nets import ConditionCode, StegoModel

# Decoded-to-carrier energy ratio below which a reveal is flagged as probably
# not coming from a stego carrier.
LOW_CONFIDENCE_RATIO = 1e-3


def flip_spectrogram(m):
    """Reverse both the frequency-bin and frame order.

    An involution and an energy-preserving permutation; accepts MagSpec,
    ndarray, or tensor and returns the same kind.
    """
    if isinstance(m, MagSpec):
        return MagSpec(m.values[::-1, ::-1].copy(), m.config)
    if isinstance(m, torch.Tensor):
        return torch.flip(m, dims=(-2, -1))
    return np.asarray(m)[..., ::-1, ::-1].copy()


@dataclass
class StegoArtifacts:
    """Products of one hide() call (and optionally a self-decode)."""

    stego: AudioClip
    scale: float                       # peak-protection factor applied to the waveform
    carrier_mag: MagSpec
    carrier_phase: PhaseSpec
    stego_mag: MagSpec                 # c_hat, clamped at zero
    residual: MagSpec                  # |carrier - c_hat|
    message_mags: list[MagSpec]        # messages as fed to the network (post-flip)
    flip: bool
    decoded_messages: list[AudioClip] = field(default_factory=list)


@dataclass
class RevealResult:
    audio: AudioClip
    mag: MagSpec
    energy_ratio: float
    low_confidence: bool


def _model_dtype(model: StegoModel) -> torch.dtype:
    return next(model.parameters()).dtype


def hide(carrier: AudioClip, messages: list[AudioClip], model: StegoModel,
         flip: bool = False) -> StegoArtifacts:
    """Embed ``messages`` into ``carrier`` and synthesize the stego waveform.

    Inputs are padded to a common frame count (messages are cropped or
    zero-padded to the carrier's length); the stego magnitude keeps the
    original carrier phase and the output is sliced back to the carrier's
    exact sample count, with peak-clip protection recorded in ``scale``.
    """
    if len(messages) != model.arch.k:
        raise ConfigError(
            f"model hides k={model.arch.k} messages, got {len(messages)}")
    if len(carrier) == 0:
        raise InvalidInput("carrier is empty")
    cfg = model.stft_config
    if carrier.sample_rate != cfg.sample_rate:
        raise FormatError(
            f"carrier sample rate {carrier.sample_rate} != configured {cfg.sample_rate}")
    hop = cfg.hop
    length = len(carrier)
    padded_len = -(-length // hop) * hop

    waves = np.zeros((1 + len(messages), padded_len))
    waves[0, :length] = carrier.samples
    for i, m in enumerate(messages):
        if m.sample_rate != carrier.sample_rate:
            raise InvalidInput(
                f"message {i} sample rate {m.sample_rate} != carrier {carrier.sample_rate}")
        n = min(len(m), padded_len)
        waves[1 + i, :n] = m.samples[:n]

    re, im = stft_tensor(torch.as_tensor(waves, dtype=torch.float64), cfg)
    mag, phase = magnitude_phase(re, im)
    carrier_mag = mag[0]
    carrier_phase = phase[0]
    message_mags = mag[1:]
    if flip:
        message_mags = flip_spectrogram(message_mags)

    dtype = _model_dtype(model)
    with torch.no_grad():
        c_hat = model.conceal(carrier_mag.to(dtype)[None, None],
                              message_mags.to(dtype)[None])
    c_hat = c_hat[0, 0].double().clamp(min=0)

    re_s, im_s = polar_tensor(c_hat, carrier_phase)
    wav = istft_tensor(re_s, im_s, cfg)[:length].numpy()
    peak = float(np.max(np.abs(wav))) if wav.size else 0.0
    scale = 1.0 / peak if peak > 1.0 else 1.0
    stego = AudioClip(wav * scale, carrier.sample_rate)

    residual = MagSpec(np.abs(carrier_mag.numpy() - c_hat.numpy()), cfg)
    return StegoArtifacts(
        stego=stego,
        scale=scale,
        carrier_mag=MagSpec(carrier_mag.numpy(), cfg),
        carrier_phase=PhaseSpec(carrier_phase.numpy(), cfg),
        stego_mag=MagSpec(c_hat.numpy(), cfg),
        residual=residual,
        message_mags=[MagSpec(m.numpy(), cfg) for m in message_mags],
        flip=flip,
    )


def reveal(stego: AudioClip, model: StegoModel,
           which: int | ConditionCode | None = None, flip: bool = False,
           gl_iterations: int = 50, seed: int = 0) -> RevealResult:
    """Recover one hidden message from a stego waveform.

    Analysis -> message decoder -> (un-flip) -> clamp at zero -> Griffin-Lim
    synthesis. A decoded-energy heuristic flags reveals from carriers that
    probably hold no message.
    """
    cfg = model.stft_config
    mag, _ = stft(stego, cfg)
    dtype = _model_dtype(model)
    with torch.no_grad():
        m_hat = model.message_decode(
            torch.as_tensor(mag.values, dtype=dtype)[None, None], which)
    m_hat = m_hat[0, 0].double().numpy()
    if flip:
        m_hat = flip_spectrogram(m_hat)
    m_hat = np.clip(m_hat, 0.0, None)

    carrier_energy = float(np.sum(mag.values**2))
    ratio = float(np.sum(m_hat**2)) / carrier_energy if carrier_energy > 0 else 0.0
    out_mag = MagSpec(m_hat, cfg)
    audio = griffin_lim(out_mag, cfg, iterations=gl_iterations, seed=seed)
    return RevealResult(audio=audio, mag=out_mag, energy_ratio=ratio,
                        low_confidence=ratio < LOW_CONFIDENCE_RATIO)


# ---------------------------------------------------------------------------
# evaluation harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    p5: float
    p95: float

    @classmethod
    def of(cls, values: np.ndarray) -> "MetricSummary":
        return cls(float(np.mean(values)), float(np.std(values)),
                   float(np.percentile(values, 5)), float(np.percentile(values, 95)))


@dataclass
class EvalReport:
    """Carrier/message reconstruction errors on a held-out split.

    ``carrier_mse`` / ``message_mse`` are the headline post-WAV figures
    (transmission happens in the time domain); the pre-WAV spectrogram-space
    numbers are kept alongside.
    """

    carrier_mse: float
    message_mse: list[float]
    total: float
    pre_wav: dict[str, MetricSummary]
    post_wav: dict[str, MetricSummary]
    regime: str
    k: int
    decoder_mode: str
    split: str
    n_examples: int
    seed: int

    def csv_rows(self) -> list[list]:
        rows = []
        for stage, metrics in (("post_wav", self.post_wav), ("pre_wav", self.pre_wav)):
            for name, s in metrics.items():
                rows.append([f"{stage}/{name}", self.k, self.regime,
                             f"{s.mean:.10e}", f"{s.std:.10e}",
                             f"{s.p5:.10e}", f"{s.p95:.10e}"])
        return rows

    def write_csv(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["metric", "k", "regime", "mean", "std", "p5", "p95"])
            w.writerows(self.csv_rows())


def _quantize_wav(samples: torch.Tensor) -> torch.Tensor:
    """PCM-16 quantization as applied by a WAV round trip."""
    pcm = torch.clamp(torch.round(samples * 32767.0), -32768, 32767)
    return pcm / 32768.0 * (32768.0 / 32767.0)


def _decode_all(model: StegoModel, dec_in: torch.Tensor, k: int) -> torch.Tensor:
    outs = []
    for i in range(k):
        if model.arch.decoder_mode == "single":
            outs.append(model.message_decode(dec_in))
        elif model.arch.decoder_mode == "multi":
            outs.append(model.message_decode(dec_in, i))
        else:
            outs.append(model.message_decode(dec_in, ConditionCode(i, k)))
    return torch.cat(outs, dim=1)


def evaluate(model: StegoModel, manifest: CorpusManifest, split: str = "test",
             n_examples: int = 64, seed: int = 0, frames_per_example: int = 64,
             lambda_c: float = 0.8, lambda_m: float = 1.0, regime: str = "",
             noise_bank=None, noise_coeff: float = 0.5) -> EvalReport:
    """Average reconstruction losses over seeded held-out pairings.

    Deterministic under ``seed``: pairings, crops, and the quantized WAV
    round trip are all pure functions of it.
    """
    if n_examples < 1:
        raise ConfigError(f"n_examples must be >= 1, got {n_examples}")
    cfg = model.stft_config
    k = model.arch.k
    sampler = BatchSampler(manifest, cfg, k=k, frames_per_example=frames_per_example,
                           batch_size=1, split=split, seed=seed,
                           noise_bank=noise_bank, noise_coeff=noise_coeff,
                           dtype=torch.float64)
    dtype = _model_dtype(model)
    pre_carrier, pre_msgs, post_carrier, post_msgs = [], [], [], []
    with torch.no_grad():
        for i in range(n_examples):
            batch = sampler.sample(i)
            c = batch.carriers.to(dtype)
            msgs = batch.messages.to(dtype)
            phase = batch.carrier_phases.double()

            c_hat = model.conceal(c.unsqueeze(1), msgs)
            pre_carrier.append(float(torch.mean((c_hat.squeeze(1) - c) ** 2)))
            m_hat = _decode_all(model, c_hat, k)
            pre_msgs.append([float(torch.mean((m_hat[:, j] - msgs[:, j]) ** 2))
                             for j in range(k)])

            # WAV round trip: clamp, attach carrier phase, synthesize,
            # quantize to PCM-16, re-analyze, then decode.
            mag_tx = c_hat.squeeze(1).double().clamp(min=0)
            re, im = polar_tensor(mag_tx, phase)
            wav = _quantize_wav(istft_tensor(re, im, cfg))
            re2, im2 = stft_tensor(wav, cfg)
            mag_rx, _ = magnitude_phase(re2, im2)
            post_carrier.append(float(torch.mean((mag_rx - c.double()) ** 2)))
            m_hat_rx = _decode_all(model, mag_rx.to(dtype).unsqueeze(1), k)
            post_msgs.append([float(torch.mean((m_hat_rx[:, j] - msgs[:, j]) ** 2))
                              for j in range(k)])

    pre_msgs = np.asarray(pre_msgs)
    post_msgs = np.asarray(post_msgs)
    pre_carrier = np.asarray(pre_carrier)
    post_carrier = np.asarray(post_carrier)

    def summarize(carrier, msgs):
        out = {"carrier": MetricSummary.of(carrier),
               "message_mean": MetricSummary.of(msgs.mean(axis=1))}
        for j in range(k):
            out[f"message_{j}"] = MetricSummary.of(msgs[:, j])
        return out

    message_mse = [float(post_msgs[:, j].mean()) for j in range(k)]
    carrier_mse = float(post_carrier.mean())
    return EvalReport(
        carrier_mse=carrier_mse,
        message_mse=message_mse,
        total=lambda_c * carrier_mse + lambda_m * float(np.sum(message_mse)),
        pre_wav=summarize(pre_carrier, pre_msgs),
        post_wav=summarize(post_carrier, post_msgs),
        regime=regime,
        k=k,
        decoder_mode=model.arch.decoder_mode,
        split=split,
        n_examples=n_examples,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# analysis exports
# ---------------------------------------------------------------------------


def _save_spec_image(values: np.ndarray, path: Path, title: str):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    db = 20.0 * np.log10(np.asarray(values) + 1e-8)
    im = ax.imshow(db, origin="lower", aspect="auto", cmap="magma")
    ax.set_xlabel("frame")
    ax.set_ylabel("frequency bin")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="dB")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def export_residual(reference: MagSpec, estimate: MagSpec, out_dir: str | Path,
                    stem: str = "carrier",
                    phase: PhaseSpec | None = None) -> dict[str, Path]:
    """Write reference/estimate/|difference| spectrogram images, plus the
    residual as audio for listening when a phase to attach is given."""
    if reference.shape != estimate.shape:
        raise InvalidInput(
            f"reference/estimate shapes differ: {reference.shape} vs {estimate.shape}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    residual = MagSpec(np.abs(reference.values - estimate.values), reference.config)
    paths = {}
    for name, spec in (("reference", reference), ("estimate", estimate),
                       ("residual", residual)):
        p = out_dir / f"{stem}_{name}.png"
        _save_spec_image(spec.values, p, f"{stem} {name}")
        paths[name] = p
    if phase is not None:
        clip = istft(residual, phase, reference.config)
        p = out_dir / f"{stem}_residual.wav"
        write_wav(p, clip)
        paths["residual_audio"] = p
    return paths


def export_artifacts(artifacts: StegoArtifacts, out_dir: str | Path,
                     model: StegoModel | None = None,
                     gl_iterations: int = 50, seed: int = 0) -> dict[str, Path]:
    """Write the full analysis bundle for one hide() call.

    With a model, also decodes every message from the stego waveform and
    writes message-side residuals.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"stego": out_dir / "stego.wav"}
    write_wav(paths["stego"], artifacts.stego)
    paths.update(export_residual(artifacts.carrier_mag, artifacts.stego_mag,
                                 out_dir, "carrier", artifacts.carrier_phase))
    if model is not None:
        for i, m in enumerate(artifacts.message_mags):
            which = None if model.arch.decoder_mode == "single" else i
            result = reveal(artifacts.stego, model, which=which, flip=artifacts.flip,
                            gl_iterations=gl_iterations, seed=seed)
            artifacts.decoded_messages.append(result.audio)
            p = out_dir / f"message_{i}.wav"
            write_wav(p, result.audio)
            paths[f"message_{i}"] = p
            original = m if not artifacts.flip else flip_spectrogram(m)
            for name, v in export_residual(original, result.mag, out_dir,
                                           f"message_{i}").items():
                paths[f"message_{i}_{name}"] = v
    return paths


# ---------------------------------------------------------------------------
# ABX stimulus package
# ---------------------------------------------------------------------------


def export_abx_stimuli(model: StegoModel, manifest: CorpusManifest,
                       out_dir: str | Path, n_triples: int = 50,
                       split: str = "test", seed: int = 0,
                       frames_per_example: int | None = None) -> Path:
    """Write (A, B, X) WAV triples plus the answer key CSV.

    A and B are one original carrier and its stego version in seeded random
    order; X re-draws one of them. Returns the key path. The human test
    itself is out of scope.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = manifest.for_split(split)
    if len(entries) < model.arch.k + 1:
        raise ConfigError(
            f"split {split!r} has {len(entries)} clips; need {model.arch.k + 1}")
    rng = np.random.default_rng(seed)
    key_path = out_dir / "key.csv"
    with open(key_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["triple_id", "a_role", "b_role", "x_matches"])
        for t in range(n_triples):
            picks = rng.choice(len(entries), size=1 + model.arch.k, replace=False)
            carrier = read_wav(entries[picks[0]].path)
            if frames_per_example is not None:
                n = model.stft_config.sample_count(frames_per_example)
                carrier = AudioClip(carrier.samples[:n], carrier.sample_rate)
            messages = [read_wav(entries[i].path) for i in picks[1:]]
            art = hide(carrier, messages, model)

            stego_first = bool(rng.integers(2))
            a_clip, a_role = ((art.stego, "stego") if stego_first
                              else (carrier, "original"))
            b_clip, b_role = ((carrier, "original") if stego_first
                              else (art.stego, "stego"))
            x_matches = "a" if rng.integers(2) else "b"
            x_clip = a_clip if x_matches == "a" else b_clip
            write_wav(out_dir / f"triple_{t:03d}_a.wav", a_clip)
            write_wav(out_dir / f"triple_{t:03d}_b.wav", b_clip)
            write_wav(out_dir / f"triple_{t:03d}_x.wav", x_clip)
            w.writerow([t, a_role, b_role, x_matches])
    return key_path


def audit_abx_package(out_dir: str | Path) -> bool:
    """Verify the key CSV against the actual files: X must be byte-identical
    to the declared match and differ from the other, and A/B must differ."""
    out_dir = Path(out_dir)
    with open(out_dir / "key.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    for row in rows:
        t = int(row["triple_id"])
        a = (out_dir / f"triple_{t:03d}_a.wav").read_bytes()
        b = (out_dir / f"triple_{t:03d}_b.wav").read_bytes()
        x = (out_dir / f"triple_{t:03d}_x.wav").read_bytes()
        match = a if row["x_matches"] == "a" else b
        other = b if row["x_matches"] == "a" else a
        if x != match or x == other or a == b:
            return False
        if {row["a_role"], row["b_role"]} != {"original", "stego"}:
            return False
    return True
