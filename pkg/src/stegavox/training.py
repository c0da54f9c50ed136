"""Training: reconstruction and adversarial losses, carrier noise injection,
the four regime schedules (with and without the time-domain round-trip
constraint), and the Adam loop with metrics/checkpoint emission.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dsp import MagSpec, PhaseSpec, stft_istft_tensor
from .errors import ConfigError, InvalidInput, TrainingDiverged
from .nets import ConditionCode, StegoModel

REGIMES = ("ftd", "sfs", "fta", "sfs_ftd")
DECODER_MODES = ("single", "multi", "conditional")

ADAM_BETAS = (0.9, 0.999)

# Floor for the arguments of the adversarial log terms, to avoid -inf.
LOG_FLOOR = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "sfs"
    k: int = 1
    decoder_mode: str = "single"
    lambda_c: float = 0.8
    lambda_m: float = 1.0
    lambda_g: float = 0.0
    iterations: int = 10000
    learning_rate: float = 1e-3
    batch_size: int = 8
    noise_coeff: float = 0.5
    seed: int = 0
    frames_per_example: int = 64
    log_every: int = 50
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.decoder_mode not in DECODER_MODES:
            raise ConfigError(
                f"decoder_mode must be one of {DECODER_MODES}, got {self.decoder_mode!r}"
            )
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.decoder_mode == "single" and self.k != 1:
            raise ConfigError("single decoder mode requires k = 1")
        if self.lambda_c <= 0 or self.lambda_m <= 0:
            raise ConfigError("lambda_c and lambda_m must be positive")
        if self.lambda_g < 0:
            raise ConfigError("lambda_g must be >= 0")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be positive, got {self.iterations}")
        if self.batch_size < 1 or self.frames_per_example < 2:
            raise ConfigError("batch_size must be >= 1 and frames_per_example >= 2")

    def phases(self) -> list["TrainPhase"]:
        """The regime's schedule: when the time-domain layer is active and
        which parameters train."""
        n1 = self.iterations // 2
        n2 = self.iterations - n1
        if self.regime == "sfs":
            return [TrainPhase(self.iterations, through_layer=True, trainable="all")]
        if self.regime == "ftd":
            return [TrainPhase(n1, through_layer=False, trainable="all"),
                    TrainPhase(n2, through_layer=True, trainable="message_decoders")]
        if self.regime == "fta":
            return [TrainPhase(n1, through_layer=False, trainable="all"),
                    TrainPhase(n2, through_layer=True, trainable="all")]
        # sfs_ftd
        return [TrainPhase(n1, through_layer=True, trainable="all"),
                TrainPhase(n2, through_layer=True, trainable="message_decoders")]


@dataclass(frozen=True)
class TrainPhase:
    iterations: int
    through_layer: bool
    trainable: str  # "all" or "message_decoders"


@dataclass
class LossReport:
    iteration: int
    carrier_loss: float
    message_losses: list[float]
    adversarial_loss: float | None = None
    discriminator_loss: float | None = None
    total: float = 0.0

    def __post_init__(self):
        vals = [self.carrier_loss, *self.message_losses, self.total]
        vals += [v for v in (self.adversarial_loss, self.discriminator_loss) if v is not None]
        if not all(np.isfinite(v) for v in vals):
            raise InvalidInput(f"non-finite loss values at iteration {self.iteration}")


def config_digest(cfg: TrainConfig) -> str:
    """Stable content hash of a training configuration."""
    text = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every entry (including the batch axis)."""
    if a.shape != b.shape:
        raise InvalidInput(f"MSE operands differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.mean((a - b) ** 2)


def _spec_tensor(x, dtype=torch.float64) -> torch.Tensor:
    if isinstance(x, (MagSpec, PhaseSpec)):
        x = x.values
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _batched_specs(carrier, messages, phase, dtype):
    """Normalize single-example inputs to batched tensors (B,F,T)/(B,k,F,T)."""
    c = _spec_tensor(carrier).to(dtype)
    if c.dim() == 2:
        c = c.unsqueeze(0)
    msgs = [_spec_tensor(m).to(dtype) for m in messages]
    m = torch.stack(msgs, dim=0).unsqueeze(0) if msgs[0].dim() == 2 \
        else torch.stack(msgs, dim=1)
    p = None
    if phase is not None:
        p = _spec_tensor(phase).to(dtype)
        if p.dim() == 2:
            p = p.unsqueeze(0)
    return c, m, p


def reconstruction_losses(carriers: torch.Tensor, messages: torch.Tensor,
                          phases: torch.Tensor | None, model: StegoModel,
                          cfg: TrainConfig, through_layer: bool):
    """Weighted carrier + message reconstruction objective on a batch.

    ``carriers``: (B, F, T); ``messages``: (B, k, F, T); ``phases``: carrier
    phase, required when ``through_layer``. Returns (total, carrier_mse,
    per-message mses, c_hat) as tensors.
    """
    if messages.shape[1] != cfg.k:
        raise ConfigError(f"config expects k={cfg.k} messages, got {messages.shape[1]}")
    if through_layer and phases is None:
        raise InvalidInput("carrier phase is required to route through the STFT/ISTFT layer")
    c = carriers.unsqueeze(1)
    c_hat = model.conceal(c, messages)
    carrier_mse = mse(c_hat, c)

    dec_in = c_hat
    if through_layer:
        dec_in = stft_istft_tensor(c_hat.squeeze(1), phases, model.stft_config).unsqueeze(1)

    mode = model.arch.decoder_mode
    msg_mses = []
    for i in range(cfg.k):
        if mode == "single":
            m_hat = model.message_decode(dec_in)
        elif mode == "multi":
            m_hat = model.message_decode(dec_in, i)
        else:
            m_hat = model.message_decode(dec_in, ConditionCode(i, cfg.k))
        msg_mses.append(mse(m_hat, messages[:, i : i + 1]))

    total = cfg.lambda_c * carrier_mse + cfg.lambda_m * sum(msg_mses)
    return total, carrier_mse, msg_mses, c_hat


def _default_through_layer(cfg: TrainConfig) -> bool:
    # SFS-style regimes apply the layer from the start; FTD/FTA only in their
    # fine-tuning phase, so a standalone loss call defaults to the phase-1 view.
    return cfg.regime in ("sfs", "sfs_ftd")


def _loss_report(carrier, messages, phase, model, cfg, through_layer) -> LossReport:
    if through_layer is None:
        through_layer = _default_through_layer(cfg)
    c, m, p = _batched_specs(carrier, messages, phase,
                             next(model.parameters()).dtype)
    with torch.no_grad():
        total, carrier_mse, msg_mses, _ = reconstruction_losses(
            c, m, p, model, cfg, through_layer)
    return LossReport(
        iteration=0,
        carrier_loss=float(carrier_mse),
        message_losses=[float(v) for v in msg_mses],
        total=float(total),
    )


def loss_single(carrier, message, model: StegoModel, cfg: TrainConfig,
                carrier_phase=None, through_layer: bool | None = None) -> LossReport:
    """Single-message objective: lambda_c * MSE(c, c_hat) + lambda_m * MSE(m, m_hat)."""
    if cfg.k != 1:
        raise ConfigError(f"loss_single requires k=1, config has k={cfg.k}")
    return _loss_report(carrier, [message], carrier_phase, model, cfg, through_layer)


def loss_multi(carrier, messages, model: StegoModel, cfg: TrainConfig,
               carrier_phase=None, through_layer: bool | None = None) -> LossReport:
    """Multi-decoder objective: message term sums per-decoder MSEs over one shared c_hat."""
    if len(messages) != cfg.k:
        raise ConfigError(f"expected {cfg.k} messages, got {len(messages)}")
    return _loss_report(carrier, messages, carrier_phase, model, cfg, through_layer)


def loss_conditional(carrier, messages, model: StegoModel, cfg: TrainConfig,
                     carrier_phase=None, through_layer: bool | None = None) -> LossReport:
    """Conditional objective: one decoder invoked once per one-hot code."""
    if model.arch.decoder_mode != "conditional":
        raise ConfigError("loss_conditional requires a conditional-decoder model")
    if len(messages) != cfg.k:
        raise ConfigError(f"expected {cfg.k} messages, got {len(messages)}")
    return _loss_report(carrier, messages, carrier_phase, model, cfg, through_layer)


def adversarial_losses(carrier, carrier_hat, model: StegoModel, cfg: TrainConfig):
    """Generator and discriminator terms of the adversarial objective.

    Returns tensors ``(generator_term, discriminator_term)`` where the
    generator term back-propagates into ``carrier_hat`` only and the
    discriminator term sees ``carrier_hat`` detached.
    """
    if cfg.lambda_g <= 0:
        raise ConfigError("adversarial losses need lambda_g > 0")
    dtype = next(model.parameters()).dtype
    c = _as_disc_input(carrier, dtype)
    c_hat = _as_disc_input(carrier_hat, dtype)
    gen = _generator_adversarial_term(c_hat, model, cfg)
    dis = _discriminator_term(c, c_hat, model)
    return gen, dis


def _as_disc_input(x, dtype) -> torch.Tensor:
    t = x if isinstance(x, torch.Tensor) else _spec_tensor(x).to(dtype)
    if t.dim() == 2:
        t = t.unsqueeze(0)
    if t.dim() == 3:
        t = t.unsqueeze(1)
    return t


def _check_simplex(p: torch.Tensor):
    if torch.any(p < 0) or torch.any(p > 1):
        raise RuntimeError(f"discriminator output left [0, 1]: {p}")


def _generator_adversarial_term(c_hat: torch.Tensor, model: StegoModel,
                                cfg: TrainConfig) -> torch.Tensor:
    p_fake = model.discriminate(c_hat)
    _check_simplex(p_fake)
    return cfg.lambda_g * -torch.log(p_fake.clamp(min=LOG_FLOOR)).mean()


def _discriminator_term(c: torch.Tensor, c_hat: torch.Tensor,
                        model: StegoModel) -> torch.Tensor:
    p_real = model.discriminate(c)
    p_fake = model.discriminate(c_hat.detach())
    _check_simplex(p_real)
    _check_simplex(p_fake)
    return (-torch.log(p_real.clamp(min=LOG_FLOOR))
            - torch.log((1 - p_fake).clamp(min=LOG_FLOOR))).mean()


def inject_noise(carrier, noise, coeff: float):
    """Mix background noise into a carrier at a fixed carrier-relative level.

    Returns ``(mixed, scale)`` where ``mixed = (c + coeff * (rms_c / rms_n) * n)
    * scale`` and ``scale`` re-normalizes to unit peak only when the mix would
    clip. ``coeff = 0`` is the exact identity.
    """
    from .dsp import AudioClip  # local import to keep module load order simple

    as_clip = isinstance(carrier, AudioClip)
    c = carrier.samples if as_clip else np.asarray(carrier, dtype=np.float64)
    n = noise.samples if isinstance(noise, AudioClip) else np.asarray(noise, dtype=np.float64)
    if coeff == 0:
        return (carrier, 1.0) if as_clip else (c, 1.0)
    if len(n) < len(c):
        raise InvalidInput(f"noise ({len(n)} samples) is shorter than the carrier ({len(c)})")
    n = n[: len(c)]
    rms_c = float(np.sqrt(np.mean(c * c)))
    rms_n = float(np.sqrt(np.mean(n * n)))
    if rms_n == 0:
        raise InvalidInput("noise clip is silent (zero RMS)")
    mixed = c + coeff * (rms_c / rms_n) * n
    peak = float(np.max(np.abs(mixed))) if mixed.size else 0.0
    scale = 1.0 / peak if peak > 1.0 else 1.0
    mixed = mixed * scale
    if as_clip:
        return AudioClip(mixed, carrier.sample_rate), scale
    return mixed, scale


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------


def _set_trainable(model: StegoModel, which: str):
    if which == "all":
        for p in model.parameters():
            p.requires_grad_(True)
        return
    for p in model.parameters():
        p.requires_grad_(False)
    for p in model.message_decoder_parameters():
        p.requires_grad_(True)


def _metrics_header(k: int) -> list[str]:
    return (["iteration", "carrier_loss"]
            + [f"message_loss_{i}" for i in range(k)]
            + ["adversarial_loss", "discriminator_loss", "total"])


def _metrics_row(r: LossReport) -> list:
    return ([r.iteration, f"{r.carrier_loss:.10e}"]
            + [f"{v:.10e}" for v in r.message_losses]
            + [("" if r.adversarial_loss is None else f"{r.adversarial_loss:.10e}"),
               ("" if r.discriminator_loss is None else f"{r.discriminator_loss:.10e}"),
               f"{r.total:.10e}"])


def train(batches, cfg: TrainConfig, model: StegoModel,
          out_dir: str | Path | None = None, verbose: bool = False):
    """Run the regime's phase schedule with Adam.

    ``batches`` must expose ``sample(iteration) -> ExampleBatch`` and be
    deterministic in the iteration index. Returns ``(model, reports)`` with
    one LossReport per step. When ``out_dir`` is given, appends
    ``metrics.csv`` rows per step, writes periodic checkpoints per
    ``cfg.checkpoint_every``, and a final one.
    """
    if cfg.k != model.arch.k or cfg.decoder_mode != model.arch.decoder_mode:
        raise ConfigError(
            f"config (k={cfg.k}, {cfg.decoder_mode}) does not match the model "
            f"(k={model.arch.k}, {model.arch.decoder_mode})"
        )
    adversarial = cfg.lambda_g > 0
    if adversarial and model.discriminator is None:
        raise ConfigError("lambda_g > 0 requires a model built with_discriminator=True")

    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_file = writer = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.csv"
        new_file = not metrics_path.exists()
        metrics_file = open(metrics_path, "a", newline="")
        writer = csv.writer(metrics_file)
        if new_file:
            writer.writerow(_metrics_header(cfg.k))

    def save_checkpoint(path, iteration):
        from .checkpoint import save_checkpoint as _save
        _save(path, model, iteration=iteration, train_digest=config_digest(cfg),
              regime=cfg.regime, seed=cfg.seed)

    reports: list[LossReport] = []
    iteration = 0
    try:
        for phase in cfg.phases():
            if phase.iterations == 0:
                continue
            _set_trainable(model, phase.trainable)
            trainable = [p for p in model.generator_parameters() if p.requires_grad]
            opt = torch.optim.Adam(trainable, lr=cfg.learning_rate, betas=ADAM_BETAS)
            opt_d = None
            # Adversarial play only makes sense while the generator side is
            # fully trainable; in decoder-only fine-tuning the -log A(c_hat)
            # term has no trainable path, so it is dropped with the phase.
            adv_here = adversarial and phase.trainable == "all"
            if adv_here:
                opt_d = torch.optim.Adam(model.discriminator.parameters(),
                                         lr=cfg.learning_rate, betas=ADAM_BETAS)

            for _ in range(phase.iterations):
                batch = batches.sample(iteration)
                carriers = batch.carriers.to(dtype=next(model.parameters()).dtype)
                messages = batch.messages.to(carriers.dtype)
                phases_t = batch.carrier_phases.to(carriers.dtype)

                total, carrier_mse, msg_mses, c_hat = reconstruction_losses(
                    carriers, messages, phases_t, model, cfg, phase.through_layer)

                adv_val = dis_val = None
                if adv_here:
                    # One discriminator step, then one generator step against
                    # the freshly updated discriminator.
                    dis_term = _discriminator_term(carriers.unsqueeze(1), c_hat, model)
                    opt_d.zero_grad()
                    dis_term.backward()
                    opt_d.step()
                    dis_val = float(dis_term.detach())
                    gen_term = _generator_adversarial_term(c_hat, model, cfg)
                    total = total + gen_term
                    adv_val = float(gen_term.detach())

                if not torch.isfinite(total):
                    raise TrainingDiverged(
                        f"non-finite loss at iteration {iteration}",
                        iteration=iteration, reports=reports)

                opt.zero_grad()
                total.backward()
                opt.step()

                report = LossReport(
                    iteration=iteration,
                    carrier_loss=float(carrier_mse.detach()),
                    message_losses=[float(v.detach()) for v in msg_mses],
                    adversarial_loss=adv_val,
                    discriminator_loss=dis_val,
                    total=float(total.detach()),
                )
                reports.append(report)
                if writer is not None:
                    writer.writerow(_metrics_row(report))
                if verbose and iteration % max(cfg.log_every, 1) == 0:
                    print(f"iter {iteration}: total={report.total:.6f} "
                          f"carrier={report.carrier_loss:.6f} "
                          f"messages={report.message_losses}")
                iteration += 1
                if (out_dir is not None and cfg.checkpoint_every > 0
                        and iteration % cfg.checkpoint_every == 0):
                    save_checkpoint(out_dir / f"ckpt_{iteration:07d}.svox", iteration)
    finally:
        if metrics_file is not None:
            metrics_file.close()

    for p in model.parameters():
        p.requires_grad_(True)
    if out_dir is not None:
        save_checkpoint(out_dir / "final.svox", iteration)
    return model, reports
