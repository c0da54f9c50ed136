"""Learnable components: carrier encoder, carrier decoder, message decoder(s),
and an optional discriminator, all built from gated 3x3 convolutions with
deterministic seeded initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .dsp import StftConfig
from .errors import ConfigError, InvalidInput


@dataclass(frozen=True)
class ArchitectureSpec:
    """Block counts, kernel width, and message-decoding topology."""

    kernel_count: int = 64
    encoder_blocks: int = 3
    carrier_decoder_blocks: int = 4
    message_decoder_blocks: int = 6
    discriminator_layers: int = 6
    k: int = 1
    conditional: bool = False
    with_discriminator: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"message count k must be >= 1, got {self.k}")
        for name in ("kernel_count", "encoder_blocks", "carrier_decoder_blocks",
                     "message_decoder_blocks", "discriminator_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def decoder_mode(self) -> str:
        if self.conditional:
            return "conditional"
        return "single" if self.k == 1 else "multi"

    @property
    def message_decoder_count(self) -> int:
        return 1 if self.conditional else self.k

    @property
    def latent_channels(self) -> int:
        """Channels of the encoder output h: kernel_count + carrier + k messages."""
        return self.kernel_count + 1 + self.k


@dataclass(frozen=True)
class ConditionCode:
    """Selects which hidden message a conditional decoder extracts."""

    index: int
    k: int

    def __post_init__(self):
        if not 0 <= self.index < self.k:
            raise ConfigError(f"code index {self.index} out of range for k={self.k}")

    def one_hot(self) -> np.ndarray:
        v = np.zeros(self.k)
        v[self.index] = 1.0
        return v


class GatedConv2d(nn.Module):
    """Gated linear unit over 2-D features: conv_a(x) * sigmoid(conv_b(x)).

    Two parallel same-padded stride-1 convolutions; spatial shape preserved.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3):
        super().__init__()
        pad = kernel_size // 2
        self.conv_a = nn.Conv2d(in_channels, out_channels, kernel_size, padding=pad)
        self.conv_b = nn.Conv2d(in_channels, out_channels, kernel_size, padding=pad)

    def forward(self, x):
        return self.conv_a(x) * torch.sigmoid(self.conv_b(x))


def _gated_stack(in_channels: int, width: int, blocks: int) -> nn.Sequential:
    layers = [GatedConv2d(in_channels, width)]
    layers += [GatedConv2d(width, width) for _ in range(blocks - 1)]
    return nn.Sequential(*layers)


class CarrierEncoder(nn.Module):
    """Maps the carrier spectrogram to a redundancy feature map."""

    def __init__(self, arch: ArchitectureSpec):
        super().__init__()
        self.blocks = _gated_stack(1, arch.kernel_count, arch.encoder_blocks)

    def forward(self, carrier):
        return self.blocks(carrier)


class CarrierDecoder(nn.Module):
    """Maps the joint latent [encoded carrier; carrier; messages] to the stego spectrogram."""

    def __init__(self, arch: ArchitectureSpec):
        super().__init__()
        self.blocks = _gated_stack(arch.latent_channels, arch.kernel_count,
                                   arch.carrier_decoder_blocks)
        # Linear output head; magnitudes are clamped at zero only at synthesis time.
        self.head = nn.Conv2d(arch.kernel_count, 1, kernel_size=1)

    def forward(self, h):
        return self.head(self.blocks(h))


class MessageDecoder(nn.Module):
    """Recovers one message spectrogram from the stego spectrogram.

    In conditional mode the input carries k extra constant planes holding the
    one-hot message code.
    """

    def __init__(self, arch: ArchitectureSpec):
        super().__init__()
        in_channels = 1 + (arch.k if arch.conditional else 0)
        self.blocks = _gated_stack(in_channels, arch.kernel_count,
                                   arch.message_decoder_blocks)
        self.head = nn.Conv2d(arch.kernel_count, 1, kernel_size=1)

    def forward(self, x):
        return self.head(self.blocks(x))


class Discriminator(nn.Module):
    """Scores how plausible a spectrogram is as a clean carrier, in [0, 1].

    Fully convolutional, so the score is invariant to the frame count: the
    1x1 head is globally average-pooled before the sigmoid.
    """

    def __init__(self, arch: ArchitectureSpec):
        super().__init__()
        layers = []
        in_ch = 1
        for _ in range(arch.discriminator_layers):
            layers += [nn.Conv2d(in_ch, arch.kernel_count, 3, padding=1),
                       nn.LeakyReLU(0.2)]
            in_ch = arch.kernel_count
        self.features = nn.Sequential(*layers)
        self.head = nn.Conv2d(arch.kernel_count, 1, kernel_size=1)

    def forward(self, x):
        score = self.head(self.features(x)).mean(dim=(1, 2, 3))
        return torch.sigmoid(score)


class StegoModel(nn.Module):
    """All learnable components plus the architecture/transform metadata.

    Parameters are enumerated by stable dotted component paths
    (``named_parameters`` order), which the checkpoint format relies on.
    """

    def __init__(self, arch: ArchitectureSpec, stft_config: StftConfig | None = None,
                 seed: int = 0):
        super().__init__()
        self.arch = arch
        self.stft_config = stft_config or StftConfig()
        self.seed = seed
        self.carrier_encoder = CarrierEncoder(arch)
        self.carrier_decoder = CarrierDecoder(arch)
        self.message_decoders = nn.ModuleList(
            MessageDecoder(arch) for _ in range(arch.message_decoder_count)
        )
        self.discriminator = Discriminator(arch) if arch.with_discriminator else None
        self._init_parameters(seed)

    def _init_parameters(self, seed: int):
        gen = torch.Generator().manual_seed(seed)
        for name, p in self.named_parameters():
            if name.endswith("bias"):
                with torch.no_grad():
                    p.zero_()
            else:
                fan_in = p[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                with torch.no_grad():
                    p.uniform_(-bound, bound, generator=gen)

    # -- forward pieces -----------------------------------------------------

    def _check_spec_shape(self, x, name):
        if x.dim() != 4 or x.shape[2] != self.stft_config.frequency_bins:
            raise InvalidInput(
                f"{name} must be (B, C, F={self.stft_config.frequency_bins}, T), "
                f"got {tuple(x.shape)}"
            )

    def encode(self, carrier: torch.Tensor, messages: torch.Tensor) -> torch.Tensor:
        """Joint latent: concat of encoded carrier, carrier, and all k messages.

        ``carrier``: (B, 1, F, T); ``messages``: (B, k, F, T).
        """
        self._check_spec_shape(carrier, "carrier")
        self._check_spec_shape(messages, "messages")
        if messages.shape[1] != self.arch.k:
            raise ConfigError(
                f"model expects k={self.arch.k} messages, got {messages.shape[1]}"
            )
        if carrier.shape[0] != messages.shape[0] or carrier.shape[2:] != messages.shape[2:]:
            raise InvalidInput(
                f"carrier/messages shapes disagree: {tuple(carrier.shape)} vs "
                f"{tuple(messages.shape)}"
            )
        return torch.cat([self.carrier_encoder(carrier), carrier, messages], dim=1)

    def carrier_decode(self, h: torch.Tensor) -> torch.Tensor:
        if h.dim() != 4 or h.shape[1] != self.arch.latent_channels:
            raise InvalidInput(
                f"latent must have {self.arch.latent_channels} channels, got "
                f"{tuple(h.shape)}"
            )
        return self.carrier_decoder(h)

    def conceal(self, carrier: torch.Tensor, messages: torch.Tensor) -> torch.Tensor:
        """Stego spectrogram estimate: carrier_decode(encode(c, m))."""
        return self.carrier_decode(self.encode(carrier, messages))

    def message_decode(self, c_hat: torch.Tensor,
                       which: int | ConditionCode | None = None) -> torch.Tensor:
        """Decode one message spectrogram from a stego spectrogram (B, 1, F, T)."""
        self._check_spec_shape(c_hat, "stego spectrogram")
        mode = self.arch.decoder_mode
        if mode == "single":
            if which is not None:
                raise ConfigError("single-decoder model takes no message selector")
            return self.message_decoders[0](c_hat)
        if mode == "multi":
            if not isinstance(which, int):
                raise ConfigError("multi-decoder model needs an integer message index")
            if not 0 <= which < self.arch.k:
                raise ConfigError(f"message index {which} out of range for k={self.arch.k}")
            return self.message_decoders[which](c_hat)
        # conditional
        if isinstance(which, int):
            which = ConditionCode(which, self.arch.k)
        if not isinstance(which, ConditionCode):
            raise ConfigError("conditional model needs a ConditionCode or integer index")
        if which.k != self.arch.k:
            raise ConfigError(f"code is for k={which.k}, model has k={self.arch.k}")
        return self.message_decoders[0](self.with_code_planes(c_hat, which))

    def with_code_planes(self, c_hat: torch.Tensor, code: ConditionCode) -> torch.Tensor:
        """Append k constant planes holding the spatially replicated one-hot code."""
        b, _, f, t = c_hat.shape
        planes = torch.zeros(b, self.arch.k, f, t, dtype=c_hat.dtype, device=c_hat.device)
        planes[:, code.index] = 1.0
        return torch.cat([c_hat, planes], dim=1)

    def discriminate(self, spec: torch.Tensor) -> torch.Tensor:
        if self.discriminator is None:
            raise ConfigError("model was built without a discriminator")
        self._check_spec_shape(spec, "spectrogram")
        return self.discriminator(spec)

    # -- parameter plumbing ---------------------------------------------------

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        """Snapshot of every parameter as a float numpy array, keyed by path."""
        return {name: p.detach().cpu().numpy().copy()
                for name, p in self.named_parameters()}

    def load_parameter_arrays(self, arrays: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        if set(arrays) != set(own):
            missing = sorted(set(own) - set(arrays))
            extra = sorted(set(arrays) - set(own))
            raise ConfigError(
                f"parameter paths do not match the architecture: missing={missing}, "
                f"unexpected={extra}"
            )
        with torch.no_grad():
            for name, p in own.items():
                a = arrays[name]
                if tuple(a.shape) != tuple(p.shape):
                    raise ConfigError(
                        f"parameter {name} has shape {tuple(a.shape)}, expected "
                        f"{tuple(p.shape)}"
                    )
                p.copy_(torch.as_tensor(a, dtype=p.dtype))

    def message_decoder_parameters(self):
        return [p for dec in self.message_decoders for p in dec.parameters()]

    def generator_parameters(self):
        """Everything the reconstruction objective trains (excludes the discriminator)."""
        params = list(self.carrier_encoder.parameters())
        params += list(self.carrier_decoder.parameters())
        params += self.message_decoder_parameters()
        return params


def init_model(arch: ArchitectureSpec, stft_config: StftConfig | None = None,
               seed: int = 0) -> StegoModel:
    """Build a model with deterministic, seed-reproducible initialization."""
    return StegoModel(arch, stft_config, seed)
