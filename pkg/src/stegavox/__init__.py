"""stegavox: trainable speech-in-speech steganography.

Jointly optimized encoder/decoder networks hide one or more secret speech
messages inside a carrier recording so that the stego carrier stays
perceptually close to the original and each message is recoverable, with a
differentiable STFT/ISTFT constraint keeping the hidden content decodable
after time-domain transmission.
"""

from .checkpoint import load_checkpoint, read_header, save_checkpoint
from .corpus import (BatchSampler, CorpusManifest, DirectoryNoiseBank,
                     SyntheticBabble, make_noise_bank, read_wav, scan_corpus,
                     write_wav)
from .dsp import (AudioClip, MagSpec, PhaseSpec, StftConfig, griffin_lim,
                  istft, stft, stft_istft_layer)
from .errors import (CheckpointError, ConfigError, EmptyCorpusError, FormatError,
                     InvalidInput, StegavoxError, TrainingDiverged)
from .estimator import SpeechSteganographer
from .nets import (ArchitectureSpec, ConditionCode, GatedConv2d, StegoModel,
                   init_model)
from .stego import (EvalReport, RevealResult, StegoArtifacts, audit_abx_package,
                    evaluate, export_abx_stimuli, export_artifacts,
                    export_residual, flip_spectrogram, hide, reveal)
from .training import (LossReport, TrainConfig, adversarial_losses, inject_noise,
                       loss_conditional, loss_multi, loss_single, train)

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "MagSpec", "PhaseSpec", "StftConfig",
    "stft", "istft", "stft_istft_layer", "griffin_lim",
    "ArchitectureSpec", "ConditionCode", "GatedConv2d", "StegoModel", "init_model",
    "TrainConfig", "LossReport", "loss_single", "loss_multi", "loss_conditional",
    "adversarial_losses", "inject_noise", "train",
    "CorpusManifest", "BatchSampler", "scan_corpus", "read_wav", "write_wav",
    "DirectoryNoiseBank", "SyntheticBabble", "make_noise_bank",
    "hide", "reveal", "evaluate", "flip_spectrogram", "export_residual",
    "export_artifacts", "export_abx_stimuli", "audit_abx_package",
    "EvalReport", "RevealResult", "StegoArtifacts",
    "save_checkpoint", "load_checkpoint", "read_header",
    "SpeechSteganographer",
    "StegavoxError", "InvalidInput", "FormatError", "ConfigError",
    "EmptyCorpusError", "CheckpointError", "TrainingDiverged",
]
