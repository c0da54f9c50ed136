"""scikit-learn style facade over the full pipeline.

``fit`` trains on a directory (or manifest) of WAVs, ``transform`` hides
messages in carriers, ``inverse_transform`` recovers them; ``get_params`` /
``set_params`` / ``clone`` work as usual so the model composes with the
wider ecosystem.
"""

from __future__ import annotations

from pathlib import Path

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import BatchSampler, CorpusManifest, make_noise_bank, scan_corpus
from .dsp import StftConfig
from .errors import ConfigError, StegavoxError
from .nets import ArchitectureSpec, init_model
from .stego import evaluate, hide, reveal
from .training import TrainConfig, config_digest, train
from .validation import as_clip_list, as_pair_list


class SpeechSteganographer(BaseEstimator):
    """Hide k spoken messages inside a speech carrier, trainably.

    Parameters mirror the training/model/transform configuration; see the
    CLI config keys for their meaning. ``decoder_mode="auto"`` selects a
    single decoder for k=1 and one decoder per message otherwise.

    After ``fit``: ``model_`` (the trained networks), ``manifest_``,
    ``history_`` (per-step loss reports), ``validation_`` (held-out report,
    or None when the corpus is too small to evaluate).
    """

    def __init__(self, regime="sfs", k=1, decoder_mode="auto", lambda_c=0.8,
                 lambda_m=1.0, lambda_g=0.0, iterations=10000, learning_rate=1e-3,
                 batch_size=8, noise_coeff=0.5, seed=0, frames_per_example=64,
                 kernel_count=64, encoder_blocks=3, carrier_decoder_blocks=4,
                 message_decoder_blocks=6, discriminator_layers=6, fft_size=512,
                 hop=160, window_length=512, window="hann", sample_rate=16000,
                 noise=None, split_rule="auto", eval_examples=64, eval_split="val",
                 flip=False, gl_iterations=50):
        self.regime = regime
        self.k = k
        self.decoder_mode = decoder_mode
        self.lambda_c = lambda_c
        self.lambda_m = lambda_m
        self.lambda_g = lambda_g
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.noise_coeff = noise_coeff
        self.seed = seed
        self.frames_per_example = frames_per_example
        self.kernel_count = kernel_count
        self.encoder_blocks = encoder_blocks
        self.carrier_decoder_blocks = carrier_decoder_blocks
        self.message_decoder_blocks = message_decoder_blocks
        self.discriminator_layers = discriminator_layers
        self.fft_size = fft_size
        self.hop = hop
        self.window_length = window_length
        self.window = window
        self.sample_rate = sample_rate
        self.noise = noise
        self.split_rule = split_rule
        self.eval_examples = eval_examples
        self.eval_split = eval_split
        self.flip = flip
        self.gl_iterations = gl_iterations

    # -- configuration assembly ------------------------------------------------

    def _mode(self) -> str:
        if self.decoder_mode == "auto":
            return "single" if self.k == 1 else "multi"
        return self.decoder_mode

    def _stft_config(self) -> StftConfig:
        return StftConfig(fft_size=self.fft_size, hop=self.hop,
                          window_length=self.window_length, window=self.window,
                          sample_rate=self.sample_rate)

    def _arch(self) -> ArchitectureSpec:
        return ArchitectureSpec(
            kernel_count=self.kernel_count, encoder_blocks=self.encoder_blocks,
            carrier_decoder_blocks=self.carrier_decoder_blocks,
            message_decoder_blocks=self.message_decoder_blocks,
            discriminator_layers=self.discriminator_layers, k=self.k,
            conditional=self._mode() == "conditional",
            with_discriminator=self.lambda_g > 0)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            regime=self.regime, k=self.k, decoder_mode=self._mode(),
            lambda_c=self.lambda_c, lambda_m=self.lambda_m, lambda_g=self.lambda_g,
            iterations=self.iterations, learning_rate=self.learning_rate,
            batch_size=self.batch_size, noise_coeff=self.noise_coeff,
            seed=self.seed, frames_per_example=self.frames_per_example)

    def _fitted_model(self):
        model = getattr(self, "model_", None)
        if model is None:
            raise NotFittedError(
                "this SpeechSteganographer is not fitted yet; call fit() or "
                "from_checkpoint() first")
        return model

    # -- estimator API ----------------------------------------------------------

    def fit(self, X, y=None, out_dir: str | Path | None = None):
        """Train on a corpus: ``X`` is a WAV directory path or a CorpusManifest."""
        if isinstance(X, CorpusManifest):
            manifest = X
        else:
            manifest = scan_corpus(X, split_rule=self.split_rule, seed=self.seed,
                                   sample_rate=self.sample_rate)
        stft_config = self._stft_config()
        train_config = self._train_config()
        sampler = BatchSampler(
            manifest, stft_config, k=self.k,
            frames_per_example=self.frames_per_example,
            batch_size=self.batch_size, split="train",
            noise_bank=make_noise_bank(self.noise, self.sample_rate),
            noise_coeff=self.noise_coeff, seed=self.seed)
        model = init_model(self._arch(), stft_config, seed=self.seed)
        model, reports = train(sampler, train_config, model, out_dir=out_dir)
        self.model_ = model
        self.manifest_ = manifest
        self.history_ = reports
        try:
            self.validation_ = evaluate(
                model, manifest, split=self.eval_split,
                n_examples=self.eval_examples, seed=self.seed,
                frames_per_example=self.frames_per_example,
                lambda_c=self.lambda_c, lambda_m=self.lambda_m, regime=self.regime)
        except StegavoxError:
            self.validation_ = None
        return self

    def transform(self, X):
        """Hide messages: X is one (carrier, messages) pair or a list of pairs.

        Returns the stego AudioClip(s) in the same arity as the input.
        """
        model = self._fitted_model()
        pairs, single = as_pair_list(X, self.k, self.sample_rate)
        out = [hide(c, msgs, model, flip=self.flip).stego for c, msgs in pairs]
        return out[0] if single else out

    def inverse_transform(self, X, which=None):
        """Recover a message from stego clip(s); ``which`` selects among k."""
        model = self._fitted_model()
        clips, single = as_clip_list(X, self.sample_rate)
        out = [reveal(c, model, which=which, flip=self.flip,
                      gl_iterations=self.gl_iterations, seed=self.seed).audio
               for c in clips]
        return out[0] if single else out

    def hide(self, carrier, messages, **kwargs):
        """Full-artifact variant of transform for one carrier."""
        pairs, _ = as_pair_list((carrier, messages), self.k, self.sample_rate)
        c, msgs = pairs[0]
        kwargs.setdefault("flip", self.flip)
        return hide(c, msgs, self._fitted_model(), **kwargs)

    def reveal(self, stego, which=None, **kwargs):
        """Full-result variant of inverse_transform for one clip."""
        clips, _ = as_clip_list(stego, self.sample_rate)
        kwargs.setdefault("flip", self.flip)
        kwargs.setdefault("gl_iterations", self.gl_iterations)
        return reveal(clips[0], self._fitted_model(), which=which, **kwargs)

    def score(self, X=None, y=None) -> float:
        """Negated post-WAV total loss on held-out data (higher is better).

        ``X`` may be a corpus directory or manifest; defaults to the fitted
        corpus's eval split.
        """
        model = self._fitted_model()
        if X is None:
            manifest = self.manifest_
        elif isinstance(X, CorpusManifest):
            manifest = X
        else:
            manifest = scan_corpus(X, split_rule=self.split_rule, seed=self.seed,
                                   sample_rate=self.sample_rate)
        report = evaluate(model, manifest, split=self.eval_split,
                          n_examples=self.eval_examples, seed=self.seed,
                          frames_per_example=self.frames_per_example,
                          lambda_c=self.lambda_c, lambda_m=self.lambda_m,
                          regime=self.regime)
        return -report.total

    # -- persistence --------------------------------------------------------

    def save(self, path: str | Path):
        """Write the fitted model as a stegavox checkpoint."""
        model = self._fitted_model()
        save_checkpoint(path, model, iteration=len(getattr(self, "history_", [])),
                        train_digest=config_digest(self._train_config()),
                        regime=self.regime, seed=self.seed)

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> "SpeechSteganographer":
        """Inference-ready estimator from a checkpoint (training params keep
        their defaults; architecture/transform settings come from the file)."""
        model, header = load_checkpoint(path)
        arch, stft = model.arch, model.stft_config
        mode = arch.decoder_mode
        est = cls(regime=header.get("regime") or "sfs", k=arch.k,
                  decoder_mode=mode, kernel_count=arch.kernel_count,
                  encoder_blocks=arch.encoder_blocks,
                  carrier_decoder_blocks=arch.carrier_decoder_blocks,
                  message_decoder_blocks=arch.message_decoder_blocks,
                  discriminator_layers=arch.discriminator_layers,
                  lambda_g=1e-3 if arch.with_discriminator else 0.0,
                  fft_size=stft.fft_size, hop=stft.hop,
                  window_length=stft.window_length, window=stft.window,
                  sample_rate=stft.sample_rate, seed=header.get("seed", 0))
        est.model_ = model
        return est
