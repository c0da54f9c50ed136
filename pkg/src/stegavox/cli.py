"""Command-line surface: train / hide / reveal / eval / stimuli.

Run configuration is a UTF-8 text file of ``key = value`` lines ('#'
comments allowed); unknown keys are rejected and every command echoes its
effective configuration. Exit codes: 0 success, 2 usage or configuration
error, 3 numeric failure (training divergence, with a diagnostic dump).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import BatchSampler, make_noise_bank, read_wav, scan_corpus, write_wav
from .dsp import StftConfig
from .errors import (CheckpointError, ConfigError, EmptyCorpusError, FormatError,
                     InvalidInput, StegavoxError, TrainingDiverged)
from .nets import ArchitectureSpec, init_model
from .stego import evaluate, export_abx_stimuli, export_artifacts, hide, reveal
from .training import TrainConfig, config_digest, train

# name -> (parser, default). The single source of truth for run-config keys.
CONFIG_KEYS: dict[str, tuple] = {
    "regime": (str, "sfs"),
    "k": (int, 1),
    "decoder_mode": (str, "auto"),  # auto: single for k=1, multi otherwise
    "lambda_c": (float, 0.8),
    "lambda_m": (float, 1.0),
    "lambda_g": (float, 0.0),
    "iterations": (int, 10000),
    "learning_rate": (float, 1e-3),
    "batch_size": (int, 8),
    "noise_coeff": (float, 0.5),
    "seed": (int, 0),
    "frames_per_example": (int, 64),
    "kernel_count": (int, 64),
    "encoder_blocks": (int, 3),
    "carrier_decoder_blocks": (int, 4),
    "message_decoder_blocks": (int, 6),
    "discriminator_layers": (int, 6),
    "fft_size": (int, 512),
    "hop": (int, 160),
    "window_length": (int, 512),
    "window": (str, "hann"),
    "sample_rate": (int, 16000),
    "noise": (str, "none"),  # none | babble | <directory of WAVs>
    "split_rule": (str, "auto"),
    "log_every": (int, 50),
    "checkpoint_every": (int, 0),
    "eval_examples": (int, 64),
    "eval_split": (str, "val"),
}


def parse_run_config(text: str) -> dict:
    """Parse ``key = value`` lines into a fully defaulted config dict."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        caster, _ = CONFIG_KEYS[key]
        try:
            values[key] = caster(value)
        except ValueError:
            raise ConfigError(
                f"config key {key!r}: cannot parse {value!r} as {caster.__name__}"
            ) from None
    effective = {k: default for k, (_, default) in CONFIG_KEYS.items()}
    effective.update(values)
    if effective["decoder_mode"] == "auto":
        effective["decoder_mode"] = "single" if effective["k"] == 1 else "multi"
    return effective


def _echo_config(cfg: dict, out=sys.stdout):
    print("effective configuration:", file=out)
    for key in sorted(cfg):
        print(f"  {key} = {cfg[key]}", file=out)


def _build_objects(cfg: dict):
    stft_config = StftConfig(
        fft_size=cfg["fft_size"], hop=cfg["hop"],
        window_length=cfg["window_length"], window=cfg["window"],
        sample_rate=cfg["sample_rate"],
    )
    arch = ArchitectureSpec(
        kernel_count=cfg["kernel_count"],
        encoder_blocks=cfg["encoder_blocks"],
        carrier_decoder_blocks=cfg["carrier_decoder_blocks"],
        message_decoder_blocks=cfg["message_decoder_blocks"],
        discriminator_layers=cfg["discriminator_layers"],
        k=cfg["k"],
        conditional=cfg["decoder_mode"] == "conditional",
        with_discriminator=cfg["lambda_g"] > 0,
    )
    train_config = TrainConfig(
        regime=cfg["regime"], k=cfg["k"], decoder_mode=cfg["decoder_mode"],
        lambda_c=cfg["lambda_c"], lambda_m=cfg["lambda_m"], lambda_g=cfg["lambda_g"],
        iterations=cfg["iterations"], learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"], noise_coeff=cfg["noise_coeff"],
        seed=cfg["seed"], frames_per_example=cfg["frames_per_example"],
        log_every=cfg["log_every"], checkpoint_every=cfg["checkpoint_every"],
    )
    return stft_config, arch, train_config


def cmd_train(args) -> int:
    cfg = parse_run_config(Path(args.config).read_text())
    _echo_config(cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.txt").write_text(
        "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg)))

    stft_config, arch, train_config = _build_objects(cfg)
    manifest = scan_corpus(args.data_dir, split_rule=cfg["split_rule"],
                           seed=cfg["seed"], sample_rate=cfg["sample_rate"])
    for line in manifest.diagnostics:
        print(f"skipped: {line}", file=sys.stderr)
    counts = {s: len(manifest.for_split(s)) for s in ("train", "val", "test")}
    print(f"corpus: {counts['train']} train / {counts['val']} val / "
          f"{counts['test']} test clips")
    manifest.save_csv(out_dir / "manifest.csv")

    noise_bank = make_noise_bank(cfg["noise"], cfg["sample_rate"])
    sampler = BatchSampler(
        manifest, stft_config, k=cfg["k"],
        frames_per_example=cfg["frames_per_example"],
        batch_size=cfg["batch_size"], split="train",
        noise_bank=noise_bank, noise_coeff=cfg["noise_coeff"], seed=cfg["seed"],
    )
    model = init_model(arch, stft_config, seed=cfg["seed"])

    try:
        model, reports = train(sampler, train_config, model, out_dir=out_dir,
                               verbose=True)
    except TrainingDiverged as exc:
        dump = {
            "error": str(exc),
            "iteration": exc.iteration,
            "recent_reports": [asdict(r) for r in exc.reports[-50:]],
            "parameter_stats": {
                name: {"norm": float(np.linalg.norm(a)),
                       "finite": bool(np.all(np.isfinite(a)))}
                for name, a in model.parameter_arrays().items()
            },
        }
        (out_dir / "divergence.json").write_text(json.dumps(dump, indent=2, default=str))
        print(f"training diverged: {exc} (diagnostics in divergence.json)",
              file=sys.stderr)
        return 3

    print(f"trained {len(reports)} iterations; final total loss "
          f"{reports[-1].total:.6f}; checkpoint at {out_dir / 'final.svox'}")

    try:
        report = evaluate(model, manifest, split=cfg["eval_split"],
                          n_examples=cfg["eval_examples"], seed=cfg["seed"],
                          frames_per_example=cfg["frames_per_example"],
                          lambda_c=cfg["lambda_c"], lambda_m=cfg["lambda_m"],
                          regime=cfg["regime"])
    except (ConfigError, StegavoxError) as exc:
        print(f"skipping final validation: {exc}", file=sys.stderr)
        return 0
    (out_dir / "validation.json").write_text(
        json.dumps(asdict(report), indent=2, default=str))
    report.write_csv(out_dir / "validation.csv")
    print(f"validation ({report.split}, n={report.n_examples}): "
          f"carrier_mse={report.carrier_mse:.6e} "
          f"message_mse={[f'{v:.6e}' for v in report.message_mse]}")
    return 0


def _load_model(path):
    model, header = load_checkpoint(path)
    print(f"checkpoint: regime={header.get('regime', '?')} "
          f"k={model.arch.k} decoder_mode={model.arch.decoder_mode} "
          f"iteration={header.get('iteration', '?')}")
    return model, header


def cmd_hide(args) -> int:
    model, _ = _load_model(args.checkpoint)
    carrier = read_wav(args.carrier, expect_rate=model.stft_config.sample_rate)
    messages = [read_wav(p, expect_rate=model.stft_config.sample_rate)
                for p in args.messages]
    artifacts = hide(carrier, messages, model, flip=args.flip)
    write_wav(args.out, artifacts.stego, peak_guard=False)  # already protected
    print(f"wrote {args.out} ({len(artifacts.stego)} samples, "
          f"scale={artifacts.scale:.6f}, flip={args.flip})")
    if args.artifacts:
        paths = export_artifacts(artifacts, args.artifacts, model,
                                 gl_iterations=args.gl_iterations, seed=args.seed)
        print(f"artifact bundle: {len(paths)} files under {args.artifacts}")
    return 0


def _reveal_selector(model, args):
    mode = model.arch.decoder_mode
    if args.which is not None and args.code is not None:
        raise ConfigError("pass either --which or --code, not both")
    if mode == "single":
        if args.which is not None or args.code is not None:
            raise ConfigError("single-decoder checkpoint takes no selector")
        return None
    if mode == "multi":
        if args.code is not None:
            raise ConfigError("--code is for conditional checkpoints; use --which")
        if args.which is None:
            raise ConfigError(f"multi-decoder checkpoint (k={model.arch.k}) needs --which")
        return args.which
    if args.which is not None:
        raise ConfigError("--which is for multi-decoder checkpoints; use --code")
    if args.code is None:
        raise ConfigError(f"conditional checkpoint (k={model.arch.k}) needs --code")
    return args.code


def cmd_reveal(args) -> int:
    model, _ = _load_model(args.checkpoint)
    selector = _reveal_selector(model, args)
    stego = read_wav(args.stego, expect_rate=model.stft_config.sample_rate)
    result = reveal(stego, model, which=selector, flip=args.flip,
                    gl_iterations=args.gl_iterations, seed=args.seed)
    write_wav(args.out, result.audio)
    flag = " (LOW CONFIDENCE: carrier may hold no message)" if result.low_confidence else ""
    print(f"wrote {args.out} ({len(result.audio)} samples, "
          f"energy_ratio={result.energy_ratio:.3e}){flag}")
    return 0


def cmd_eval(args) -> int:
    model, header = _load_model(args.checkpoint)
    manifest = scan_corpus(args.data_dir, split_rule=args.split_rule,
                           seed=args.seed, sample_rate=model.stft_config.sample_rate)
    report = evaluate(model, manifest, split=args.split, n_examples=args.n,
                      seed=args.seed, frames_per_example=args.frames,
                      lambda_c=args.lambda_c, lambda_m=args.lambda_m,
                      regime=header.get("regime", ""))
    report.write_csv(args.out)
    print(f"wrote {args.out}")
    print(f"post-WAV carrier_mse={report.carrier_mse:.6e} "
          f"message_mse={[f'{v:.6e}' for v in report.message_mse]} "
          f"total={report.total:.6e}")
    return 0


def cmd_stimuli(args) -> int:
    model, _ = _load_model(args.checkpoint)
    manifest = scan_corpus(args.data_dir, split_rule=args.split_rule,
                           seed=args.seed, sample_rate=model.stft_config.sample_rate)
    key_path = export_abx_stimuli(model, manifest, args.out_dir,
                                  n_triples=args.n, split=args.split,
                                  seed=args.seed, frames_per_example=args.frames)
    n_wavs = len(list(Path(args.out_dir).glob("triple_*.wav")))
    print(f"wrote {n_wavs} stimulus WAVs and key {key_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stegavox",
        description="Hide spoken messages inside a speech carrier and get them back.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a directory of WAVs")
    p.add_argument("config", help="run-config file of 'key = value' lines")
    p.add_argument("data_dir", help="corpus root (16 kHz mono PCM-16 WAVs)")
    p.add_argument("out_dir", help="output directory (checkpoints, metrics)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("hide", help="embed message WAVs into a carrier WAV")
    p.add_argument("checkpoint")
    p.add_argument("carrier")
    p.add_argument("messages", nargs="+", help="one WAV per hidden message")
    p.add_argument("--out", required=True, help="stego WAV path")
    p.add_argument("--flip", action="store_true",
                   help="time/frequency-flip messages before embedding")
    p.add_argument("--artifacts", help="directory for the analysis bundle")
    p.add_argument("--gl-iterations", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_hide)

    p = sub.add_parser("reveal", help="decode a hidden message from a stego WAV")
    p.add_argument("checkpoint")
    p.add_argument("stego")
    p.add_argument("--out", required=True, help="decoded message WAV path")
    p.add_argument("--which", type=int, help="decoder index (multi-decoder models)")
    p.add_argument("--code", type=int, help="condition code (conditional models)")
    p.add_argument("--flip", action="store_true",
                   help="undo hide-time flip preprocessing")
    p.add_argument("--gl-iterations", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_reveal)

    p = sub.add_parser("eval", help="held-out reconstruction-error report")
    p.add_argument("checkpoint")
    p.add_argument("data_dir")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.add_argument("--n", type=int, default=64, help="number of held-out pairings")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=64, help="frames per example")
    p.add_argument("--lambda-c", type=float, default=0.8)
    p.add_argument("--lambda-m", type=float, default=1.0)
    p.add_argument("--split-rule", default="auto", choices=["auto", "hash", "dirs"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stimuli", help="generate an ABX listening-test package")
    p.add_argument("checkpoint")
    p.add_argument("data_dir")
    p.add_argument("out_dir")
    p.add_argument("--n", type=int, default=50, help="number of A/B/X triples")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=None,
                   help="crop carriers to this many frames")
    p.add_argument("--split-rule", default="auto", choices=["auto", "hash", "dirs"])
    p.set_defaults(func=cmd_stimuli)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, EmptyCorpusError, FormatError, InvalidInput,
            CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
