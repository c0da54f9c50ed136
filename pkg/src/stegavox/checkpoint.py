"""Versioned binary checkpoint format.

Layout (all integers little-endian):

    magic            4 bytes  b"SVOX"
    format_version   u32
    header_length    u32
    header           UTF-8 JSON: architecture, STFT geometry, train-config
                     digest, regime, iteration, seed, torch RNG state (hex)
    param_count      u32
    per parameter:   path_length u16, path UTF-8, ndim u8, dims u32 * ndim,
                     float32 data
    checksum         u32 CRC-32 of every preceding byte

Parameters are stored by their stable dotted component paths; loading
verifies the checksum, rebuilds the model from the embedded metadata, and
requires the stored path set to match the architecture exactly, so
``load(save(model))`` reproduces the model bit-for-bit.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .dsp import StftConfig
from .errors import CheckpointError
from .nets import ArchitectureSpec, StegoModel, init_model

MAGIC = b"SVOX"
FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, model: StegoModel, iteration: int = 0,
                    train_digest: str = "", regime: str = "",
                    seed: int | None = None, rng_state: bytes | None = None):
    if rng_state is None:
        rng_state = torch.get_rng_state().numpy().tobytes()
    header = {
        "arch": asdict(model.arch),
        "stft": asdict(model.stft_config),
        "train_digest": train_digest,
        "regime": regime,
        "iteration": iteration,
        "seed": model.seed if seed is None else seed,
        "rng_state": rng_state.hex(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()

    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION),
              struct.pack("<I", len(header_bytes)), header_bytes]
    arrays = model.parameter_arrays()
    chunks.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        name_b = name.encode()
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    body = b"".join(chunks)
    payload = body + struct.pack("<I", zlib.crc32(body))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_header(path: str | Path) -> dict:
    """Parse and return the checkpoint header after full-file verification."""
    _, header = _verified_body(Path(path).read_bytes())
    return header


def _verified_body(data: bytes):
    if len(data) < len(MAGIC) + 12:
        raise CheckpointError("file too short to be a checkpoint")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(
            f"bad magic {data[:len(MAGIC)]!r}; not a stegavox checkpoint")
    body, stored = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != stored:
        raise CheckpointError("checksum mismatch: checkpoint is corrupt")
    r = _Reader(body)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    (header_len,) = r.unpack("<I")
    try:
        header = json.loads(r.take(header_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from None
    return r, header


def load_checkpoint(path: str | Path):
    """Rebuild the model from a checkpoint; returns ``(model, header)``."""
    r, header = _verified_body(Path(path).read_bytes())
    try:
        arch = ArchitectureSpec(**header["arch"])
        stft_config = StftConfig(**header["stft"])
        seed = header["seed"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"header is missing required fields: {exc}") from None

    (n_params,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        if name in arrays:
            raise CheckpointError(f"duplicate parameter path {name!r}")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        arrays[name] = (np.frombuffer(r.take(4 * count), dtype="<f4")
                        .reshape(shape).copy())

    model = init_model(arch, stft_config, seed)
    expected = set(dict(model.named_parameters()))
    if set(arrays) != expected:
        raise CheckpointError(
            f"stored parameters do not enumerate the architecture: "
            f"missing={sorted(expected - set(arrays))}, "
            f"unexpected={sorted(set(arrays) - expected)}"
        )
    model.load_parameter_arrays(arrays)
    return model, header
