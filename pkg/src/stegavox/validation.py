"""Input-normalization helpers for the estimator API."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dsp import AudioClip
from .errors import InvalidInput


def as_audio_clip(x, sample_rate: int) -> AudioClip:
    """Coerce a clip-like input (AudioClip, 1-D array, or WAV path) to AudioClip."""
    if isinstance(x, AudioClip):
        if x.sample_rate != sample_rate:
            raise InvalidInput(
                f"clip sample rate {x.sample_rate} != expected {sample_rate}")
        return x
    if isinstance(x, (str, Path)):
        from .corpus import read_wav
        return read_wav(x, expect_rate=sample_rate)
    return AudioClip(np.asarray(x), sample_rate)


def as_pair_list(X, k: int, sample_rate: int):
    """Normalize transform input to a list of (carrier, [messages]) pairs.

    Accepts one pair or a list of pairs; for k = 1 a bare message may stand
    in for the one-element message list. Returns (pairs, was_single).
    """
    def one_pair(item):
        if not isinstance(item, (tuple, list)) or len(item) != 2:
            raise InvalidInput(
                "each example must be a (carrier, messages) pair")
        carrier, messages = item
        if k == 1 and not isinstance(messages, (tuple, list)):
            messages = [messages]
        if len(messages) != k:
            raise InvalidInput(f"expected {k} messages per carrier, got {len(messages)}")
        return (as_audio_clip(carrier, sample_rate),
                [as_audio_clip(m, sample_rate) for m in messages])

    if isinstance(X, (tuple, list)) and len(X) == 2 and not (
            isinstance(X[0], (tuple, list)) and len(X[0]) == 2):
        return [one_pair(X)], True
    return [one_pair(item) for item in X], False


def as_clip_list(X, sample_rate: int):
    """Normalize inverse_transform input to a list of clips."""
    if isinstance(X, (tuple, list)) and not isinstance(X[0], (int, float)):
        return [as_audio_clip(x, sample_rate) for x in X], False
    return [as_audio_clip(X, sample_rate)], True
