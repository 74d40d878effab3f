"""16-bit PCM mono WAV reading and writing.

Quantization is dither-free: samples are scaled by 32767, rounded to the
nearest integer with ties away from zero, and clamped to the int16 range.
"""

import wave
from pathlib import Path

import numpy as np
import torch

from .dsp import Waveform
from .errors import FormatError

_SCALE = 32767.0


def write_wav(path, w: Waveform) -> None:
    x = w.samples.detach().to(torch.float64).numpy()
    q = np.sign(x) * np.floor(np.abs(x) * _SCALE + 0.5)
    q = np.clip(q, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(q.tobytes())


def read_wav(path) -> Waveform:
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as f:
            if f.getnchannels() != 1:
                raise FormatError(f"{path}: expected mono, got {f.getnchannels()} channels")
            if f.getsampwidth() != 2:
                raise FormatError(f"{path}: expected 16-bit PCM")
            rate = f.getframerate()
            raw = f.readframes(f.getnframes())
    except wave.Error as e:
        raise FormatError(f"{path}: not a readable WAV file ({e})") from e
    ints = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return Waveform(torch.from_numpy(ints / _SCALE).to(torch.float32), rate)
