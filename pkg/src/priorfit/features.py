"""Conditional feature handling.

Features reach the vocoder three ways: loaded from WTFF files written by an
external extractor, produced by the built-in log-mel pseudo-SSL adapter, or
passed in programmatically. Downstream modules always see them after 2x
temporal upsampling; the encoders additionally project the channel dimension
onto the frequency axis.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import torch

from .dsp import StftConfig, Waveform, mel_filterbank, power_spectrogram
from .errors import ConfigError, FormatError, ShapeError

WTFF_MAGIC = b"WTFF"
WTFF_VERSION = 1
# header: magic, version u32, K_c u32, C u32, frame_rate f64 (little-endian)
_HEADER = struct.Struct("<4sIIId")

EPS_LOG = 1e-5


@dataclass
class ConditionalFeature:
    """Frame-level conditioning sequence, rows are frames (K_c x C)."""

    frames: torch.Tensor
    frame_rate: float
    source_tag: str = ""

    def __post_init__(self):
        if self.frames.ndim != 2 or min(self.frames.shape) < 1:
            raise ShapeError("feature matrix must be K_c x C with K_c, C >= 1")
        if not torch.isfinite(self.frames).all():
            raise ShapeError("feature matrix contains non-finite entries")
        if self.frame_rate <= 0:
            raise ConfigError("frame_rate must be positive")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def write_feature_file(path, feat: ConditionalFeature) -> None:
    k, c = feat.frames.shape
    payload = feat.frames.to(torch.float32).contiguous().numpy().tobytes()
    with open(path, "wb") as f:
        f.write(_HEADER.pack(WTFF_MAGIC, WTFF_VERSION, k, c, float(feat.frame_rate)))
        f.write(payload)


def load_feature_file(path) -> ConditionalFeature:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    magic, version, k, c, frame_rate = _HEADER.unpack_from(raw)
    if magic != WTFF_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
    if version != WTFF_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    if k < 1 or c < 1:
        raise FormatError(f"{path}: invalid dimensions {k}x{c}", offset=8)
    expected = _HEADER.size + 4 * k * c
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload is {len(raw) - _HEADER.size} bytes, "
            f"declared {k}x{c} needs {4 * k * c}",
            offset=min(len(raw), expected),
        )
    flat = torch.frombuffer(bytearray(raw[_HEADER.size :]), dtype=torch.float32)
    return ConditionalFeature(
        flat.reshape(k, c).clone(), frame_rate, source_tag=f"file:{path.name}"
    )


def pseudo_ssl(
    w: Waveform, n_mels: int, cfg: StftConfig
) -> ConditionalFeature:
    """Log-compressed mel spectrogram standing in for an external extractor."""
    fb = mel_filterbank(n_mels, cfg, w.sample_rate, dtype=w.samples.dtype)
    power = power_spectrogram(w, cfg).bins
    mel = fb @ power
    frames = torch.log(mel + EPS_LOG).T.contiguous()
    return ConditionalFeature(
        frames, frame_rate=w.sample_rate / cfg.hop, source_tag="pseudo-mel"
    )


def upsample_2x_linear(c: ConditionalFeature) -> ConditionalFeature:
    """Double the frame rate: even frames copy inputs, odd frames interpolate.

    The final odd frame replicates the last input (no right neighbor).
    """
    x = c.frames
    k = x.shape[0]
    out = x.new_empty((2 * k, x.shape[1]))
    out[0::2] = x
    out[1:-1:2] = 0.5 * (x[:-1] + x[1:])
    out[-1] = x[-1]
    return ConditionalFeature(out, 2 * c.frame_rate, source_tag=c.source_tag)


class FeatureUpsampler(torch.nn.Module):
    """Learned 2x temporal upsampling via a 2-D transposed convolution.

    Operates on the (frames, channels) grid as a single-plane image; kernel 4
    along time with stride 2, kernel 3 across channels with stride 1.
    """

    def __init__(self, init: str = "linear"):
        super().__init__()
        self.conv = torch.nn.ConvTranspose2d(
            1, 1, kernel_size=(4, 3), stride=(2, 1), padding=(1, 1)
        )
        if init == "linear":
            with torch.no_grad():
                self.conv.weight.zero_()
                self.conv.weight[0, 0, 1, 1] = 1.0
                self.conv.weight[0, 0, 0, 1] = 0.5
                self.conv.weight[0, 0, 2, 1] = 0.5
                self.conv.bias.zero_()
        elif init != "random":
            raise ConfigError(f"unknown upsampler init {init!r}")

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """(..., K_c, C) -> (..., 2*K_c, C)"""
        squeeze = frames.ndim == 2
        if squeeze:
            frames = frames[None]
        out = self.conv(frames[:, None])[:, 0]
        return out[0] if squeeze else out


def upsample_2x(
    c: ConditionalFeature, upsampler: FeatureUpsampler | None = None
) -> ConditionalFeature:
    """2x temporal upsampling; linear interpolation unless a learned module is given."""
    if upsampler is None:
        return upsample_2x_linear(c)
    out = upsampler(c.frames)
    return ConditionalFeature(out, 2 * c.frame_rate, source_tag=c.source_tag)


def align_to_freq(c: ConditionalFeature, params: torch.Tensor) -> torch.Tensor:
    """Project each frame's channels onto F frequency rows; returns F x K_c."""
    if params.ndim != 2 or params.shape[1] != c.dim:
        raise ConfigError(
            f"alignment map must be F x {c.dim}, got {tuple(params.shape)}"
        )
    return params @ c.frames.T
