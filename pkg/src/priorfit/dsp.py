"""Signal-processing substrate: STFT/iSTFT, power spectra, mel filterbank.

One framing convention is shared by every other module: analysis is
center-padded (reflect), waveforms are zero-padded on the right to a whole
number of hops, so a D-sample input always yields K = ceil(D/hop) + 1 frames.
Synthesis uses windowed overlap-add with window-squared normalization, which
reconstructs exactly for any window with a positive squared-overlap envelope.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import torch

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class StftConfig:
    """Framing parameters for all time-frequency analysis."""

    fft_size: int = 512
    hop: int = 128
    win_length: int = 512
    window: str = "hann"
    center_pad: bool = True

    def __post_init__(self):
        if self.window != "hann":
            raise ConfigError(f"unsupported window {self.window!r}; only 'hann'")
        if not (0 < self.hop <= self.win_length <= self.fft_size):
            raise ConfigError(
                f"require 0 < hop <= win_length <= fft_size, got "
                f"hop={self.hop} win_length={self.win_length} fft_size={self.fft_size}"
            )
        if not self.center_pad:
            raise ConfigError("only center-padded analysis is supported")
        env = _ola_envelope(self.win_length, self.hop)
        if env.min().item() <= 1e-10:
            raise ConfigError(
                f"window/hop pair violates the overlap-add reconstruction "
                f"condition (hop={self.hop}, win_length={self.win_length})"
            )

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        return -(-num_samples // self.hop) + 1

    def torch_window(self, dtype=torch.float32) -> torch.Tensor:
        return _window(self.win_length, dtype)


@lru_cache(maxsize=None)
def _window(win_length: int, dtype) -> torch.Tensor:
    return torch.hann_window(win_length, periodic=True, dtype=dtype)


@lru_cache(maxsize=None)
def _ola_envelope(win_length: int, hop: int) -> torch.Tensor:
    """Interior overlap-add envelope of the squared window."""
    w2 = _window(win_length, torch.float64) ** 2
    # enough shifted copies that the middle hop-span sees every contribution
    reps = 2 * (win_length // hop) + 3
    total = torch.zeros(reps * hop + win_length, dtype=torch.float64)
    for k in range(reps):
        total[k * hop : k * hop + win_length] += w2
    mid = reps * hop // 2
    return total[mid : mid + hop]


@dataclass
class Waveform:
    """Mono time-domain signal."""

    samples: torch.Tensor
    sample_rate: int

    def __post_init__(self):
        if not isinstance(self.samples, torch.Tensor):
            self.samples = torch.as_tensor(self.samples)
        if self.samples.ndim != 1 or self.samples.numel() < 1:
            raise ShapeError("waveform must be a nonempty 1-D sample vector")
        if not torch.isfinite(self.samples).all():
            raise ShapeError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")

    def __len__(self) -> int:
        return self.samples.numel()

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class ComplexSpectrogram:
    """Complex F x K time-frequency grid plus the config that produced it."""

    bins: torch.Tensor
    config: StftConfig
    num_samples: int = 0
    sample_rate: int = 0

    def __post_init__(self):
        if self.bins.ndim != 2 or self.bins.shape[0] != self.config.num_bins:
            raise ShapeError(
                f"expected {self.config.num_bins} x K complex grid, got {tuple(self.bins.shape)}"
            )
        if self.num_samples <= 0:
            self.num_samples = (self.bins.shape[1] - 1) * self.config.hop

    @property
    def num_frames(self) -> int:
        return self.bins.shape[1]


@dataclass
class PowerSpectrogram:
    """Nonnegative real F x K grid of squared STFT magnitudes."""

    bins: torch.Tensor

    def __post_init__(self):
        if self.bins.ndim != 2:
            raise ShapeError("power spectrogram must be 2-D")
        if not torch.isfinite(self.bins).all() or (self.bins < 0).any():
            raise ShapeError("power spectrogram entries must be finite and >= 0")


def stft_raw(samples: torch.Tensor, cfg: StftConfig) -> torch.Tensor:
    """STFT of a 1-D (or batched ...xD) sample tensor; returns complex (...,F,K).

    The signal is right-padded with zeros to a whole number of hops before
    the center-padded transform, so K = ceil(D/hop) + 1.
    """
    d = samples.shape[-1]
    if d < 1:
        raise ShapeError("empty input")
    pad = (-d) % cfg.hop
    if pad:
        samples = torch.nn.functional.pad(samples, (0, pad))
    if samples.shape[-1] <= cfg.fft_size // 2:
        raise ConfigError(
            f"input of {d} samples is too short for fft_size={cfg.fft_size} "
            f"center padding"
        )
    window = cfg.torch_window(samples.real.dtype)
    batched = samples.ndim > 1
    x = samples.reshape(-1, samples.shape[-1]) if batched else samples
    spec = torch.stft(
        x,
        n_fft=cfg.fft_size,
        hop_length=cfg.hop,
        win_length=cfg.win_length,
        window=window,
        center=True,
        pad_mode="reflect",
        normalized=False,
        onesided=True,
        return_complex=True,
    )
    if batched:
        spec = spec.reshape(*samples.shape[:-1], *spec.shape[-2:])
    return spec


def istft_raw(bins: torch.Tensor, cfg: StftConfig, length: int) -> torch.Tensor:
    """Inverse of `stft_raw` for complex (...,F,K) grids, cropped to `length`."""
    if bins.shape[-2] != cfg.num_bins:
        raise ShapeError(f"expected {cfg.num_bins} frequency bins, got {bins.shape[-2]}")
    window = cfg.torch_window(
        torch.float64 if bins.dtype == torch.complex128 else torch.float32
    )
    padded_len = (bins.shape[-1] - 1) * cfg.hop
    if not 0 < length <= padded_len:
        raise ShapeError(f"length {length} incompatible with {bins.shape[-1]} frames")
    batched = bins.ndim > 2
    x = bins.reshape(-1, *bins.shape[-2:]) if batched else bins
    wav = torch.istft(
        x,
        n_fft=cfg.fft_size,
        hop_length=cfg.hop,
        win_length=cfg.win_length,
        window=window,
        center=True,
        normalized=False,
        onesided=True,
        length=padded_len,
    )
    if batched:
        wav = wav.reshape(*bins.shape[:-2], padded_len)
    return wav[..., :length]


def stft(w: Waveform, cfg: StftConfig) -> ComplexSpectrogram:
    bins = stft_raw(w.samples, cfg)
    return ComplexSpectrogram(bins, cfg, num_samples=len(w), sample_rate=w.sample_rate)


def istft(s: ComplexSpectrogram) -> Waveform:
    samples = istft_raw(s.bins, s.config, s.num_samples)
    return Waveform(samples, s.sample_rate or 1)


def power_spectrogram(w: Waveform, cfg: StftConfig) -> PowerSpectrogram:
    """Elementwise squared magnitude of stft(w, cfg)."""
    return PowerSpectrogram(stft_raw(w.samples, cfg).abs() ** 2)


def hz_to_mel(f):
    return 2595.0 * torch.log10(1.0 + torch.as_tensor(f, dtype=torch.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (torch.as_tensor(m, dtype=torch.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int, cfg: StftConfig, sample_rate: int, dtype=torch.float32
) -> torch.Tensor:
    """Triangular mel filterbank as an n_mels x F matrix.

    Filter centers span [0, sr/2] inclusive on the mel scale, so every FFT bin
    (including DC and Nyquist) falls under at least one filter.
    """
    f = cfg.num_bins
    if not 0 < n_mels < f:
        raise ConfigError(f"need 0 < n_mels < {f}, got {n_mels}")
    bin_freqs = torch.arange(f, dtype=torch.float64) * sample_rate / cfg.fft_size
    bin_mels = hz_to_mel(bin_freqs)
    lo, hi = hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0)
    if n_mels == 1:
        spacing = hi - lo
        centers = torch.tensor([(lo + hi) / 2.0], dtype=torch.float64)
    else:
        spacing = (hi - lo) / (n_mels - 1)
        centers = lo + spacing * torch.arange(n_mels, dtype=torch.float64)
    weights = 1.0 - (bin_mels[None, :] - centers[:, None]).abs() / spacing
    return weights.clamp(min=0.0).to(dtype)
