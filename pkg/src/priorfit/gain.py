"""Gain-adjustment operators applied between fixed-point iteration steps.

Two flavors: peak normalization of the intermediate waveform to a fixed
amplitude, and reference-aware rescaling that matches the waveform's total
time-frequency energy to the summed variance map of the trainable prior or
posterior.
"""

from dataclasses import dataclass, field

import torch

from .dsp import StftConfig, stft_raw


@dataclass(frozen=True)
class GainConfig:
    beta_scale: float = 0.95
    s: float = 1e-8
    stft_config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.beta_scale <= 0:
            raise ValueError("beta_scale must be positive")
        if self.s < 0:
            raise ValueError("s must be nonnegative")


def energy(grid: torch.Tensor) -> torch.Tensor:
    """Total time-frequency energy: elementwise sum over the full grid."""
    return grid.sum()


def self_gain(z: torch.Tensor, cfg: GainConfig) -> tuple[torch.Tensor, float]:
    """Peak-normalize: beta_scale * z / max(abs(z)).

    Dividing by the peak first makes the output's max-abs exactly beta_scale.
    An all-zero input is returned unchanged. Returns (waveform, scalar gain).
    """
    peak = z.abs().max()
    if peak == 0:
        return z, 1.0
    scaled = (z / peak) * cfg.beta_scale
    return scaled, float(cfg.beta_scale / peak)


def reference_gain(
    z: torch.Tensor, sigma: torch.Tensor, cfg: GainConfig
) -> tuple[torch.Tensor, float]:
    """Rescale z so its TF energy approaches the variance map's total.

    g = sqrt(E(sigma) / (E(|STFT(z)|^2) + s)); returns (g * z, g).
    """
    z_power = stft_raw(z, cfg.stft_config).abs() ** 2
    g = torch.sqrt(energy(sigma) / (energy(z_power) + cfg.s))
    return g * z, float(g)
