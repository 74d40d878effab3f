"""Trainable variance encoders and the time-frequency noise sampler.

The prior encoder maps aligned conditional features to a positive F x K
variance map; the posterior encoder additionally sees the target's power
spectrogram through a second U-Net whose per-block outputs are fused
additively into the feature branch. Initial noise is drawn by shaping the
STFT of white Gaussian noise with a variance map and inverting.
"""

from dataclasses import dataclass

import torch
from torch import nn

from .dsp import StftConfig, istft_raw, stft_raw
from .errors import ShapeError
from .seeding import generator

SIGMA_FLOOR = 1e-4
_POWER_LOG_EPS = 1e-5


@dataclass
class VarianceMap:
    """Positive F x K variance grid tied to an STFT framing."""

    sigma: torch.Tensor
    stft_config: StftConfig

    def __post_init__(self):
        if self.sigma.ndim != 2 or self.sigma.shape[0] != self.stft_config.num_bins:
            raise ShapeError(
                f"variance map must be {self.stft_config.num_bins} x K, "
                f"got {tuple(self.sigma.shape)}"
            )
        if not torch.isfinite(self.sigma).all() or (self.sigma <= 0).any():
            raise ShapeError("variance map entries must be finite and > 0")

    @property
    def num_samples(self) -> int:
        return (self.sigma.shape[1] - 1) * self.stft_config.hop


def _pad_to_multiple(x: torch.Tensor, multiple: int) -> torch.Tensor:
    pad_h = (-x.shape[-2]) % multiple
    pad_w = (-x.shape[-1]) % multiple
    if pad_h or pad_w:
        x = nn.functional.pad(x, (0, pad_w, 0, pad_h), mode="replicate")
    return x


class _Block(nn.Module):
    """conv (or transposed conv) -> group norm -> leaky relu"""

    def __init__(self, c_in, c_out, down=None):
        super().__init__()
        if down is None:
            self.conv = nn.Conv2d(c_in, c_out, 3, stride=1, padding=1)
        elif down:
            self.conv = nn.Conv2d(c_in, c_out, 4, stride=2, padding=1)
        else:
            self.conv = nn.ConvTranspose2d(c_in, c_out, 4, stride=2, padding=1)
        self.norm = nn.GroupNorm(1, c_out)

    def forward(self, x):
        return nn.functional.leaky_relu(self.norm(self.conv(x)), 0.2)


class VarianceUnet(nn.Module):
    """Small symmetric U-Net with additive skips over an F x K grid.

    `depth` strided stages halve both axes; inputs are replicate-padded to a
    stride multiple and outputs cropped back by the owning encoder.
    """

    def __init__(self, in_channels: int, channels: int, depth: int = 2):
        super().__init__()
        self.depth = depth
        self.stem = _Block(in_channels, channels)
        downs, ups = [], []
        c = channels
        for _ in range(depth):
            downs.append(_Block(c, 2 * c, down=True))
            c *= 2
        for _ in range(depth):
            ups.append(_Block(c, c // 2, down=False))
            c //= 2
        self.downs = nn.ModuleList(downs)
        self.ups = nn.ModuleList(ups)

    @property
    def stride_multiple(self) -> int:
        return 2**self.depth

    def block_outputs(self, x, inject=None):
        """All per-block outputs in order stem, downs..., ups...

        `inject` adds a parallel branch's block outputs at matching positions
        (the additive two-branch fusion used by the posterior encoder).
        """
        outs = []

        def step(i, h):
            if inject is not None:
                h = h + inject[i]
            outs.append(h)
            return h

        h = step(0, self.stem(x))
        skips = []
        for i, blk in enumerate(self.downs):
            skips.append(h)
            h = step(1 + i, blk(h))
        for i, blk in enumerate(self.ups):
            h = step(1 + self.depth + i, blk(h) + skips[-1 - i])
        return outs

    def forward(self, x, inject=None):
        return self.block_outputs(x, inject)[-1]


class _HeadMixin:
    def _finish(self, h, f, k):
        raw = self.head(h)[:, 0, :f, :k]
        return nn.functional.softplus(raw) + self.sigma_floor


class PriorVarianceEncoder(nn.Module, _HeadMixin):
    """Aligned features -> variance map (inference-side encoder)."""

    def __init__(self, channels: int = 16, depth: int = 2, sigma_floor: float = SIGMA_FLOOR):
        super().__init__()
        self.unet = VarianceUnet(1, channels, depth)
        self.head = nn.Conv2d(channels, 1, 3, padding=1)
        self.sigma_floor = sigma_floor

    def forward(self, c_aligned: torch.Tensor) -> torch.Tensor:
        """(B, F, K) or (F, K) aligned features -> same-shape positive map."""
        squeeze = c_aligned.ndim == 2
        x = c_aligned[None] if squeeze else c_aligned
        f, k = x.shape[-2:]
        h = self.unet(_pad_to_multiple(x[:, None], self.unet.stride_multiple))
        out = self._finish(h, f, k)
        return out[0] if squeeze else out


class PosteriorVarianceEncoder(nn.Module, _HeadMixin):
    """(aligned features, target power spectrogram) -> variance map.

    The power branch U-Net's block outputs are added into the feature branch
    at the same positions; the head reads the fused feature branch.
    """

    def __init__(self, channels: int = 16, depth: int = 2, sigma_floor: float = SIGMA_FLOOR):
        super().__init__()
        self.unet_power = VarianceUnet(1, channels, depth)
        self.unet_feat = VarianceUnet(1, channels, depth)
        self.head = nn.Conv2d(channels, 1, 3, padding=1)
        self.sigma_floor = sigma_floor

    def forward(self, c_aligned: torch.Tensor, x0_power: torch.Tensor) -> torch.Tensor:
        squeeze = c_aligned.ndim == 2
        c = c_aligned[None] if squeeze else c_aligned
        p = x0_power[None] if x0_power.ndim == 2 else x0_power
        if c.shape != p.shape:
            raise ShapeError(
                f"aligned features {tuple(c.shape)} and power grid "
                f"{tuple(p.shape)} must share F x K"
            )
        f, k = c.shape[-2:]
        m = self.unet_feat.stride_multiple
        log_power = torch.log(p + _POWER_LOG_EPS)
        power_blocks = self.unet_power.block_outputs(
            _pad_to_multiple(log_power[:, None], m)
        )
        h = self.unet_feat(_pad_to_multiple(c[:, None], m), inject=power_blocks)
        out = self._finish(h, f, k)
        return out[0] if squeeze else out


def prior_encode(
    c_aligned: torch.Tensor, params: PriorVarianceEncoder, cfg: StftConfig
) -> VarianceMap:
    return VarianceMap(params(c_aligned), cfg)


def posterior_encode(
    c_aligned: torch.Tensor,
    x0_power: torch.Tensor,
    params: PosteriorVarianceEncoder,
    cfg: StftConfig,
) -> VarianceMap:
    return VarianceMap(params(c_aligned, x0_power), cfg)


def sample_noise_raw(
    sigma: torch.Tensor, cfg: StftConfig, seed: int, num_samples: int | None = None
) -> torch.Tensor:
    """Shape white noise by a variance grid: iSTFT(Re(N) * sigma + i Im(N) * sigma).

    N is the STFT of a length-D standard normal draw, deterministic given
    `seed`. Differentiable w.r.t. `sigma` (reparameterized sampling).
    """
    if sigma.shape[-2] != cfg.num_bins:
        raise ShapeError(f"expected {cfg.num_bins} frequency rows")
    d = num_samples or (sigma.shape[-1] - 1) * cfg.hop
    eps = torch.randn(
        d, generator=generator(seed), dtype=sigma.dtype, device=sigma.device
    )
    n = stft_raw(eps, cfg)
    if n.shape != sigma.shape[-2:]:
        raise ShapeError(
            f"variance grid {tuple(sigma.shape[-2:])} does not match the "
            f"{tuple(n.shape)} framing of a {d}-sample waveform"
        )
    shaped = torch.complex(n.real * sigma, n.imag * sigma)
    return istft_raw(shaped, cfg, d)


def sample_noise(vm: VarianceMap, seed: int) -> torch.Tensor:
    return sample_noise_raw(vm.sigma, vm.stft_config, seed)


def gaussian_noise(num_samples: int, seed: int, dtype=torch.float32) -> torch.Tensor:
    """i.i.d. standard normal waveform, deterministic given seed."""
    if num_samples < 1:
        raise ShapeError("num_samples must be >= 1")
    return torch.randn(num_samples, generator=generator(seed), dtype=dtype)
