"""Denoising network and fixed-point iteration synthesis.

The denoiser maps (noisy waveform, frame-rate conditioning, step index) to a
noise estimate via a downsampling branch on the waveform and an upsampling
branch on the conditioning, joined at every resolution by feature-wise
modulation. Inference repeats z_t = y_t - F(y_t, c, t) followed by a gain
adjustment, from t = T down to 1.
"""

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .dsp import StftConfig, Waveform
from .errors import ConfigError, ShapeError
from .features import ConditionalFeature, FeatureUpsampler
from .gain import GainConfig, reference_gain, self_gain
from .prior import (
    PosteriorVarianceEncoder,
    PriorVarianceEncoder,
    VarianceMap,
    gaussian_noise,
    sample_noise_raw,
)
from .seeding import derive_seed


@dataclass(frozen=True)
class DenoiserConfig:
    upsample_factors: tuple = (8, 4, 4)
    channels: tuple = (16, 24, 32, 48)  # widths from sample rate up to frame rate
    temb_dim: int = 32
    t_max: int = 16

    def __post_init__(self):
        if len(self.channels) != len(self.upsample_factors) + 1:
            raise ConfigError("need one channel width per resolution level")
        if any(f < 2 for f in self.upsample_factors):
            raise ConfigError("upsample factors must be >= 2")

    @property
    def total_factor(self) -> int:
        return math.prod(self.upsample_factors)


class _DBlock(nn.Module):
    def __init__(self, c_in, c_out, factor):
        super().__init__()
        self.conv = nn.Conv1d(c_in, c_out, 2 * factor + 1, stride=factor, padding=factor)

    def forward(self, x):
        return nn.functional.leaky_relu(self.conv(x), 0.2)


class _UBlock(nn.Module):
    """Transposed-conv upsampling modulated by the matching waveform feature."""

    def __init__(self, c_in, c_out, d_ch, factor, temb_dim):
        super().__init__()
        if factor % 2 == 0:
            self.tconv = nn.ConvTranspose1d(
                c_in, c_out, 2 * factor, stride=factor, padding=factor // 2
            )
        else:
            self.tconv = nn.ConvTranspose1d(
                c_in, c_out, 2 * factor + 1, stride=factor, padding=(factor + 1) // 2
            )
        self.film_scale = nn.Conv1d(d_ch, c_out, 3, padding=1)
        self.film_shift = nn.Conv1d(d_ch, c_out, 3, padding=1)
        self.t_scale = nn.Linear(temb_dim, c_out)
        self.t_shift = nn.Linear(temb_dim, c_out)
        self.conv = nn.Conv1d(c_out, c_out, 3, padding=1)
        self.res = nn.Conv1d(c_in, c_out, 1)
        self.factor = factor

    def forward(self, x, d, temb):
        h = nn.functional.leaky_relu(self.tconv(x), 0.2)
        gamma = 1.0 + self.film_scale(d) + self.t_scale(temb)[:, :, None]
        beta = self.film_shift(d) + self.t_shift(temb)[:, :, None]
        h = nn.functional.leaky_relu(self.conv(gamma * h + beta), 0.2)
        return h + self.res(x.repeat_interleave(self.factor, dim=-1))


class DenoiserNet(nn.Module):
    """Noise estimator for the fixed-point iteration."""

    def __init__(self, feat_dim: int, cfg: DenoiserConfig = DenoiserConfig()):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels
        self.y_stem = nn.Conv1d(1, ch[0], 5, padding=2)
        self.dblocks = nn.ModuleList(
            _DBlock(ch[i], ch[i + 1], f)
            for i, f in enumerate(reversed(cfg.upsample_factors))
        )
        self.c_stem = nn.Conv1d(feat_dim, ch[-1], 3, padding=1)
        ups = []
        n = len(cfg.upsample_factors)
        for i, f in enumerate(cfg.upsample_factors):
            c_in = ch[n - i]
            c_out = ch[n - i - 1]
            ups.append(_UBlock(c_in, c_out, d_ch=c_out, factor=f, temb_dim=cfg.temb_dim))
        self.ublocks = nn.ModuleList(ups)
        self.emb = nn.Embedding(cfg.t_max + 1, cfg.temb_dim)
        self.out = nn.Conv1d(ch[0], 1, 3, padding=1)

    def forward(self, y: torch.Tensor, cond: torch.Tensor, t: int) -> torch.Tensor:
        """y: (..., D); cond: (..., K', C) frame-rate conditioning; t: step index."""
        squeeze = y.ndim == 1
        yb = y[None] if squeeze else y
        cb = cond[None] if cond.ndim == 2 else cond
        if yb.shape[-1] != cb.shape[-2] * self.cfg.total_factor:
            raise ShapeError(
                f"waveform length {yb.shape[-1]} != {cb.shape[-2]} frames x "
                f"{self.cfg.total_factor} samples/frame"
            )
        if not 0 <= t <= self.cfg.t_max:
            raise ShapeError(f"step index {t} outside [0, {self.cfg.t_max}]")
        d_feats = [nn.functional.leaky_relu(self.y_stem(yb[:, None]), 0.2)]
        for blk in self.dblocks:
            d_feats.append(blk(d_feats[-1]))
        temb = self.emb.weight[t][None].expand(yb.shape[0], -1)
        h = nn.functional.leaky_relu(self.c_stem(cb.transpose(-1, -2)), 0.2)
        h = h + d_feats[-1]
        for i, blk in enumerate(self.ublocks):
            h = blk(h, d_feats[-2 - i], temb)
        out = self.out(h)[:, 0]
        return out[0] if squeeze else out


def f_theta(
    y: torch.Tensor, cond, t: int, net: DenoiserNet
) -> torch.Tensor:
    """Functional view of the denoiser; `cond` may be a ConditionalFeature."""
    frames = cond.frames if isinstance(cond, ConditionalFeature) else cond
    return net(y, frames, t)


@dataclass
class TraceStep:
    t: int
    waveform: torch.Tensor
    gain: float


@dataclass
class IterationTrace:
    """All intermediates of one synthesis run, initial noise included."""

    steps: list

    def __post_init__(self):
        ts = [s.t for s in self.steps]
        if ts != sorted(ts, reverse=True) or len(set(ts)) != len(ts):
            raise ShapeError("trace step indices must strictly decrease")
        if ts and ts[-1] != 0:
            raise ShapeError("trace must end at step 0")

    @property
    def final(self) -> torch.Tensor:
        return self.steps[-1].waveform

    def outputs(self) -> list:
        """The T post-gain outputs, initial noise excluded."""
        return [s.waveform for s in self.steps[1:]]

    def __len__(self) -> int:
        return len(self.steps)


def _batch_self_gain(z: torch.Tensor, cfg: GainConfig):
    peak = z.abs().amax(dim=-1, keepdim=True)
    safe = torch.where(peak > 0, peak, torch.ones_like(peak))
    out = torch.where(peak > 0, (z / safe) * cfg.beta_scale, z)
    g = torch.where(peak > 0, cfg.beta_scale / safe, torch.ones_like(safe))
    return out, g[..., 0]


def _batch_reference_gain(z: torch.Tensor, sigma: torch.Tensor, cfg: GainConfig):
    from .dsp import stft_raw

    power = stft_raw(z, cfg.stft_config).abs() ** 2
    g = torch.sqrt(
        sigma.sum(dim=(-2, -1)) / (power.sum(dim=(-2, -1)) + cfg.s)
    )
    return g[..., None] * z, g


def iterate_batch(
    y_t: torch.Tensor,
    cond: torch.Tensor,
    num_steps: int,
    mode: str,
    sigma: torch.Tensor | None,
    net: DenoiserNet,
    gain_cfg: GainConfig,
):
    """Batched fixed-point iteration; returns (outputs per step, gains per step)."""
    if num_steps < 1:
        raise ShapeError("need at least one iteration step")
    if mode not in ("self_gain", "reference_gain"):
        raise ConfigError(f"unknown gain mode {mode!r}")
    if mode == "reference_gain" and sigma is None:
        raise ShapeError("reference_gain mode requires a variance map")
    outs, gains = [], []
    y = y_t
    for t in range(num_steps, 0, -1):
        z = y - net(y, cond, t)
        if mode == "self_gain":
            y, g = _batch_self_gain(z, gain_cfg)
        else:
            y, g = _batch_reference_gain(z, sigma, gain_cfg)
        outs.append(y)
        gains.append(g)
    return outs, gains


def iterate(
    y_t: torch.Tensor,
    cond,
    num_steps: int,
    mode: str,
    net: DenoiserNet,
    gain_cfg: GainConfig,
    sigma: torch.Tensor | None = None,
) -> IterationTrace:
    """Single-utterance iteration producing a full trace."""
    frames = cond.frames if isinstance(cond, ConditionalFeature) else cond
    outs, gains = iterate_batch(
        y_t[None],
        frames[None],
        num_steps,
        mode,
        None if sigma is None else sigma[None],
        net,
        gain_cfg,
    )
    steps = [TraceStep(num_steps, y_t, 1.0)]
    for i, (y, g) in enumerate(zip(outs, gains)):
        steps.append(TraceStep(num_steps - 1 - i, y[0], float(g[0].detach())))
    return IterationTrace(steps)


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and sub-network sizes of the full vocoder bundle."""

    feat_dim: int = 32
    stft: StftConfig = field(default_factory=StftConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    prior_channels: int = 16
    posterior_channels: int = 16
    encoder_depth: int = 2
    learned_upsampler: bool = True

    def __post_init__(self):
        if self.denoiser.total_factor != self.stft.hop:
            raise ConfigError(
                f"denoiser upsampling {self.denoiser.total_factor} must equal the "
                f"STFT hop {self.stft.hop} so variance maps align with waveforms"
            )

    @property
    def total_upsampling(self) -> int:
        return 2 * self.denoiser.total_factor


class VocoderModel(nn.Module):
    """Everything synthesis needs: upsampler, aligners, encoders, denoiser."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        f = cfg.stft.num_bins
        self.upsampler = FeatureUpsampler(init="linear") if cfg.learned_upsampler else None
        self.align_prior = nn.Linear(cfg.feat_dim, f, bias=False)
        self.align_post = nn.Linear(cfg.feat_dim, f, bias=False)
        self.prior_encoder = PriorVarianceEncoder(cfg.prior_channels, cfg.encoder_depth)
        self.posterior_encoder = PosteriorVarianceEncoder(
            cfg.posterior_channels, cfg.encoder_depth
        )
        self.denoiser = DenoiserNet(cfg.feat_dim, cfg.denoiser)

    def upsample(self, frames: torch.Tensor) -> torch.Tensor:
        """(.., K_c, C) -> (.., 2 K_c, C)"""
        if self.upsampler is not None:
            return self.upsampler(frames)
        from .features import ConditionalFeature, upsample_2x_linear

        squeeze = frames.ndim == 2
        fb = frames[None] if squeeze else frames
        out = torch.stack(
            [upsample_2x_linear(ConditionalFeature(x, 1.0)).frames for x in fb]
        )
        return out[0] if squeeze else out

    def _aligned(self, align: nn.Linear, c_up: torch.Tensor, num_frames: int):
        """Project channels onto frequency rows and edge-pad to the target grid."""
        grid = align(c_up).transpose(-1, -2)  # (.., F, K')
        k = grid.shape[-1]
        if k < num_frames:
            grid = nn.functional.pad(grid, (0, num_frames - k), mode="replicate")
        return grid[..., :num_frames]

    def prior_sigma(self, c_up: torch.Tensor, num_frames: int) -> torch.Tensor:
        return self.prior_encoder(self._aligned(self.align_prior, c_up, num_frames))

    def posterior_sigma(
        self, c_up: torch.Tensor, x0_power: torch.Tensor
    ) -> torch.Tensor:
        aligned = self._aligned(self.align_post, c_up, x0_power.shape[-1])
        return self.posterior_encoder(aligned, x0_power)


def synthesize(
    cond: ConditionalFeature,
    model: VocoderModel,
    num_steps: int = 5,
    mode: str = "reference_gain",
    seed: int = 0,
    gain_cfg: GainConfig | None = None,
    sample_rate: int = 16000,
) -> tuple[Waveform, IterationTrace]:
    """Full inference path: prior-shaped (or Gaussian) noise refined for T steps."""
    cfg = model.cfg
    if gain_cfg is None:
        gain_cfg = GainConfig(stft_config=cfg.stft)
    with torch.no_grad():
        c_up = model.upsample(cond.frames)
        k_up = c_up.shape[-2]
        d = k_up * cfg.denoiser.total_factor
        sigma = None
        if mode == "reference_gain":
            sigma = model.prior_sigma(c_up, num_frames=k_up + 1)
            y_t = sample_noise_raw(sigma, cfg.stft, derive_seed(seed, "noise"), d)
        elif mode == "self_gain":
            y_t = gaussian_noise(d, derive_seed(seed, "noise"), dtype=c_up.dtype)
        else:
            raise ConfigError(f"unknown gain mode {mode!r}")
        trace = iterate(y_t, c_up, num_steps, mode, model.denoiser, gain_cfg, sigma)
    return Waveform(trace.final, sample_rate), trace
