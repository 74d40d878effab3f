"""Training objectives.

Generator side: per-iteration adversarial + feature-matching + multi-resolution
STFT terms averaged over the trace, plus the diagonal KL between posterior and
prior variance maps and the guide term anchoring the posterior to the target
power spectrogram. Discriminator side: least-squares adversarial loss over a
multi-scale waveform discriminator ensemble.
"""

from dataclasses import dataclass, field

import torch
from torch import nn

from .dsp import StftConfig, stft_raw
from .errors import ConfigError, DomainError, ShapeError

# power floor inside magnitude spectra, keeps log terms finite on silence
MAG_POWER_FLOOR = 1e-7
# floor for |X0|^2 in the guide loss ratio term
GUIDE_POWER_FLOOR = 1e-8

DEFAULT_RESOLUTIONS = ((512, 128, 512), (1024, 256, 1024), (256, 64, 256))


@dataclass(frozen=True)
class LossWeights:
    lambda_stft: float = 2.5
    lambda_pm: float = 1.0
    lambda_guide: float = 0.1
    lambda_feat: float = 2.0

    def __post_init__(self):
        if min(self.lambda_stft, self.lambda_pm, self.lambda_guide) <= 0:
            raise ConfigError("loss weights must be positive")


@dataclass(frozen=True)
class MultiResConfig:
    resolutions: tuple = DEFAULT_RESOLUTIONS

    def __post_init__(self):
        if len(set(self.resolutions)) < 2:
            raise ConfigError("need at least 2 distinct STFT resolutions")
        for fft, hop, win in self.resolutions:
            StftConfig(fft_size=fft, hop=hop, win_length=win)  # validates


def _magnitude(x: torch.Tensor, cfg: StftConfig) -> torch.Tensor:
    power = stft_raw(x, cfg).abs() ** 2
    return power.clamp(min=MAG_POWER_FLOOR).sqrt()


def spectral_terms(
    x: torch.Tensor, y: torch.Tensor, fft: int, hop: int, win: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """(spectral convergence, log-magnitude L1) at one resolution; x is the target."""
    if x.shape != y.shape:
        raise ShapeError(f"length mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    cfg = StftConfig(fft_size=fft, hop=hop, win_length=win)
    mx, my = _magnitude(x, cfg), _magnitude(y, cfg)
    sc = torch.linalg.norm(mx - my, dim=(-2, -1)) / torch.linalg.norm(mx, dim=(-2, -1))
    logmag = (mx.log() - my.log()).abs().mean(dim=(-2, -1))
    return sc.mean(), logmag.mean()


def stft_loss(x: torch.Tensor, y: torch.Tensor, cfg: MultiResConfig) -> torch.Tensor:
    """Sum over resolutions of spectral convergence plus log-magnitude distance."""
    total = x.new_zeros(())
    for fft, hop, win in cfg.resolutions:
        sc, logmag = spectral_terms(x, y, fft, hop, win)
        total = total + sc + logmag
    return total


class _ScaleDiscriminator(nn.Module):
    """Strided 1-D conv stack judging one temporal resolution."""

    def __init__(self, channels: int = 16, num_strided: int = 2):
        super().__init__()
        layers = [nn.Conv1d(1, channels, 15, stride=1, padding=7)]
        c = channels
        for _ in range(num_strided):
            layers.append(nn.Conv1d(c, min(2 * c, 256), 11, stride=4, padding=5))
            c = min(2 * c, 256)
        layers.append(nn.Conv1d(c, c, 5, stride=1, padding=2))
        self.layers = nn.ModuleList(layers)
        self.out = nn.Conv1d(c, 1, 3, stride=1, padding=1)

    def forward(self, x):
        feats = []
        h = x
        for layer in self.layers:
            h = nn.functional.leaky_relu(layer(h), 0.2)
            feats.append(h)
        return feats, self.out(h)


class MultiScaleDiscriminator(nn.Module):
    """Discriminator ensemble over average-pooled copies of the waveform."""

    def __init__(self, scales: int = 3, channels: int = 16, num_strided: int = 2):
        super().__init__()
        self.discs = nn.ModuleList(
            _ScaleDiscriminator(channels, num_strided) for _ in range(scales)
        )
        self.pool = nn.AvgPool1d(4, stride=2, padding=1, count_include_pad=False)

    def forward(self, x):
        """x: (..., D) -> list of (features, logits) per scale."""
        h = x.reshape(-1, 1, x.shape[-1])
        outs = []
        for d in self.discs:
            outs.append(d(h))
            h = self.pool(h)
        return outs


def gan_losses(
    x: torch.Tensor,
    y: torch.Tensor,
    disc: MultiScaleDiscriminator,
    lambda_feat: float = 2.0,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Least-squares GAN terms summed over scales; x is the reference.

    Returns (gen_loss, disc_loss, feat_match) where gen_loss already folds in
    lambda_feat * feat_match.
    """
    if x.shape != y.shape:
        raise ShapeError(f"length mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    real = disc(x)
    fake = disc(y)
    gen_adv = x.new_zeros(())
    disc_loss = x.new_zeros(())
    fm = x.new_zeros(())
    n_layers = 0
    for (feats_r, logit_r), (feats_f, logit_f) in zip(real, fake):
        gen_adv = gen_adv + ((logit_f - 1.0) ** 2).mean()
        disc_loss = disc_loss + ((logit_r - 1.0) ** 2).mean() + (logit_f**2).mean()
        for fr, ff in zip(feats_r, feats_f):
            fm = fm + (fr - ff).abs().mean()
            n_layers += 1
    fm = fm / n_layers
    return gen_adv + lambda_feat * fm, disc_loss, fm


def _as_grid(x) -> torch.Tensor:
    sigma = getattr(x, "sigma", None)
    if sigma is not None:
        return sigma
    bins = getattr(x, "bins", None)
    return bins if bins is not None else x


def prior_matching_loss(sigma_post, sigma_prior) -> torch.Tensor:
    """Diagonal KL-style divergence: sum of log(prior/post) + post/prior per bin."""
    q = _as_grid(sigma_post)
    p = _as_grid(sigma_prior)
    if q.shape != p.shape:
        raise ShapeError(f"shape mismatch {tuple(q.shape)} vs {tuple(p.shape)}")
    if (q <= 0).any() or (p <= 0).any():
        raise DomainError("variance maps must be strictly positive")
    batch = q.numel() // (q.shape[-2] * q.shape[-1])
    return (torch.log(p / q) + q / p).sum() / batch


def guide_loss(
    sigma_post,
    x0_power,
    lambda_guide: float,
    power_floor: float = GUIDE_POWER_FLOOR,
) -> torch.Tensor:
    """Energy matching plus a floored ratio pull toward the target spectrogram."""
    q = _as_grid(sigma_post)
    p = _as_grid(x0_power)
    if q.shape != p.shape:
        raise ShapeError(f"shape mismatch {tuple(q.shape)} vs {tuple(p.shape)}")
    p = p.clamp(min=power_floor)
    n_bins = q.shape[-2] * q.shape[-1]
    batch = q.numel() // n_bins
    energy_term = (
        (q.sum(dim=(-2, -1)) - p.sum(dim=(-2, -1))).abs().sum() / batch
    )
    ratio_term = (q / p).sum() / (batch * n_bins)
    out = energy_term + lambda_guide * ratio_term
    if not torch.isfinite(out):
        raise DomainError("guide loss is non-finite")
    return out


def iteration_loss(
    x0: torch.Tensor,
    ys: list[torch.Tensor],
    disc: MultiScaleDiscriminator,
    mr_cfg: MultiResConfig,
    weights: LossWeights,
) -> tuple[torch.Tensor, torch.Tensor, dict]:
    """Mean per-step adversarial + spectral loss over the iteration outputs.

    `ys` holds the T intermediate outputs (initial noise excluded). The
    discriminator side detaches the generated waveforms. Returns
    (gen_total, disc_total, components).
    """
    if not ys:
        raise ShapeError("iteration trace must hold at least one output")
    t = len(ys)
    stacked = torch.stack(ys)  # (T, ..., D)
    x_rep = x0.expand(stacked.shape) if x0.shape != stacked.shape else x0
    gen_adv_fm, _, fm = gan_losses(x_rep, stacked, disc, weights.lambda_feat)
    _, disc_total, _ = gan_losses(x_rep, stacked.detach(), disc, weights.lambda_feat)
    spec = stft_loss(x_rep, stacked, mr_cfg)
    gen_total = gen_adv_fm + weights.lambda_stft * spec
    parts = {
        "gan_g": (gen_adv_fm - weights.lambda_feat * fm).item(),
        "gan_d": disc_total.item(),
        "feat_match": fm.item(),
        "stft": spec.item(),
        "num_steps": t,
    }
    return gen_total, disc_total, parts


def total_loss(
    x0: torch.Tensor,
    ys: list[torch.Tensor],
    sigma_post,
    sigma_prior,
    x0_power,
    disc: MultiScaleDiscriminator,
    mr_cfg: MultiResConfig,
    weights: LossWeights,
) -> tuple[torch.Tensor, torch.Tensor, dict]:
    """Full objective: iteration loss + weighted prior matching + guide."""
    gen_wf, disc_total, parts = iteration_loss(x0, ys, disc, mr_cfg, weights)
    pm = prior_matching_loss(sigma_post, sigma_prior)
    guide = guide_loss(sigma_post, x0_power, weights.lambda_guide)
    gen_total = gen_wf + weights.lambda_pm * pm + guide
    parts.update(pm=pm.item(), guide=guide.item(), gen_total=gen_total.item())
    return gen_total, disc_total, parts
