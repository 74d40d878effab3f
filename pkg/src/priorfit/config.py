"""Run configuration: one flat document mapping every module's parameters.

Two presets: `desk` (small, CPU-trainable in minutes) and `paper` (the large
published operating point: 24 kHz audio, 480x total upsampling split as
2 x {5,4,3,2,2}, encoder widths 45/32, batch 8, 400k steps, T=5,
guide/prior-matching weights 0.1/10).
"""

import dataclasses
import json
from dataclasses import dataclass

from .dsp import StftConfig
from .errors import ConfigError
from .gain import GainConfig
from .losses import LossWeights, MultiResConfig
from .vocoder import DenoiserConfig, ModelConfig


@dataclass(frozen=True)
class RunConfig:
    preset: str = "desk"
    # audio / framing
    sample_rate: int = 16000
    fft_size: int = 512
    hop: int = 128
    win_length: int = 512
    # conditioning
    n_mels: int = 32
    learned_upsampler: bool = True
    # denoiser
    denoiser_factors: tuple = (8, 4, 4)
    denoiser_channels: tuple = (12, 16, 24, 32)
    temb_dim: int = 32
    t_max: int = 16
    # variance encoders
    prior_channels: int = 8
    posterior_channels: int = 8
    encoder_depth: int = 2
    # gain
    beta_scale: float = 0.95
    gain_s: float = 1e-8
    # losses
    resolutions: tuple = ((512, 128, 512), (1024, 256, 1024), (256, 64, 256))
    lambda_stft: float = 2.5
    lambda_pm: float = 10.0
    lambda_guide: float = 0.1
    lambda_feat: float = 2.0
    # discriminator
    disc_scales: int = 3
    disc_channels: int = 12
    disc_strided_layers: int = 2
    # training
    batch_size: int = 4
    steps: int = 3000
    num_steps: int = 5
    lr_gen: float = 2e-4
    lr_disc: float = 2e-4
    seed: int = 0
    log_interval: int = 50
    val_interval: int = 1000
    # synthetic corpus
    corpus_utterances: int = 10
    corpus_samples: int = 2048
    corpus_noise_db: float = -26.0
    # metrics
    mcd_mels: int = 24
    mcd_order: int = 13
    f0_min: float = 60.0
    f0_max: float = 500.0

    def __post_init__(self):
        # build every derived config eagerly so bad documents fail at parse time
        self.model_config()
        self.feature_stft_config()
        self.gain_config()
        self.mr_config()
        self.loss_weights()
        if not 0 < self.n_mels < self.fft_size // 2 + 1:
            raise ConfigError(f"n_mels must be in (0, {self.fft_size // 2 + 1})")
        if self.corpus_samples % (2 * self.hop):
            raise ConfigError("corpus_samples must be a multiple of 2*hop")

    # --- derived module configs -------------------------------------------

    def stft_config(self) -> StftConfig:
        return StftConfig(self.fft_size, self.hop, self.win_length)

    def feature_stft_config(self) -> StftConfig:
        """Framing of the pseudo-SSL extractor: twice the synthesis hop."""
        return StftConfig(self.fft_size, 2 * self.hop, self.win_length)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            feat_dim=self.n_mels,
            stft=self.stft_config(),
            denoiser=DenoiserConfig(
                upsample_factors=tuple(self.denoiser_factors),
                channels=tuple(self.denoiser_channels),
                temb_dim=self.temb_dim,
                t_max=self.t_max,
            ),
            prior_channels=self.prior_channels,
            posterior_channels=self.posterior_channels,
            encoder_depth=self.encoder_depth,
            learned_upsampler=self.learned_upsampler,
        )

    def gain_config(self) -> GainConfig:
        return GainConfig(self.beta_scale, self.gain_s, self.stft_config())

    def mr_config(self) -> MultiResConfig:
        return MultiResConfig(tuple(tuple(r) for r in self.resolutions))

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            self.lambda_stft, self.lambda_pm, self.lambda_guide, self.lambda_feat
        )


def paper_preset(**overrides) -> RunConfig:
    """The published large-scale operating point (not CPU-friendly)."""
    base = dict(
        preset="paper",
        sample_rate=24000,
        fft_size=1024,
        hop=240,
        win_length=960,
        n_mels=80,
        denoiser_factors=(5, 4, 3, 2, 2),
        denoiser_channels=(16, 24, 32, 48, 64, 96),
        prior_channels=45,
        posterior_channels=32,
        batch_size=8,
        steps=400_000,
        num_steps=5,
        lambda_pm=10.0,
        lambda_guide=0.1,
        resolutions=((512, 120, 480), (1024, 240, 960), (2048, 480, 1920)),
        corpus_samples=7680,
    )
    base.update(overrides)
    return RunConfig(**base)


def desk_preset(**overrides) -> RunConfig:
    return RunConfig(**overrides)


PRESETS = {"desk": desk_preset, "paper": paper_preset}

_TUPLE_FIELDS = {"denoiser_factors", "denoiser_channels", "resolutions"}


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(doc: dict) -> RunConfig:
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        if key in _TUPLE_FIELDS and isinstance(value, (list, tuple)):
            value = tuple(
                tuple(v) if isinstance(v, (list, tuple)) else v for v in value
            )
        kwargs[key] = value
    preset = kwargs.pop("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    base = config_to_dict(PRESETS[preset]())
    base.update(kwargs)
    base_preset = base.pop("preset")
    cleaned = {
        k: (
            tuple(tuple(x) if isinstance(x, (list, tuple)) else x for x in v)
            if k in _TUPLE_FIELDS
            else v
        )
        for k, v in base.items()
    }
    return RunConfig(preset=base_preset, **cleaned)


def load_config(path) -> RunConfig:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(doc)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2)
