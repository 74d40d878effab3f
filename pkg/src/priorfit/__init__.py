"""Neural vocoder with a trainable time-frequency prior and fixed-point iteration."""

from .config import RunConfig, desk_preset, paper_preset
from .dsp import (
    ComplexSpectrogram,
    PowerSpectrogram,
    StftConfig,
    Waveform,
    istft,
    mel_filterbank,
    power_spectrogram,
    stft,
)
from .features import (
    ConditionalFeature,
    load_feature_file,
    pseudo_ssl,
    upsample_2x,
    write_feature_file,
)
from .gain import GainConfig, energy, reference_gain, self_gain
from .losses import (
    LossWeights,
    MultiResConfig,
    MultiScaleDiscriminator,
    gan_losses,
    guide_loss,
    prior_matching_loss,
    stft_loss,
    total_loss,
)
from .metrics import MetricReport, log_f0_rmse, mcd, pitch_track, snr, spectral_convergence
from .prior import (
    PosteriorVarianceEncoder,
    PriorVarianceEncoder,
    VarianceMap,
    gaussian_noise,
    posterior_encode,
    prior_encode,
    sample_noise,
)
from .training import (
    TrainerState,
    load_checkpoint,
    save_checkpoint,
    synthetic_corpus,
    train,
    train_step,
)
from .vocoder import DenoiserNet, IterationTrace, ModelConfig, VocoderModel, f_theta, iterate, synthesize

__version__ = "0.1.0"
