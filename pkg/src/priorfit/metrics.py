"""Reference-aware objective metrics.

Mel-cepstral distortion is computed from log-mel spectra via an orthonormal
DCT (order 0 excluded, so it is gain-invariant); pitch comes from a
normalized-autocorrelation tracker with parabolic peak interpolation. Values
are self-consistent within this package, not comparable to numbers produced
by other toolchains.
"""

import json
import math
from dataclasses import dataclass

import numpy as np
import torch

from .dsp import StftConfig, Waveform, mel_filterbank, stft_raw
from .errors import DomainError, ShapeError

SNR_CAP_DB = 120.0
MEL_LOG_FLOOR = 1e-10
MCD_SCALE = 10.0 * math.sqrt(2.0) / math.log(10.0)


@dataclass(frozen=True)
class MetricsConfig:
    stft: StftConfig = None
    mcd_mels: int = 24
    mcd_order: int = 13
    f0_min: float = 60.0
    f0_max: float = 500.0
    pitch_frame: int = 1024
    pitch_hop: int = 256
    voicing_threshold: float = 0.5

    def __post_init__(self):
        if self.stft is None:
            object.__setattr__(self, "stft", StftConfig())
        if not 0 < self.mcd_order < self.mcd_mels:
            raise ShapeError("need 0 < mcd_order < mcd_mels")


DEFAULT_METRICS = MetricsConfig()


def _aligned_samples(x: Waveform, y: Waveform):
    if x.sample_rate != y.sample_rate:
        raise ShapeError("sample rates differ")
    n = min(len(x), len(y))
    return x.samples[:n].to(torch.float64), y.samples[:n].to(torch.float64), n


def _dct_matrix(order: int, n: int) -> np.ndarray:
    """Orthonormal DCT-II rows 0..order."""
    k = np.arange(order + 1)[:, None]
    i = np.arange(n)[None, :]
    mat = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * math.sqrt(2.0 / n)
    mat[0] /= math.sqrt(2.0)
    return mat


def mel_cepstra(w: Waveform, cfg: MetricsConfig) -> np.ndarray:
    """(order+1) x K mel-cepstral trajectory."""
    if len(w) <= cfg.stft.win_length:
        raise ShapeError(f"utterance shorter than one frame ({len(w)} samples)")
    fb = mel_filterbank(cfg.mcd_mels, cfg.stft, w.sample_rate, dtype=torch.float64)
    power = stft_raw(w.samples.to(torch.float64), cfg.stft).abs() ** 2
    logmel = np.log(np.maximum((fb @ power).numpy(), MEL_LOG_FLOOR))
    return _dct_matrix(cfg.mcd_order, cfg.mcd_mels) @ logmel


def mcd(x: Waveform, y: Waveform, cfg: MetricsConfig = DEFAULT_METRICS) -> float:
    """Mel-cepstral distortion in dB over orders 1..M (order 0 excluded)."""
    xs, ys, n = _aligned_samples(x, y)
    cx = mel_cepstra(Waveform(xs, x.sample_rate), cfg)
    cy = mel_cepstra(Waveform(ys, y.sample_rate), cfg)
    diff = cx[1:] - cy[1:]
    return float(MCD_SCALE * np.mean(np.sqrt((diff**2).sum(axis=0))))


def pitch_track(w: Waveform, cfg: MetricsConfig = DEFAULT_METRICS):
    """Per-frame (f0_hz, voiced) from normalized autocorrelation.

    Frames are fully interior (no padding); silence and aperiodic frames are
    marked unvoiced with f0 = 0.
    """
    if w.sample_rate < 8000:
        raise ShapeError("pitch tracking requires sample rate >= 8 kHz")
    x = w.samples.to(torch.float64).numpy()
    frame, hop = cfg.pitch_frame, cfg.pitch_hop
    lag_min = max(2, int(w.sample_rate / cfg.f0_max))
    lag_max = min(frame - 2, int(math.ceil(w.sample_rate / cfg.f0_min)))
    f0s, voiced = [], []
    for start in range(0, len(x) - frame + 1, hop):
        seg = x[start : start + frame]
        seg = seg - seg.mean()
        if np.sqrt((seg**2).mean()) < 1e-5:
            f0s.append(0.0)
            voiced.append(False)
            continue
        sq = np.concatenate([[0.0], np.cumsum(seg**2)])
        total = sq[-1]
        corr = np.correlate(seg, seg, mode="full")[frame - 1 :]
        lags = np.arange(lag_min, lag_max + 1)
        e_head = sq[frame - lags] - sq[0]
        e_tail = total - sq[lags]
        nacf = corr[lags] / np.sqrt(np.maximum(e_head * e_tail, 1e-30))
        vmax = float(nacf.max())
        if vmax < cfg.voicing_threshold:
            f0s.append(0.0)
            voiced.append(False)
            continue
        # earliest near-maximal local peak, so period multiples don't win
        floor = max(cfg.voicing_threshold, 0.9 * vmax)
        best = int(np.argmax(nacf))
        for i in range(1, len(nacf) - 1):
            if nacf[i] >= floor and nacf[i] >= nacf[i - 1] and nacf[i] >= nacf[i + 1]:
                best = i
                break
        lag = float(lags[best])
        if 0 < best < len(nacf) - 1:
            a, b, c = nacf[best - 1], nacf[best], nacf[best + 1]
            denom = a - 2 * b + c
            if abs(denom) > 1e-12:
                lag += 0.5 * (a - c) / denom
        f0 = w.sample_rate / lag
        if not cfg.f0_min <= f0 <= cfg.f0_max:
            f0s.append(0.0)
            voiced.append(False)
        else:
            f0s.append(f0)
            voiced.append(True)
    return np.array(f0s, dtype=np.float64), np.array(voiced, dtype=bool)


def log_f0_rmse(
    x: Waveform, y: Waveform, cfg: MetricsConfig = DEFAULT_METRICS
) -> float | None:
    """RMSE of log F0 over co-voiced frames; None when no frame is co-voiced."""
    _aligned_samples(x, y)  # validates rates
    fx, vx = pitch_track(x, cfg)
    fy, vy = pitch_track(y, cfg)
    n = min(len(fx), len(fy))
    both = vx[:n] & vy[:n]
    if not both.any():
        return None
    d = np.log(fx[:n][both]) - np.log(fy[:n][both])
    return float(np.sqrt((d**2).mean()))


def spectral_convergence(
    x: Waveform, y: Waveform, cfg: MetricsConfig = DEFAULT_METRICS
) -> float:
    """Frobenius distance of magnitude spectra relative to the reference x."""
    xs, ys, _ = _aligned_samples(x, y)
    mx = stft_raw(xs, cfg.stft).abs()
    my = stft_raw(ys, cfg.stft).abs()
    denom = torch.linalg.norm(mx)
    if denom == 0:
        raise DomainError("zero reference waveform")
    return float(torch.linalg.norm(mx - my) / denom)


def snr(x: Waveform, y: Waveform) -> float:
    """Signal-to-error ratio in dB, capped at 120 dB for exact matches."""
    xs, ys, _ = _aligned_samples(x, y)
    sig = float((xs**2).sum())
    if sig == 0:
        raise DomainError("zero reference waveform")
    err = float(((xs - ys) ** 2).sum())
    if err == 0:
        return SNR_CAP_DB
    return min(10.0 * math.log10(sig / err), SNR_CAP_DB)


@dataclass
class UtteranceMetrics:
    name: str
    mcd: float
    log_f0_rmse: float | None
    spectral_convergence: float
    snr: float


@dataclass
class MetricReport:
    utterances: list

    def summary(self) -> dict:
        def mean(values):
            vals = [v for v in values if v is not None]
            return sum(vals) / len(vals) if vals else None

        return {
            "count": len(self.utterances),
            "mcd": mean(u.mcd for u in self.utterances),
            "log_f0_rmse": mean(u.log_f0_rmse for u in self.utterances),
            "spectral_convergence": mean(
                u.spectral_convergence for u in self.utterances
            ),
            "snr": mean(u.snr for u in self.utterances),
        }

    def to_json(self) -> str:
        return json.dumps(
            {
                "utterances": [vars(u) for u in self.utterances],
                "summary": self.summary(),
            },
            indent=2,
        )


def evaluate_pair(
    name: str, ref: Waveform, hyp: Waveform, cfg: MetricsConfig = DEFAULT_METRICS
) -> UtteranceMetrics:
    return UtteranceMetrics(
        name=name,
        mcd=mcd(ref, hyp, cfg),
        log_f0_rmse=log_f0_rmse(ref, hyp, cfg),
        spectral_convergence=spectral_convergence(ref, hyp, cfg),
        snr=snr(ref, hyp),
    )
