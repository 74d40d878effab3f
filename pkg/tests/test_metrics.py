import math

import numpy as np
import pytest
import torch

from priorfit.dsp import StftConfig, Waveform, mel_filterbank, stft_raw
from priorfit.errors import DomainError, ShapeError
from priorfit.metrics import (
    SNR_CAP_DB,
    MetricReport,
    MetricsConfig,
    evaluate_pair,
    log_f0_rmse,
    mcd,
    mel_cepstra,
    pitch_track,
    snr,
    spectral_convergence,
)

from conftest import rand_wave

SR = 16000


def tone(freq, n=16384, amp=0.5, sr=SR, dtype=torch.float64):
    t = torch.arange(n, dtype=dtype)
    return Waveform(amp * torch.sin(2 * math.pi * freq * t / sr), sr)


def broadband(seed, n=16384):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(n + 16, generator=g, dtype=torch.float64)
    smooth = torch.nn.functional.avg_pool1d(x[None, None], 9, stride=1)[0, 0][:n]
    return Waveform(0.4 * smooth / smooth.abs().max(), SR)


class TestMcd:
    def test_self_identity(self):
        w = broadband(1)
        assert mcd(w, w) == 0.0

    def test_gain_invariant_via_order_zero_exclusion(self):
        w = broadband(2)
        scaled = Waveform(4.0 * w.samples, SR)
        assert mcd(w, scaled) < 1e-8

    def test_matches_direct_cepstrum_oracle(self):
        # hand-computed: log-mel -> orthonormal DCT -> norm over orders 1..M
        cfg = MetricsConfig()
        x, y = broadband(3), broadband(4)
        fb = mel_filterbank(cfg.mcd_mels, cfg.stft, SR, dtype=torch.float64).numpy()
        vals = []
        for w in (x, y):
            p = (stft_raw(w.samples, cfg.stft).abs() ** 2).numpy()
            logmel = np.log(np.maximum(fb @ p, 1e-10))
            n_mel = cfg.mcd_mels
            cc = np.zeros((cfg.mcd_order + 1, logmel.shape[1]))
            for k in range(cfg.mcd_order + 1):
                alpha = math.sqrt((1.0 if k else 0.5) * 2.0 / n_mel)
                for frame in range(logmel.shape[1]):
                    cc[k, frame] = alpha * sum(
                        logmel[i, frame] * math.cos(math.pi * k * (2 * i + 1) / (2 * n_mel))
                        for i in range(n_mel)
                    )
            vals.append(cc)
        diff = vals[0][1:] - vals[1][1:]
        want = (10 * math.sqrt(2) / math.log(10)) * np.mean(
            np.sqrt((diff**2).sum(axis=0))
        )
        assert abs(mcd(x, y) - want) < 1e-4

    def test_symmetric(self):
        x, y = broadband(5), broadband(6)
        assert abs(mcd(x, y) - mcd(y, x)) < 1e-9

    def test_too_short_rejected(self):
        with pytest.raises(ShapeError):
            mcd(tone(220, n=256), tone(220, n=256))


class TestPitch:
    def test_recovers_220hz_tone(self):
        f0, voiced = pitch_track(tone(220))
        assert voiced.all()
        hits = np.abs(f0 - 220.0) <= 2.0
        assert hits.mean() >= 0.95

    def test_white_noise_mostly_unvoiced(self):
        g = torch.Generator().manual_seed(0)
        w = Waveform(torch.randn(16384, generator=g, dtype=torch.float64), SR)
        _, voiced = pitch_track(w)
        assert voiced.mean() < 0.10

    def test_silence_all_unvoiced(self):
        _, voiced = pitch_track(Waveform(torch.zeros(8192), SR))
        assert not voiced.any()


class TestLogF0Rmse:
    def test_self_identity(self):
        w = tone(200)
        assert log_f0_rmse(w, w) == 0.0

    def test_closed_form_on_tone_pair(self):
        got = log_f0_rmse(tone(200), tone(220))
        want = abs(math.log(220.0) - math.log(200.0))
        assert abs(got - want) < 5e-3

    def test_unvoiced_pair_is_undefined_not_zero(self):
        g = torch.Generator().manual_seed(3)
        a = Waveform(torch.randn(8192, generator=g, dtype=torch.float64), SR)
        b = Waveform(torch.randn(8192, generator=g, dtype=torch.float64), SR)
        assert log_f0_rmse(a, b) is None


class TestScSnr:
    def test_identity_values(self):
        w = broadband(7)
        assert spectral_convergence(w, w) == 0.0
        assert snr(w, w) == SNR_CAP_DB

    def test_zero_hypothesis_gives_sc_one(self):
        w = broadband(8)
        z = Waveform(torch.zeros(len(w)), SR)
        assert abs(spectral_convergence(w, z) - 1.0) < 1e-12

    def test_matches_naive_formula(self):
        cfg = MetricsConfig()
        x, y = broadband(9), broadband(10)
        mx = stft_raw(x.samples, cfg.stft).abs().numpy()
        my = stft_raw(y.samples, cfg.stft).abs().numpy()
        want_sc = np.sqrt(((mx - my) ** 2).sum()) / np.sqrt((mx**2).sum())
        assert abs(spectral_convergence(x, y) - want_sc) < 1e-9
        xs, ys = x.samples.numpy(), y.samples.numpy()
        want_snr = 10 * math.log10((xs**2).sum() / ((xs - ys) ** 2).sum())
        assert abs(snr(x, y) - want_snr) < 1e-9

    def test_zero_reference_rejected(self):
        z = Waveform(torch.zeros(4096), SR)
        with pytest.raises(DomainError):
            snr(z, broadband(11))
        with pytest.raises(DomainError):
            spectral_convergence(z, broadband(11))


class TestReport:
    def test_summary_means_match_hand_average(self):
        x, y = broadband(12), broadband(13)
        entries = [
            evaluate_pair("a", x, y),
            evaluate_pair("b", x, x),
        ]
        report = MetricReport(entries)
        s = report.summary()
        assert s["count"] == 2
        assert abs(s["mcd"] - (entries[0].mcd + entries[1].mcd) / 2) < 1e-12
        assert abs(s["snr"] - (entries[0].snr + entries[1].snr) / 2) < 1e-12
        # log-f0 undefined entries are excluded from the mean
        assert (s["log_f0_rmse"] is None) == all(
            e.log_f0_rmse is None for e in entries
        )

    def test_json_round_trip(self):
        import json

        w = broadband(14)
        report = MetricReport([evaluate_pair("u", w, w)])
        doc = json.loads(report.to_json())
        assert doc["summary"]["mcd"] == 0.0
        assert doc["utterances"][0]["name"] == "u"
