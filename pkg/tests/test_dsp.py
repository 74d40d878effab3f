import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from priorfit.dsp import (
    ComplexSpectrogram,
    StftConfig,
    Waveform,
    istft,
    mel_filterbank,
    power_spectrogram,
    stft,
)
from priorfit.errors import ConfigError, ShapeError

from conftest import rand_wave

SR = 16000


def wave(samples):
    return Waveform(samples, SR)


class TestStft:
    def test_zero_waveform_gives_zero_spectrogram(self, cfg):
        s = stft(wave(torch.zeros(4096, dtype=torch.float64)), cfg)
        assert torch.all(s.bins == 0)
        assert s.bins.shape == (257, 33)

    def test_frame_count_rounds_up_partial_hop(self, cfg):
        s = stft(wave(rand_wave(4000)), cfg)
        assert s.bins.shape[1] == math.ceil(4000 / cfg.hop) + 1

    def test_impulse_frame_zero_is_flat_at_window_center(self, cfg):
        # oracle: the only nonzero tap in frame 0 is the impulse under the
        # window's center sample, so |DFT| is that window value at every bin
        x = torch.zeros(4096, dtype=torch.float64)
        x[0] = 1.0
        s = stft(wave(x), cfg)
        w_center = torch.hann_window(
            cfg.win_length, periodic=True, dtype=torch.float64
        )[cfg.win_length // 2]
        assert torch.allclose(s.bins[:, 0].abs(), w_center.expand(257), atol=1e-12)

    def test_bin_center_sinusoid_concentrates_at_its_bin(self, cfg):
        # oracle: windowed DFT of sin at an exact bin center has magnitude
        # sum(w)/2 at that bin in interior frames, images 2*bin away
        bin_idx = 20
        f0 = bin_idx * SR / cfg.fft_size
        n = torch.arange(8192, dtype=torch.float64)
        s = stft(wave(torch.sin(2 * math.pi * f0 * n / SR)), cfg)
        interior = s.bins[:, 8:-8]
        expected = torch.hann_window(
            cfg.win_length, periodic=True, dtype=torch.float64
        ).sum() / 2
        assert torch.all(interior.abs().argmax(dim=0) == bin_idx)
        assert torch.allclose(interior[bin_idx].abs(), expected.expand(interior.shape[1]), rtol=1e-9)

    def test_pure_function_bit_identical(self, cfg):
        w = wave(rand_wave(3000))
        assert torch.equal(stft(w, cfg).bins, stft(w, cfg).bins)

    def test_non_cola_config_rejected(self):
        with pytest.raises(ConfigError):
            StftConfig(fft_size=512, hop=512, win_length=512)
        with pytest.raises(ConfigError):
            StftConfig(fft_size=512, hop=600, win_length=512)


class TestIstft:
    @pytest.mark.parametrize("seed", range(4))
    def test_round_trip(self, cfg, seed):
        w = rand_wave(4 * cfg.fft_size, seed=seed)
        r = istft(stft(wave(w), cfg))
        assert len(r) == len(w)
        assert (r.samples - w).abs().max() < 1e-6 * w.abs().max()

    def test_round_trip_float32(self, cfg):
        w = rand_wave(4 * cfg.fft_size, seed=9, dtype=torch.float32)
        r = istft(stft(wave(w), cfg))
        assert (r.samples - w).abs().max() < 1e-6 * w.abs().max()

    @settings(max_examples=20, deadline=None)
    @given(n=st.integers(min_value=300, max_value=5000), seed=st.integers(0, 2**32 - 1))
    def test_round_trip_any_length(self, cfg, n, seed):
        w = rand_wave(n, seed=seed)
        r = istft(stft(wave(w), cfg))
        assert len(r) == n
        assert (r.samples - w).abs().max() < 1e-6 * w.abs().max()

    def test_zero_spectrogram_gives_zero_waveform(self, cfg):
        s = ComplexSpectrogram(torch.zeros(257, 33, dtype=torch.complex128), cfg)
        assert torch.all(istft(s).samples == 0)

    def test_linearity(self, cfg):
        w1, w2 = rand_wave(4096, seed=1), rand_wave(4096, seed=2)
        s1, s2 = stft(wave(w1), cfg), stft(wave(w2), cfg)
        both = ComplexSpectrogram(s1.bins + s2.bins, cfg, num_samples=4096, sample_rate=SR)
        assert torch.allclose(istft(both).samples, w1 + w2, atol=1e-10)


class TestPowerSpectrogram:
    def test_zero(self, cfg):
        p = power_spectrogram(wave(torch.zeros(2048)), cfg)
        assert torch.all(p.bins == 0)

    def test_matches_squared_magnitude(self, cfg):
        w = wave(rand_wave(2048, seed=3))
        p = power_spectrogram(w, cfg)
        assert torch.equal(p.bins, stft(w, cfg).bins.abs() ** 2)

    def test_amplitude_scaling_squares(self, cfg):
        w = rand_wave(2048, seed=4)
        p1 = power_spectrogram(wave(w), cfg)
        p2 = power_spectrogram(wave(3.0 * w), cfg)
        assert torch.allclose(p2.bins, 9.0 * p1.bins)


class TestParseval:
    def test_energy_ratio_stable_and_near_window_constant(self, cfg):
        # onesided grids undercount: double every bin except DC and Nyquist
        win = torch.hann_window(cfg.win_length, periodic=True, dtype=torch.float64)
        expected = (win**2).sum().item() * cfg.fft_size / cfg.hop
        ratios = []
        for seed in range(5):
            w = rand_wave(64 * cfg.hop, seed=seed)
            b = stft(wave(w), cfg).bins.abs() ** 2
            total = 2 * b.sum() - b[0].sum() - b[-1].sum()
            ratios.append((total / (w**2).sum()).item())
        mean = sum(ratios) / len(ratios)
        assert all(abs(r - mean) / mean < 0.05 for r in ratios)
        assert abs(mean - expected) / expected < 0.10


class TestMelFilterbank:
    def test_every_bin_covered(self, cfg):
        fb = mel_filterbank(40, cfg, SR)
        assert torch.all(fb.sum(dim=0) > 0)

    def test_row_sums_positive(self, cfg):
        fb = mel_filterbank(40, cfg, SR)
        assert fb.shape == (40, 257)
        assert torch.all(fb.sum(dim=1) > 0)
        assert torch.all(fb >= 0)

    def test_flat_spectrum_gives_positive_mel_vector(self, cfg):
        # oracle: naive double loop matrix-vector product
        fb = mel_filterbank(24, cfg, SR, dtype=torch.float64)
        flat = torch.ones(257, dtype=torch.float64)
        naive = torch.tensor(
            [sum(fb[m, f].item() * flat[f].item() for f in range(257)) for m in range(24)],
            dtype=torch.float64,
        )
        out = fb @ flat
        assert torch.all(out > 0)
        assert torch.allclose(out, naive, rtol=1e-9)

    def test_too_many_mels_rejected(self, cfg):
        with pytest.raises(ConfigError):
            mel_filterbank(257, cfg, SR)


class TestWaveform:
    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(ShapeError):
            Waveform(torch.zeros(0), SR)
        with pytest.raises(ShapeError):
            Waveform(torch.tensor([1.0, float("nan")]), SR)
