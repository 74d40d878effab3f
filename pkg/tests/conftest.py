import pytest
import torch

from priorfit.dsp import StftConfig


@pytest.fixture(scope="session")
def cfg() -> StftConfig:
    return StftConfig(fft_size=512, hop=128, win_length=512)


@pytest.fixture(scope="session")
def tiny_cfg() -> StftConfig:
    # fft_size 8 keeps hand-computed oracles cheap; hop 2 gives 75% overlap
    return StftConfig(fft_size=8, hop=2, win_length=8)


def rand_wave(n, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(n, generator=g, dtype=dtype)
