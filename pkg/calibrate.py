"""Calibration: desk-preset overfit run, reporting inference-path metrics."""
import json
import sys
import time

import torch

from priorfit.config import RunConfig
from priorfit.metrics import MetricsConfig, snr, spectral_convergence
from priorfit.seeding import derive_seed
from priorfit.training import (
    init_state, pick_batch, prepare_dataset, synthetic_corpus, train_step,
)
from priorfit.vocoder import synthesize
from priorfit.dsp import Waveform


def eval_inference(state, data, cfg, n_seeds=1):
    mcfg = MetricsConfig(stft=cfg.stft_config())
    scs, snrs = [], []
    for i, (w, c) in enumerate(data):
        for s in range(n_seeds):
            out, _ = synthesize(
                c, state.model, cfg.num_steps, "reference_gain",
                seed=derive_seed(123, "eval", i, s),
                gain_cfg=cfg.gain_config(), sample_rate=cfg.sample_rate,
            )
            scs.append(spectral_convergence(w, out, mcfg))
            snrs.append(snr(w, out))
    return sum(scs) / len(scs), sum(snrs) / len(snrs), max(scs), min(snrs)


def main():
    overrides = json.loads(sys.argv[1]) if len(sys.argv) > 1 else {}
    total = overrides.pop("_total", 3000)
    every = overrides.pop("_every", 250)
    cfg = RunConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in overrides.items()})
    data = prepare_dataset(synthetic_corpus(cfg), cfg)
    state = init_state(cfg)
    t0 = time.perf_counter()
    for s in range(total):
        r = train_step(pick_batch(data, cfg, s), state)
        if (s + 1) % every == 0:
            sc, sn, sc_max, sn_min = eval_inference(state, data, cfg)
            mins = (time.perf_counter() - t0) / 60
            print(
                f"[{mins:6.1f} min] step {s+1}: stft={r['stft']:.3f} "
                f"guide={r['guide']:.1f} pm={r['pm']:.0f} fm={r['feat_match']:.3f} | "
                f"SC mean={sc:.3f} max={sc_max:.3f}  SNR mean={sn:.1f} min={sn_min:.1f} dB",
                flush=True,
            )
    print(f"done in {(time.perf_counter()-t0)/60:.1f} min")


if __name__ == "__main__":
    main()
