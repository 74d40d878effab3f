"""Command-line surface: train, synth, sample-prior, evaluate, compare-iterations.

Every command is deterministic given --seed and its config (wall-clock RTF
excepted). Exit codes: 0 success, 1 usage/config errors, 2 unreadable data
paths, 3 empty evaluation intersection.
"""

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

import torch

from .audio import read_wav, write_wav
from .config import (
    PRESETS,
    RunConfig,
    config_from_dict,
    config_to_dict,
    dump_config,
    load_config,
)
from .dsp import Waveform
from .errors import ConfigError, PriorFitError
from .features import ConditionalFeature, load_feature_file, write_feature_file
from .metrics import MetricReport, MetricsConfig, evaluate_pair
from .seeding import derive_seed
from .training import (
    has_prior_parameters,
    load_checkpoint,
    prepare_dataset,
    prepare_pair,
    read_container,
    save_checkpoint,
    synthetic_corpus,
    train,
)
from .vocoder import synthesize

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_EMPTY = 3


class DataError(PriorFitError):
    """A user-supplied path is missing or unreadable."""


def _resolve_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        preset = getattr(args, "preset", "desk") or "desk"
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        cfg = PRESETS[preset]()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _metrics_config(cfg: RunConfig) -> MetricsConfig:
    return MetricsConfig(
        stft=cfg.stft_config(),
        mcd_mels=cfg.mcd_mels,
        mcd_order=cfg.mcd_order,
        f0_min=cfg.f0_min,
        f0_max=cfg.f0_max,
    )


def _load_wav_dir(path) -> dict:
    d = Path(path)
    if not d.is_dir():
        raise DataError(f"data directory not found: {d}")
    out = {p.name: read_wav(p) for p in sorted(d.glob("*.wav"))}
    if not out:
        raise DataError(f"no .wav files in {d}")
    return out


def _features_for(args, cfg: RunConfig) -> ConditionalFeature:
    if args.features:
        if not Path(args.features).is_file():
            raise DataError(f"feature file not found: {args.features}")
        return load_feature_file(args.features)
    if not Path(args.wav).is_file():
        raise DataError(f"wav file not found: {args.wav}")
    _, feat = prepare_pair(read_wav(args.wav), cfg)
    return feat


def _checkpoint_state(path):
    if not Path(path).is_file():
        raise DataError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    if args.resume:
        state = _checkpoint_state(args.resume)
        cfg = state.cfg
        if args.steps is not None:
            cfg = dataclasses.replace(cfg, steps=args.steps)
            state.cfg = cfg
    else:
        cfg = _resolve_config(args)
        if args.steps is not None:
            cfg = dataclasses.replace(cfg, steps=args.steps)
        state = None
    if args.dump_config:
        print(dump_config(cfg))
        return EXIT_OK
    if args.synthetic:
        waves = synthetic_corpus(cfg)
    else:
        if not args.data_dir:
            raise ConfigError("provide --synthetic or --data-dir")
        waves = list(_load_wav_dir(args.data_dir).values())
    dataset = prepare_dataset(waves, cfg)
    log_path = args.log or (str(args.out) + ".log.jsonl")

    def progress(report):
        if report["step"] % cfg.log_interval == 0:
            print(
                f"step {report['step']}: stft={report['stft']:.4f} "
                f"gan_g={report['gan_g']:.4f} guide={report['guide']:.4f}",
                file=sys.stderr,
            )

    state = train(dataset, cfg, log_path=log_path, state=state, progress=progress)
    save_checkpoint(state, args.out)
    print(f"checkpoint written to {args.out} (step {state.step})")
    return EXIT_OK


def cmd_synth(args) -> int:
    state = _checkpoint_state(args.checkpoint)
    cfg = state.cfg
    if args.dump_config:
        print(dump_config(cfg))
        return EXIT_OK
    mode = {"self": "self_gain", "reference": "reference_gain"}[args.mode]
    if mode == "reference_gain":
        _, tensors = read_container(args.checkpoint)
        if not has_prior_parameters(tensors):
            raise ConfigError(
                "checkpoint has no prior encoder parameters; use --mode self"
            )
    feat = _features_for(args, cfg)
    wave, trace = synthesize(
        feat,
        state.model,
        num_steps=args.steps,
        mode=mode,
        seed=args.seed,
        gain_cfg=cfg.gain_config(),
        sample_rate=cfg.sample_rate,
    )
    write_wav(args.out, wave)
    if args.dump_trace:
        trace_dir = Path(args.dump_trace)
        trace_dir.mkdir(parents=True, exist_ok=True)
        gains = []
        for step in trace.steps:
            write_wav(
                trace_dir / f"step_{step.t}.wav", Waveform(step.waveform, cfg.sample_rate)
            )
            gains.append({"t": step.t, "gain": step.gain})
        (trace_dir / "gains.json").write_text(json.dumps(gains, indent=2))
    print(f"wrote {args.out} ({len(wave)} samples, {args.steps} steps, mode {args.mode})")
    return EXIT_OK


def cmd_sample_prior(args) -> int:
    state = _checkpoint_state(args.checkpoint)
    cfg = state.cfg
    if args.dump_config:
        print(dump_config(cfg))
        return EXIT_OK
    feat = _features_for(args, cfg)
    from .prior import sample_noise_raw

    with torch.no_grad():
        c_up = state.model.upsample(feat.frames)
        sigma = state.model.prior_sigma(c_up, num_frames=c_up.shape[-2] + 1)
        noise = sample_noise_raw(
            sigma,
            cfg.stft_config(),
            derive_seed(args.seed, "noise"),
            c_up.shape[-2] * cfg.hop,
        )
    write_wav(args.out_wav, Waveform(noise, cfg.sample_rate))
    # variance map stored time-major (rows are frames), like feature files
    write_feature_file(
        args.out_sigma,
        ConditionalFeature(
            sigma.T.contiguous(),
            frame_rate=cfg.sample_rate / cfg.hop,
            source_tag="prior-sigma",
        ),
    )
    print(f"wrote {args.out_wav} and {args.out_sigma}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ref = _load_wav_dir(args.ref_dir)
    hyp = _load_wav_dir(args.hyp_dir)
    shared = sorted(set(ref) & set(hyp))
    for name in sorted(set(ref) ^ set(hyp)):
        print(f"warning: unpaired file skipped: {name}", file=sys.stderr)
    if not shared:
        print("error: no matching filenames between directories", file=sys.stderr)
        return EXIT_EMPTY
    cfg = _resolve_config(args)
    mcfg = _metrics_config(cfg)
    report = MetricReport(
        [evaluate_pair(name, ref[name], hyp[name], mcfg) for name in shared]
    )
    Path(args.out).write_text(report.to_json())
    print(f"wrote {args.out} ({len(shared)} utterances)")
    return EXIT_OK


def _parse_steps(spec: str) -> list[int]:
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in spec.split(",") if s]


def cmd_compare_iterations(args) -> int:
    state = _checkpoint_state(args.checkpoint)
    cfg = state.cfg
    waves = _load_wav_dir(args.data)
    pairs = {name: prepare_pair(w, cfg) for name, w in waves.items()}
    mcfg = _metrics_config(cfg)
    steps_list = _parse_steps(args.steps)
    if not steps_list or min(steps_list) < 1:
        raise ConfigError(f"invalid --steps {args.steps!r}")
    rows = []
    for num_steps in steps_list:
        for mode_name, mode in (("self", "self_gain"), ("reference", "reference_gain")):
            entries = []
            wall = 0.0
            audio_seconds = 0.0
            for i, (name, (ref, feat)) in enumerate(sorted(pairs.items())):
                t0 = time.perf_counter()
                out, _ = synthesize(
                    feat,
                    state.model,
                    num_steps=num_steps,
                    mode=mode,
                    seed=derive_seed(args.seed, "compare", num_steps, mode, i),
                    gain_cfg=cfg.gain_config(),
                    sample_rate=cfg.sample_rate,
                )
                wall += time.perf_counter() - t0
                audio_seconds += out.duration
                entries.append(evaluate_pair(name, ref, out, mcfg))
            summary = MetricReport(entries).summary()
            rows.append(
                {
                    "steps": num_steps,
                    "mode": mode_name,
                    "mcd": summary["mcd"],
                    "sc": summary["spectral_convergence"],
                    "snr": summary["snr"],
                    "rtf": wall / audio_seconds,
                }
            )
    with open(args.out, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["steps", "mode", "mcd", "sc", "snr", "rtf"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="priorfit",
        description="Vocoder with a trainable time-frequency prior and "
        "fixed-point iteration inference.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="JSON config file")
    t.add_argument("--preset", choices=sorted(PRESETS), default=None)
    t.add_argument("--synthetic", action="store_true", help="use the bundled corpus")
    t.add_argument("--data-dir", help="directory of mono 16-bit WAV files")
    t.add_argument("--out", required=True, help="output checkpoint path")
    t.add_argument("--log", help="JSON-lines training log path")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--steps", type=int, help="override total training steps")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--dump-config", action="store_true")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="synthesize a waveform")
    s.add_argument("--checkpoint", required=True)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--features", help="WTFF feature file")
    src.add_argument("--wav", help="WAV to condition on via the built-in extractor")
    s.add_argument("--mode", choices=["self", "reference"], default="reference")
    s.add_argument("--steps", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output WAV path")
    s.add_argument("--dump-trace", help="directory for per-iteration WAVs and gains")
    s.add_argument("--dump-config", action="store_true")
    s.set_defaults(func=cmd_synth)

    sp = sub.add_parser("sample-prior", help="draw initial noise from the prior")
    sp.add_argument("--checkpoint", required=True)
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--features", help="WTFF feature file")
    src.add_argument("--wav")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-wav", required=True)
    sp.add_argument("--out-sigma", required=True, help="variance map as a WTFF grid")
    sp.add_argument("--dump-config", action="store_true")
    sp.set_defaults(func=cmd_sample_prior)

    e = sub.add_parser("evaluate", help="score hypothesis WAVs against references")
    e.add_argument("--ref-dir", required=True)
    e.add_argument("--hyp-dir", required=True)
    e.add_argument("--out", required=True, help="JSON report path")
    e.add_argument("--config")
    e.add_argument("--preset", choices=sorted(PRESETS), default=None)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser(
        "compare-iterations", help="metrics and RTF per iteration count and mode"
    )
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--data", required=True, help="directory of reference WAVs")
    c.add_argument("--steps", default="1..5", help="e.g. 1..5 or 1,3,5")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True, help="CSV path")
    c.set_defaults(func=cmd_compare_iterations)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except PriorFitError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
