"""Joint training of the denoiser, variance encoders, and discriminators.

One trainer owns all mutable state. Every random draw is derived from
(root seed, purpose, step counters), so two runs with the same config produce
identical loss sequences and a resumed run is bit-identical to an unbroken
one. Checkpoints are versioned binary containers holding a JSON config block
and named float32 tensors.
"""

import io
import json
import math
import struct
import time
from dataclasses import dataclass, field

import torch

from .config import RunConfig, config_from_dict, config_to_dict
from .dsp import Waveform, stft_raw
from .errors import FormatError, TrainingError
from .features import ConditionalFeature, pseudo_ssl
from .gain import GainConfig
from .losses import (
    MultiScaleDiscriminator,
    gan_losses,
    guide_loss,
    prior_matching_loss,
    stft_loss,
)
from .prior import sample_noise_raw
from .seeding import derive_seed, generator
from .vocoder import VocoderModel, iterate_batch, synthesize

WTFC_MAGIC = b"WTFC"
WTFC_VERSION = 1


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def synthetic_utterance(cfg: RunConfig, index: int, seed: int) -> Waveform:
    """Multi-sinusoid plus filtered noise, frequencies locked to the frame grid."""
    g = generator(derive_seed(seed, "corpus", index))
    d = cfg.corpus_samples
    sr = cfg.sample_rate
    base = sr / cfg.hop  # frequencies are multiples of the per-frame rate
    n_sines = int(torch.randint(2, 5, (1,), generator=g))
    max_mult = int(min(24, (cfg.f0_max * 6) // base))
    mults = torch.randperm(max_mult - 1, generator=g)[:n_sines] + 2
    n = torch.arange(d, dtype=torch.float64)
    x = torch.zeros(d, dtype=torch.float64)
    for m in mults:
        amp = 0.3 + 0.7 * torch.rand(1, generator=g, dtype=torch.float64)
        phase = 2 * math.pi * torch.rand(1, generator=g, dtype=torch.float64)
        x += amp * torch.sin(2 * math.pi * (m.item() * base) * n / sr + phase)
    noise = torch.randn(d + 8, generator=g, dtype=torch.float64)
    smooth = torch.nn.functional.avg_pool1d(noise[None, None], 9, stride=1)[0, 0]
    gain = 10 ** (cfg.corpus_noise_db / 20) * x.std() / smooth.std()
    x = x + gain * smooth
    x = 0.8 * x / x.abs().max()
    return Waveform(x.to(torch.float32), sr)


def synthetic_corpus(cfg: RunConfig) -> list[Waveform]:
    return [
        synthetic_utterance(cfg, i, cfg.seed) for i in range(cfg.corpus_utterances)
    ]


def prepare_pair(w: Waveform, cfg: RunConfig) -> tuple[Waveform, ConditionalFeature]:
    """Crop to the feature grid and extract conditioning for one utterance.

    The waveform is truncated to a whole number of feature frames and the
    trailing center-pad frame is dropped, so len(x0) always equals
    frames * total upsampling.
    """
    unit = 2 * cfg.hop
    d = (len(w) // unit) * unit
    if d == 0:
        raise TrainingError(f"utterance too short: {len(w)} < {unit} samples")
    w = Waveform(w.samples[:d], w.sample_rate)
    feats = pseudo_ssl(w, cfg.n_mels, cfg.feature_stft_config())
    frames = feats.frames[: d // unit]
    return w, ConditionalFeature(frames, feats.frame_rate, feats.source_tag)


def prepare_dataset(waves, cfg: RunConfig):
    return [prepare_pair(w, cfg) for w in waves]


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

@dataclass
class TrainerState:
    cfg: RunConfig
    model: VocoderModel
    disc: MultiScaleDiscriminator
    opt_gen: torch.optim.Adam
    opt_disc: torch.optim.Adam
    step: int = 0

    @property
    def gain_cfg(self) -> GainConfig:
        return self.cfg.gain_config()


def init_state(cfg: RunConfig) -> TrainerState:
    torch.manual_seed(derive_seed(cfg.seed, "init", "model"))
    model = VocoderModel(cfg.model_config())
    torch.manual_seed(derive_seed(cfg.seed, "init", "disc"))
    disc = MultiScaleDiscriminator(
        cfg.disc_scales, cfg.disc_channels, cfg.disc_strided_layers
    )
    opt_gen = torch.optim.Adam(model.parameters(), lr=cfg.lr_gen, betas=(0.8, 0.99))
    opt_disc = torch.optim.Adam(disc.parameters(), lr=cfg.lr_disc, betas=(0.8, 0.99))
    return TrainerState(cfg, model, disc, opt_gen, opt_disc)


def _lr_at(base: float, step: int, total: int) -> float:
    """Cosine decay from base to base/10 over the configured run length."""
    frac = min(step / max(total, 1), 1.0)
    return base * (0.55 + 0.45 * math.cos(math.pi * frac))


def _check_finite(name: str, value: torch.Tensor, step: int):
    if not torch.isfinite(value):
        raise TrainingError(f"non-finite {name} loss at step {step}")


def train_step(batch, state: TrainerState) -> dict:
    """One alternating discriminator/generator update on a list of pairs."""
    cfg = state.cfg
    stft_cfg = cfg.stft_config()
    mr = cfg.mr_config()
    weights = cfg.loss_weights()
    step = state.step

    x0 = torch.stack([w.samples for w, _ in batch])
    cond = torch.stack([c.frames for _, c in batch])

    c_up = state.model.upsample(cond)
    x0_power = stft_raw(x0, stft_cfg).abs() ** 2
    sigma_post = state.model.posterior_sigma(c_up, x0_power)
    y_t = torch.stack(
        [
            sample_noise_raw(
                sigma_post[i],
                stft_cfg,
                derive_seed(cfg.seed, "noise", step, i),
                x0.shape[1],
            )
            for i in range(x0.shape[0])
        ]
    )
    outs, _ = iterate_batch(
        y_t, c_up, cfg.num_steps, "reference_gain", sigma_post,
        state.model.denoiser, state.gain_cfg,
    )
    sigma_prior = state.model.prior_sigma(c_up, num_frames=x0_power.shape[-1])

    stacked = torch.stack(outs)  # (T, B, D)
    x_rep = x0.expand(stacked.shape)

    # discriminator half-step on detached outputs
    for group in state.opt_disc.param_groups:
        group["lr"] = _lr_at(cfg.lr_disc, step, cfg.steps)
    _, disc_total, _ = gan_losses(x_rep, stacked.detach(), state.disc, weights.lambda_feat)
    _check_finite("gan_d", disc_total, step)
    state.opt_disc.zero_grad()
    disc_total.backward()
    state.opt_disc.step()
    disc_total = disc_total.detach()

    # generator half-step against the updated discriminator
    for group in state.opt_gen.param_groups:
        group["lr"] = _lr_at(cfg.lr_gen, step, cfg.steps)
    gen_adv_fm, _, fm = gan_losses(x_rep, stacked, state.disc, weights.lambda_feat)
    spec = stft_loss(x_rep, stacked, mr)
    pm = prior_matching_loss(sigma_post, sigma_prior)
    guide = guide_loss(sigma_post, x0_power, weights.lambda_guide)
    gen_total = gen_adv_fm + weights.lambda_stft * spec + weights.lambda_pm * pm + guide
    for name, value in (
        ("gan_g", gen_adv_fm), ("stft", spec), ("pm", pm), ("guide", guide),
    ):
        _check_finite(name, value, step)
    state.opt_gen.zero_grad()
    gen_total.backward()
    state.opt_gen.step()

    state.step += 1
    return {
        "step": step,
        "gan_g": float((gen_adv_fm - weights.lambda_feat * fm).detach()),
        "gan_d": float(disc_total),
        "stft": float(spec),
        "feat_match": float(fm),
        "pm": float(pm),
        "guide": float(guide),
        "gen_total": float(gen_total),
        "disc_total": float(disc_total),
        "lr": _lr_at(cfg.lr_gen, step, cfg.steps),
    }


def forward_losses(batch, state: TrainerState, step: int = 0):
    """Pure forward pass of the full objective against the current networks.

    No parameter updates; used for gradient diagnostics. Same noise seeds as
    train_step at the given step counter.
    """
    from .losses import total_loss

    cfg = state.cfg
    stft_cfg = cfg.stft_config()
    x0 = torch.stack([w.samples for w, _ in batch])
    cond = torch.stack([c.frames for _, c in batch])
    c_up = state.model.upsample(cond)
    x0_power = stft_raw(x0, stft_cfg).abs() ** 2
    sigma_post = state.model.posterior_sigma(c_up, x0_power)
    y_t = torch.stack(
        [
            sample_noise_raw(
                sigma_post[i], stft_cfg,
                derive_seed(cfg.seed, "noise", step, i), x0.shape[1],
            )
            for i in range(x0.shape[0])
        ]
    )
    outs, _ = iterate_batch(
        y_t, c_up, cfg.num_steps, "reference_gain", sigma_post,
        state.model.denoiser, state.gain_cfg,
    )
    sigma_prior = state.model.prior_sigma(c_up, num_frames=x0_power.shape[-1])
    return total_loss(
        x0, outs, sigma_post, sigma_prior, x0_power,
        state.disc, cfg.mr_config(), cfg.loss_weights(),
    )


def pick_batch(dataset, cfg: RunConfig, step: int):
    g = generator(derive_seed(cfg.seed, "batch", step))
    idx = torch.randint(len(dataset), (cfg.batch_size,), generator=g)
    return [dataset[i] for i in idx.tolist()]


def validation_report(dataset, state: TrainerState, max_items: int = 2) -> dict:
    mr = state.cfg.mr_config()
    dists = []
    for w, c in dataset[:max_items]:
        out, _ = synthesize(
            c, state.model, state.cfg.num_steps, "reference_gain",
            seed=derive_seed(state.cfg.seed, "val", state.step),
            gain_cfg=state.gain_cfg, sample_rate=w.sample_rate,
        )
        n = min(len(out), len(w))
        dists.append(float(stft_loss(w.samples[:n], out.samples[:n], mr)))
    return {"step": state.step, "val_stft": sum(dists) / len(dists)}


def train(dataset, cfg: RunConfig, log_path=None, state: TrainerState | None = None,
          progress=None) -> TrainerState:
    """Run (or continue) training to cfg.steps, logging JSON lines per step."""
    if not dataset:
        raise TrainingError("empty dataset")
    if state is None:
        state = init_state(cfg)
    log_f = open(log_path, "a") if log_path else None
    try:
        while state.step < cfg.steps:
            report = train_step(pick_batch(dataset, cfg, state.step), state)
            if log_f:
                log_f.write(json.dumps(report) + "\n")
                if cfg.val_interval and state.step % cfg.val_interval == 0:
                    log_f.write(json.dumps(validation_report(dataset, state)) + "\n")
            if progress:
                progress(report)
        if log_f:
            log_f.flush()
    finally:
        if log_f:
            log_f.close()
    return state


# ---------------------------------------------------------------------------
# checkpoint container (versioned binary, little-endian)
# ---------------------------------------------------------------------------

def write_container(path, config_doc: dict, tensors: dict) -> None:
    """magic | version u32 | json_len u32 | json | count u32 | entries.

    Entry: name_len u16, name, ndim u8, dims u32 each, float32 data.
    """
    buf = io.BytesIO()
    blob = json.dumps(config_doc, sort_keys=True).encode()
    buf.write(WTFC_MAGIC)
    buf.write(struct.pack("<II", WTFC_VERSION, len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(tensors)))
    for name, tensor in tensors.items():
        t = tensor.detach().to(torch.float32).contiguous()
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(t.numpy().tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def read_container(path) -> tuple[dict, dict]:
    raw = open(path, "rb").read()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(raw):
            raise FormatError(f"{path}: truncated while reading {what}", offset=off)
        out = raw[off : off + n]
        off += n
        return out

    if take(4, "magic") != WTFC_MAGIC:
        raise FormatError(f"{path}: bad magic", offset=0)
    version, json_len = struct.unpack("<II", take(8, "header"))
    if version != WTFC_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    config_doc = json.loads(take(json_len, "config block"))
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode()
        (ndim,) = struct.unpack("<B", take(1, "ndim"))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, "dims"))
        numel = math.prod(dims) if dims else 1
        data = take(4 * numel, f"tensor {name}")
        tensors[name] = (
            torch.frombuffer(bytearray(data), dtype=torch.float32)
            .reshape(dims)
            .clone()
        )
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes", offset=off)
    return config_doc, tensors


def _optimizer_tensors(opt, params_named, prefix) -> dict:
    out = {}
    for name, p in params_named:
        st = opt.state.get(p)
        if not st:
            continue
        out[f"{prefix}.{name}.step"] = torch.as_tensor(st["step"], dtype=torch.float32).reshape(())
        out[f"{prefix}.{name}.exp_avg"] = st["exp_avg"]
        out[f"{prefix}.{name}.exp_avg_sq"] = st["exp_avg_sq"]
    return out


def _load_optimizer_tensors(opt, params_named, prefix, tensors):
    for name, p in params_named:
        key = f"{prefix}.{name}.step"
        if key not in tensors:
            continue
        opt.state[p] = {
            "step": tensors[key].reshape(()).clone(),
            "exp_avg": tensors[f"{prefix}.{name}.exp_avg"].reshape(p.shape).clone(),
            "exp_avg_sq": tensors[f"{prefix}.{name}.exp_avg_sq"].reshape(p.shape).clone(),
        }


def save_checkpoint(state: TrainerState, path) -> None:
    doc = {
        "kind": "trainer-checkpoint",
        "step": state.step,
        "config": config_to_dict(state.cfg),
    }
    tensors = {}
    for name, p in state.model.state_dict().items():
        tensors[f"model.{name}"] = p
    for name, p in state.disc.state_dict().items():
        tensors[f"disc.{name}"] = p
    tensors.update(
        _optimizer_tensors(state.opt_gen, list(state.model.named_parameters()), "opt_g")
    )
    tensors.update(
        _optimizer_tensors(state.opt_disc, list(state.disc.named_parameters()), "opt_d")
    )
    write_container(path, doc, tensors)


def load_checkpoint(path) -> TrainerState:
    doc, tensors = read_container(path)
    if doc.get("kind") != "trainer-checkpoint":
        raise FormatError(f"{path}: not a trainer checkpoint")
    cfg = config_from_dict(doc["config"])
    state = init_state(cfg)
    state.step = int(doc["step"])

    def group(prefix):
        plen = len(prefix) + 1
        return {k[plen:]: v for k, v in tensors.items() if k.startswith(prefix + ".")}

    model_sd = group("model")
    if not any(k.startswith("denoiser.") for k in model_sd):
        raise FormatError(f"{path}: checkpoint holds no denoiser parameters")
    expected = state.model.state_dict()
    # partial checkpoints (e.g. prior-free baselines) keep missing groups at init
    state.model.load_state_dict(
        {k: v.reshape(expected[k].shape) for k, v in model_sd.items()}, strict=False
    )
    disc_sd = group("disc")
    expected_d = state.disc.state_dict()
    state.disc.load_state_dict(
        {k: v.reshape(expected_d[k].shape) for k, v in disc_sd.items()}, strict=False
    )
    _load_optimizer_tensors(
        state.opt_gen, list(state.model.named_parameters()), "opt_g", tensors
    )
    _load_optimizer_tensors(
        state.opt_disc, list(state.disc.named_parameters()), "opt_d", tensors
    )
    return state


def has_prior_parameters(tensors_or_state) -> bool:
    if isinstance(tensors_or_state, dict):
        return any(k.startswith("model.prior_encoder.") for k in tensors_or_state)
    return True
