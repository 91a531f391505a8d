"""Any-to-one singing voice conversion.

Recognition-synthesis design: a content encoder and a melody encoder
feed a decoder that predicts the target singer's 80-band log-mel
spectrogram.  The melody encoder ends in conditional instance
normalization, which re-statistics whatever melody features arrive into
the single target's distribution; that is what makes the system
any-to-one.

Training is adversarial with three least-squares discriminators:

* real/fake on mel: reconstructions of target-singer clips must look
  like real target mel,
* conversion on mel: conversions from out-of-set sources must be
  indistinguishable from target mel,
* embedding: melody embeddings of out-of-set sources must match the
  distribution of target embeddings.

plus an L1 reconstruction loss on target-singer clips.  Out-of-set
batches are unpaired (no mel target); when the out-set is empty the
conversion and embedding terms are skipped with a warning.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import torch
from torch import nn

from .audio import AudioClip
from .config import SvcConfig
from .content import ContentProvider
from .dsp import HOP_SAMPLES, MelSpectrogram, frame_count, mel_spectrogram, rms_energy
from .errors import (
    CompatibilityError,
    DataError,
    ParameterError,
    ShapeError,
)
from .labeling import label_clip
from .melody import (
    ENERGY_FLOOR,
    PITCH_REF_HZ,
    MelodyExtractor,
    export_features,
)
from .pitch import FrameTrack

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1
N_MELS = 80


class ConditionalInstanceNorm(nn.Module):
    """Instance normalization with learned target-conditioned affine.

    Normalizes each channel over time per sample (population variance,
    eps 1e-5), then applies the target singer's learned scale and
    shift.  Output statistics therefore depend on the target identity,
    not the source.
    """

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.scale = nn.Parameter(torch.ones(dim))
        self.shift = nn.Parameter(torch.zeros(dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 3:
            raise ShapeError(f"expected (batch, frames, dim), got {tuple(x.shape)}")
        if x.shape[1] < 2:
            raise DataError("instance normalization needs at least 2 frames")
        mean = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        normed = (x - mean) / torch.sqrt(var + self.eps)
        return normed * self.scale + self.shift


def _stack(cfg: SvcConfig, blocks: int) -> "FFTStack":
    from .blocks import FFTStack

    return FFTStack(blocks, cfg.dim, heads=cfg.heads, kernel=cfg.kernel, ff_dim=cfg.ff_dim, dropout=cfg.dropout)


class MelodyEncoder(nn.Module):
    """Melody features -> target-normalized melody embeddings."""

    def __init__(self, in_dim: int, cfg: SvcConfig):
        super().__init__()
        self.proj = nn.Linear(in_dim, cfg.dim)
        self.stack = _stack(cfg, cfg.enc_blocks)
        self.cin = ConditionalInstanceNorm(cfg.dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.cin(self.stack(self.proj(x)))


class ContentEncoder(nn.Module):
    """Content features -> content embeddings."""

    def __init__(self, in_dim: int, cfg: SvcConfig):
        super().__init__()
        self.proj = nn.Linear(in_dim, cfg.dim)
        self.stack = _stack(cfg, cfg.enc_blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.stack(self.proj(x))


class Decoder(nn.Module):
    """Concatenated embeddings -> standardized log-mel frames."""

    def __init__(self, cfg: SvcConfig, n_mels: int = N_MELS):
        super().__init__()
        self.proj = nn.Linear(2 * cfg.dim, cfg.dim)
        self.stack = _stack(cfg, cfg.dec_blocks)
        self.out = nn.Linear(cfg.dim, n_mels)

    def forward(self, melody_emb: torch.Tensor, content_emb: torch.Tensor) -> torch.Tensor:
        x = torch.cat([melody_emb, content_emb], dim=-1)
        return self.out(self.stack(self.proj(x)))


class SvcGenerator(nn.Module):
    """Melody encoder + content encoder + decoder."""

    def __init__(self, melody_in_dim: int, content_in_dim: int, cfg: SvcConfig):
        super().__init__()
        self.melody_encoder = MelodyEncoder(melody_in_dim, cfg)
        self.content_encoder = ContentEncoder(content_in_dim, cfg)
        self.decoder = Decoder(cfg)

    def forward(self, melody_in: torch.Tensor, content_in: torch.Tensor):
        melody_emb = self.melody_encoder(melody_in)
        content_emb = self.content_encoder(content_in)
        return self.decoder(melody_emb, content_emb), melody_emb


class ConvDiscriminator(nn.Module):
    """1-D convolutional least-squares discriminator over (B, T, C)."""

    def __init__(self, in_channels: int, channels: tuple[int, ...] = (64, 128)):
        super().__init__()
        layers: list[nn.Module] = []
        prev = in_channels
        for ch in channels:
            layers += [nn.Conv1d(prev, ch, 5, stride=2, padding=2), nn.LeakyReLU(0.2)]
            prev = ch
        layers.append(nn.Conv1d(prev, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x.transpose(1, 2)).mean(dim=(1, 2))


class SvcSystem(nn.Module):
    """Generator plus the three discriminators, trained together."""

    def __init__(self, melody_in_dim: int, content_in_dim: int, cfg: SvcConfig):
        super().__init__()
        self.cfg = cfg
        self.generator = SvcGenerator(melody_in_dim, content_in_dim, cfg)
        self.disc_real_fake = ConvDiscriminator(N_MELS)
        self.disc_conversion = ConvDiscriminator(N_MELS)
        self.disc_embedding = ConvDiscriminator(cfg.dim)

    def discriminator_parameters(self):
        for module in (self.disc_real_fake, self.disc_conversion, self.disc_embedding):
            yield from module.parameters()


def _mse_to(scores: torch.Tensor, target: float) -> torch.Tensor:
    return torch.mean((scores - target) ** 2)


def discriminator_step(
    system: SvcSystem,
    opt_d: torch.optim.Optimizer,
    real_mel: torch.Tensor,
    recon_mel: torch.Tensor,
    conv_mel: torch.Tensor | None,
    emb_in: torch.Tensor,
    emb_out: torch.Tensor | None,
) -> dict[str, float]:
    """One least-squares update of the three discriminators.

    Generator outputs must arrive detached; only discriminator
    parameters change here.
    """
    d_rf = 0.5 * (_mse_to(system.disc_real_fake(real_mel), 1.0) + _mse_to(system.disc_real_fake(recon_mel), 0.0))
    parts = {"disc_rf": float(d_rf.detach())}
    loss = d_rf
    if conv_mel is not None:
        d_cv = 0.5 * (
            _mse_to(system.disc_conversion(real_mel), 1.0)
            + _mse_to(system.disc_conversion(conv_mel), 0.0)
        )
        d_emb = 0.5 * (
            _mse_to(system.disc_embedding(emb_in), 1.0)
            + _mse_to(system.disc_embedding(emb_out), 0.0)
        )
        loss = loss + d_cv + d_emb
        parts["disc_cv"] = float(d_cv.detach())
        parts["disc_emb"] = float(d_emb.detach())
    opt_d.zero_grad(set_to_none=True)
    loss.backward()
    opt_d.step()
    return parts


def generator_step(
    system: SvcSystem,
    opt_g: torch.optim.Optimizer,
    mel_target: torch.Tensor,
    recon_mel: torch.Tensor,
    conv_mel: torch.Tensor | None,
    emb_out: torch.Tensor | None,
) -> dict[str, float]:
    """One generator update: reconstruction plus adversarial terms."""
    cfg = system.cfg
    # Frame-vector L1 (sum over mel bins, mean over frames): keeps the
    # reconstruction term an order of magnitude above the adversarial
    # terms at the default weights, which is what makes the game stable.
    recon = torch.abs(recon_mel - mel_target).sum(dim=-1).mean()
    g_rf = _mse_to(system.disc_real_fake(recon_mel), 1.0)
    loss = recon + cfg.adv_rf * g_rf
    parts = {"recon_l1": float(recon.detach()), "gen_rf": float(g_rf.detach())}
    if conv_mel is not None:
        g_cv = _mse_to(system.disc_conversion(conv_mel), 1.0)
        g_emb = _mse_to(system.disc_embedding(emb_out), 1.0)
        loss = loss + cfg.adv_cv * g_cv + cfg.adv_emb * g_emb
        parts["gen_cv"] = float(g_cv.detach())
        parts["gen_emb"] = float(g_emb.detach())
    opt_g.zero_grad(set_to_none=True)
    loss.backward()
    opt_g.step()
    return parts


def adversarial_step(
    system: SvcSystem,
    opt_g: torch.optim.Optimizer,
    opt_d: torch.optim.Optimizer,
    in_batch: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
    out_batch: tuple[torch.Tensor, torch.Tensor] | None,
) -> dict[str, float]:
    """One full alternation: forward, discriminator update, generator update.

    ``in_batch`` is ``(mel_target, melody_in, content_in)`` from the
    target singer; ``out_batch`` is ``(melody_in, content_in)`` from
    other singers (unpaired).  Returns every loss component by name.
    """
    mel_target, melody_in, content_in = in_batch
    recon_mel, emb_in = system.generator(melody_in, content_in)
    conv_mel = emb_out = None
    if out_batch is not None:
        melody_out, content_out = out_batch
        conv_mel, emb_out = system.generator(melody_out, content_out)

    parts = discriminator_step(
        system,
        opt_d,
        mel_target,
        recon_mel.detach(),
        None if conv_mel is None else conv_mel.detach(),
        emb_in.detach(),
        None if emb_out is None else emb_out.detach(),
    )
    parts.update(generator_step(system, opt_g, mel_target, recon_mel, conv_mel, emb_out))
    return parts


# -- training data preparation ----------------------------------------------


@dataclass
class SvcSample:
    """Precomputed frame streams for one clip, all length ``frames``."""

    mel_norm: np.ndarray | None
    melody_in: np.ndarray
    content: np.ndarray
    key: str

    @property
    def frames(self) -> int:
        return self.melody_in.shape[0]


@dataclass
class MelStats:
    """Per-band mel standardization fitted on the target singer."""

    mean: np.ndarray
    std: np.ndarray

    def normalize(self, mel: np.ndarray) -> np.ndarray:
        return (mel - self.mean) / self.std

    def denormalize(self, mel: np.ndarray) -> np.ndarray:
        return mel * self.std + self.mean


@dataclass
class RawMelodyStats:
    """Standardization for the raw pitch/energy/voicing melody input."""

    pitch_mean: float
    pitch_std: float
    energy_mean: float
    energy_std: float


def fit_mel_stats(mels: Iterable[np.ndarray]) -> MelStats:
    stacked = np.concatenate([np.asarray(m) for m in mels], axis=0)
    return MelStats(stacked.mean(axis=0), np.maximum(stacked.std(axis=0), 1e-6))


def raw_melody_input(
    clip: AudioClip, stats: RawMelodyStats, track: FrameTrack | None = None
) -> np.ndarray:
    """Oracle pitch/energy/voicing as a (frames, 3) melody stream."""
    if track is None:
        track = label_clip(clip)
    energy = np.log(np.maximum(rms_energy(clip).values, ENERGY_FLOOR))
    n = min(len(track), energy.shape[0])
    with np.errstate(divide="ignore"):
        pitch = np.where(
            track.vuv[:n], np.log2(np.maximum(track.f0_hz[:n], 1e-6) / PITCH_REF_HZ), 0.0
        )
    pitch = np.where(track.vuv[:n], (pitch - stats.pitch_mean) / stats.pitch_std, 0.0)
    out = np.stack(
        [pitch, (energy[:n] - stats.energy_mean) / stats.energy_std, track.vuv[:n].astype(np.float64)],
        axis=1,
    )
    return out.astype(np.float32)


def prepare_svc_samples(
    clips: list[AudioClip],
    melody_model: MelodyExtractor | None,
    content_provider: ContentProvider,
    mel_stats: MelStats | None,
    raw_stats: RawMelodyStats | None,
    melody_input: str,
    with_mel: bool,
    labels: dict[str, FrameTrack] | None = None,
    keys: list[str] | None = None,
) -> list[SvcSample]:
    """Precompute aligned frame streams for every clip.

    ``melody_input`` selects extractor features (``"features"``) or the
    oracle pitch/energy/voicing baseline (``"raw"``).
    """
    samples = []
    for i, clip in enumerate(clips):
        key = keys[i] if keys else clip.source_id
        if melody_input == "features":
            if melody_model is None:
                raise ParameterError("melody_input='features' requires a melody checkpoint")
            melody_in = export_features(melody_model, clip).frames
        elif melody_input == "raw":
            if raw_stats is None:
                raise ParameterError("melody_input='raw' requires raw melody statistics")
            track = labels.get(key) if labels else None
            melody_in = raw_melody_input(clip, raw_stats, track)
        else:
            raise ParameterError(f"unknown melody_input '{melody_input}'")
        content = content_provider.features(clip)
        n = min(melody_in.shape[0], content.shape[0])
        mel_norm = None
        if with_mel:
            if mel_stats is None:
                raise ParameterError("mel statistics are required for paired samples")
            mel = mel_spectrogram(clip).frames
            n = min(n, mel.shape[0])
            mel_norm = mel_stats.normalize(mel[:n]).astype(np.float32)
        samples.append(
            SvcSample(mel_norm, melody_in[:n].astype(np.float32), content[:n].astype(np.float32), key)
        )
    return samples


def _crop_batch(
    samples: list[SvcSample],
    crop: int,
    batch_size: int,
    rng: np.random.Generator,
    with_mel: bool,
):
    melody = np.empty((batch_size, crop, samples[0].melody_in.shape[1]), dtype=np.float32)
    content = np.empty((batch_size, crop, samples[0].content.shape[1]), dtype=np.float32)
    mel = np.empty((batch_size, crop, N_MELS), dtype=np.float32) if with_mel else None
    for b in range(batch_size):
        s = samples[int(rng.integers(len(samples)))]
        start = int(rng.integers(s.frames - crop + 1))
        melody[b] = s.melody_in[start : start + crop]
        content[b] = s.content[start : start + crop]
        if with_mel:
            mel[b] = s.mel_norm[start : start + crop]
    out = [torch.from_numpy(melody), torch.from_numpy(content)]
    if with_mel:
        out.insert(0, torch.from_numpy(mel))
    return out


def train_svc(
    in_samples: list[SvcSample],
    out_samples: list[SvcSample],
    cfg: SvcConfig,
    mel_stats: MelStats,
    raw_stats: RawMelodyStats | None = None,
    melody_ref: dict | None = None,
    seed: int = 17,
    steps: int | None = None,
    callbacks: Iterable = (),
    content_spec: str = "stub",
) -> dict:
    """Train the conversion system and return its checkpoint dict.

    ``melody_ref`` records the digest and condition of the melody
    checkpoint whose features the samples were computed with, so
    conversion can verify it gets the same extractor back.
    """
    if not in_samples:
        raise ParameterError("target-singer training set is empty")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    melody_dim = in_samples[0].melody_in.shape[1]
    content_dim = in_samples[0].content.shape[1]
    system = SvcSystem(melody_dim, content_dim, cfg)
    system.train()
    opt_g = torch.optim.AdamW(
        system.generator.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay
    )
    opt_d = torch.optim.AdamW(
        system.discriminator_parameters(), lr=cfg.disc_lr, weight_decay=cfg.weight_decay
    )
    if not out_samples:
        log.warning(
            "out-of-set pool is empty: conversion and embedding losses are skipped"
        )

    total_steps = cfg.steps if steps is None else steps
    crop = min(cfg.crop_frames, min(s.frames for s in in_samples))
    if out_samples:
        crop = min(crop, min(s.frames for s in out_samples))
    if crop < 2:
        raise DataError("training clips are too short for instance normalization")
    history = []
    for step in range(total_steps):
        mel_t, melody_in, content_in = _crop_batch(in_samples, crop, cfg.batch_size, rng, True)
        out_batch = None
        if out_samples:
            melody_out, content_out = _crop_batch(out_samples, crop, cfg.batch_size, rng, False)
            out_batch = (melody_out, content_out)
        parts = adversarial_step(system, opt_g, opt_d, (mel_t, melody_in, content_in), out_batch)
        if step % cfg.log_every == 0 or step == total_steps - 1:
            history.append({"step": step, **parts})
            log.info("svc step %d: %s", step, parts)
        for callback in callbacks:
            callback(step, system, parts)

    system.eval()
    return {
        "schema_version": CHECKPOINT_SCHEMA,
        "kind": "svc",
        "melody_input": cfg.melody_input,
        "content": content_spec,
        "melody_in_dim": melody_dim,
        "content_in_dim": content_dim,
        "arch": {
            "dim": cfg.dim,
            "enc_blocks": cfg.enc_blocks,
            "dec_blocks": cfg.dec_blocks,
            "heads": cfg.heads,
            "kernel": cfg.kernel,
            "ff_dim": cfg.ff_dim,
            "dropout": cfg.dropout,
        },
        "train": {"steps": total_steps, "seed": seed},
        "state_dict": system.state_dict(),
        "mel_mean": mel_stats.mean,
        "mel_std": mel_stats.std,
        "raw_stats": None
        if raw_stats is None
        else {
            "pitch_mean": raw_stats.pitch_mean,
            "pitch_std": raw_stats.pitch_std,
            "energy_mean": raw_stats.energy_mean,
            "energy_std": raw_stats.energy_std,
        },
        "melody_ref": melody_ref,
        "loss_history": history,
    }


def system_from_checkpoint(ckpt: dict) -> tuple[SvcSystem, MelStats, RawMelodyStats | None]:
    """Rebuild the conversion system exactly as trained (eval mode)."""
    if ckpt.get("kind") != "svc":
        raise CompatibilityError(f"expected an svc checkpoint, got '{ckpt.get('kind')}'")
    import dataclasses

    cfg = dataclasses.replace(SvcConfig(), melody_input=ckpt["melody_input"], **ckpt["arch"])
    system = SvcSystem(ckpt["melody_in_dim"], ckpt["content_in_dim"], cfg)
    system.load_state_dict(ckpt["state_dict"])
    system.eval()
    stats = MelStats(np.asarray(ckpt["mel_mean"]), np.asarray(ckpt["mel_std"]))
    raw = ckpt.get("raw_stats")
    raw_stats = None if raw is None else RawMelodyStats(**raw)
    return system, stats, raw_stats


def convert(
    clip: AudioClip,
    system: SvcSystem,
    mel_stats: MelStats,
    melody_model: MelodyExtractor | None = None,
    content_provider: ContentProvider | None = None,
    melody_input: str = "features",
    raw_stats: RawMelodyStats | None = None,
) -> MelSpectrogram:
    """Convert a source clip to the target singer's mel spectrogram.

    The output grid matches the analysis grid of the input clip (one
    frame per 10 ms), so the result can be vocoded to approximately the
    original duration.
    """
    if content_provider is None:
        raise ParameterError("conversion requires a content provider")
    if melody_input == "features":
        if melody_model is None:
            raise ParameterError("conversion with melody features requires the extractor")
        melody_in = export_features(melody_model, clip).frames
    else:
        if raw_stats is None:
            raise ParameterError("raw melody conversion requires raw statistics")
        melody_in = raw_melody_input(clip, raw_stats)
    content = content_provider.features(clip)
    n = min(melody_in.shape[0], content.shape[0])
    if n < 2:
        raise DataError(f"clip '{clip.source_id}' is too short to convert")
    with torch.no_grad():
        mel_norm, _ = system.generator(
            torch.from_numpy(melody_in[:n].astype(np.float32))[None],
            torch.from_numpy(content[:n].astype(np.float32))[None],
        )
    mel = mel_stats.denormalize(mel_norm[0].cpu().numpy().astype(np.float64))
    return MelSpectrogram(mel)


def verify_melody_compatibility(svc_ckpt: dict, melody_ckpt: dict) -> None:
    """Fail fast when conversion pairs an SVC model with the wrong extractor."""
    ref = svc_ckpt.get("melody_ref")
    if ref is None:
        return
    digest = melody_ckpt.get("model_digest")
    if ref.get("model_digest") != digest:
        raise CompatibilityError(
            "melody checkpoint does not match the one this SVC model was trained with"
            f" (expected digest {str(ref.get('model_digest'))[:12]},"
            f" got {str(digest)[:12]})"
        )
