"""Accompaniment-robust melody extractor.

The model runs a speech backbone over the waveform, collapses the
hidden-layer stack with a learnable weighted sum (or picks the last
layer), interpolates onto the 10 ms analysis grid, and feeds a stack of
feed-forward Transformer blocks whose 256-dim output doubles as the
melody feature sequence for synthesis.  Linear heads predict per frame:

* pitch as standardized ``log2(f0 / 440)`` (voiced frames only),
* energy as standardized log RMS,
* a voicing logit.

Seven ablation conditions switch three ingredients independently:
backbone fine-tuning (first ``freeze_step`` optimizer steps, then the
backbone freezes permanently), the weighted sum, and the FFT blocks.
``raw-*`` conditions (no fine-tuning, no FFT blocks) keep the
prediction heads frozen: they probe feature quality, not head capacity.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import torch
from torch import nn

from .audio import AudioClip, content_hash
from .backbone import (
    BackboneHandle,
    LayerAggregator,
    align_frames,
    load_backbone,
    parameter_digest,
    schedule_step,
)
from .blocks import FFTStack
from .config import BackboneConfig, MelodyConfig
from .dsp import HOP_SAMPLES, frame_count, mix_at_snr, rms_energy
from .errors import (
    CompatibilityError,
    DataError,
    ParameterError,
    ShapeError,
    ShortInputError,
)
from .labeling import entry_key, load_entry_clip
from .pitch import F0_CEIL, F0_FLOOR, FrameTrack

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1
PITCH_REF_HZ = 440.0
ENERGY_FLOOR = 1e-5


@dataclass(frozen=True)
class AblationCondition:
    """One cell of the ablation grid."""

    fine_tune: bool
    weighted_sum: bool
    fft_blocks: bool

    @property
    def is_raw(self) -> bool:
        """No fine-tuning and no FFT blocks: the feature-probe rows."""
        return not self.fine_tune and not self.fft_blocks

    @property
    def name(self) -> str:
        for name, cond in CONDITIONS.items():
            if cond == self:
                return name
        raise ParameterError(
            f"flag combination (fine_tune={self.fine_tune}, weighted_sum={self.weighted_sum},"
            f" fft_blocks={self.fft_blocks}) is not one of the seven supported conditions"
        )


CONDITIONS: dict[str, AblationCondition] = {
    "raw-single": AblationCondition(False, False, False),
    "raw-weighted-sum": AblationCondition(False, True, False),
    "single-no-fft": AblationCondition(True, False, False),
    "weighted-sum-no-fft": AblationCondition(True, True, False),
    "single-fft": AblationCondition(False, False, True),
    "weighted-sum-fft": AblationCondition(False, True, True),
    "proposed": AblationCondition(True, True, True),
}


def condition_from_name(name: str) -> AblationCondition:
    if name not in CONDITIONS:
        raise ParameterError(
            f"unknown condition '{name}' (expected one of: {', '.join(CONDITIONS)})"
        )
    return CONDITIONS[name]


def condition_from_flags(fine_tune: bool, weighted_sum: bool, fft_blocks: bool) -> AblationCondition:
    cond = AblationCondition(fine_tune, weighted_sum, fft_blocks)
    cond.name  # raises for the unsupported combination
    return cond


@dataclass(frozen=True)
class MelodyFeatures:
    """Frame-level melody features, shape ``(T, dim)`` on the 10 ms grid."""

    frames: np.ndarray
    hop_ms: float = 10.0
    source_hash: str = ""

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2:
            raise ShapeError(f"melody features must be 2-D, got {frames.shape}")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class MelodyPrediction:
    """Per-frame head outputs in normalized target space."""

    pitch_norm: np.ndarray
    energy_norm: np.ndarray
    vuv_prob: np.ndarray


class MelodyExtractor(nn.Module):
    """Backbone + layer aggregation + FFT trunk + prediction heads."""

    def __init__(
        self,
        handle: BackboneHandle,
        condition: AblationCondition,
        cfg: MelodyConfig,
        normalized_weights: bool = True,
    ):
        super().__init__()
        condition.name  # validates the flag combination
        self.handle = handle
        self.backbone = handle.module
        self.condition = condition
        self.cfg = cfg
        self.aggregator = (
            LayerAggregator(handle.stack_size, normalized=normalized_weights)
            if condition.weighted_sum
            else None
        )
        self.in_proj = nn.Linear(handle.dim, cfg.feature_dim)
        self.trunk = (
            FFTStack(
                cfg.blocks,
                cfg.feature_dim,
                heads=cfg.heads,
                kernel=cfg.kernel,
                ff_dim=cfg.ff_dim,
                dropout=cfg.dropout,
            )
            if condition.fft_blocks
            else None
        )
        self.pitch_head = nn.Linear(cfg.feature_dim, 1)
        self.energy_head = nn.Linear(cfg.feature_dim, 1)
        self.vuv_head = nn.Linear(cfg.feature_dim, 1)
        self.register_buffer("pitch_mean", torch.tensor(0.0))
        self.register_buffer("pitch_std", torch.tensor(1.0))
        self.register_buffer("energy_mean", torch.tensor(0.0))
        self.register_buffer("energy_std", torch.tensor(1.0))
        self._apply_trainability()

    def _apply_trainability(self) -> None:
        """Freeze the parts the active condition does not train.

        The backbone's flag is managed by the fine-tune schedule; here
        only its initial state is set.
        """
        cond = self.condition
        self.handle.fine_tune = cond.fine_tune
        for p in self.backbone.parameters():
            p.requires_grad_(cond.fine_tune)
        trunk_trains = not (cond.is_raw and not cond.weighted_sum)
        self.in_proj.requires_grad_(trunk_trains)
        if self.trunk is not None:
            self.trunk.requires_grad_(True)
        heads_train = not cond.is_raw
        for head in (self.pitch_head, self.energy_head, self.vuv_head):
            head.requires_grad_(heads_train)

    def set_label_stats(self, pitch_mean, pitch_std, energy_mean, energy_std) -> None:
        self.pitch_mean.fill_(float(pitch_mean))
        self.pitch_std.fill_(max(float(pitch_std), 1e-6))
        self.energy_mean.fill_(float(energy_mean))
        self.energy_std.fill_(max(float(energy_std), 1e-6))

    def forward(self, waves: torch.Tensor, target_len: int):
        """Features ``(B, target_len, dim)`` plus per-frame head outputs."""
        hidden = self.backbone(waves)
        if self.aggregator is not None:
            stack = torch.stack(hidden, dim=1)
            agg = self.aggregator(stack)
        else:
            agg = hidden[-1]
        aligned = align_frames(agg, target_len, self.handle.hop_ms)
        x = self.in_proj(aligned)
        features = self.trunk(x) if self.trunk is not None else x
        pitch = self.pitch_head(features).squeeze(-1)
        energy = self.energy_head(features).squeeze(-1)
        vuv_logit = self.vuv_head(features).squeeze(-1)
        return features, pitch, energy, vuv_logit

    def layer_weights(self) -> np.ndarray:
        """Effective layer weights (one-hot on the last layer when the
        weighted sum is disabled)."""
        if self.aggregator is not None:
            with torch.no_grad():
                return self.aggregator.effective_weights().cpu().numpy().astype(np.float64)
        weights = np.zeros(self.handle.stack_size)
        weights[-1] = 1.0
        return weights


def melody_loss(
    pitch_pred: torch.Tensor,
    energy_pred: torch.Tensor,
    vuv_logit: torch.Tensor,
    pitch_target: torch.Tensor,
    energy_target: torch.Tensor,
    voiced_mask: torch.Tensor,
    weights: tuple[float, float, float] = (1.0, 0.5, 0.5),
) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted sum of masked pitch L1, energy L1, and voicing BCE.

    The pitch term averages over voiced frames only and contributes
    zero when the batch has none.
    """
    mask = voiced_mask.to(pitch_pred.dtype)
    n_voiced = mask.sum()
    if n_voiced > 0:
        pitch_term = (torch.abs(pitch_pred - pitch_target) * mask).sum() / n_voiced
    else:
        pitch_term = pitch_pred.sum() * 0.0
    energy_term = torch.abs(energy_pred - energy_target).mean()
    vuv_term = nn.functional.binary_cross_entropy_with_logits(vuv_logit, mask)
    w_p, w_e, w_v = weights
    total = w_p * pitch_term + w_e * energy_term + w_v * vuv_term
    parts = {
        "pitch_l1": float(pitch_term.detach()),
        "energy_l1": float(energy_term.detach()),
        "vuv_bce": float(vuv_term.detach()),
        "total": float(total.detach()),
    }
    return total, parts


# -- training ---------------------------------------------------------------


@dataclass
class TrainSample:
    """One training clip with its label track and energy targets."""

    clip: AudioClip
    track: FrameTrack
    energy: np.ndarray
    key: str

    @classmethod
    def from_clip(cls, clip: AudioClip, track: FrameTrack, key: str = "") -> "TrainSample":
        n_frames = frame_count(len(clip))
        if len(track) != n_frames:
            raise ShapeError(
                f"label has {len(track)} frames but clip '{key}' has {n_frames}"
            )
        energy = rms_energy(clip).values
        return cls(clip, track, np.log(np.maximum(energy, ENERGY_FLOOR)), key or clip.source_id)


def build_training_set(entries, labels: dict[str, FrameTrack]) -> list[TrainSample]:
    """Pair manifest entries with their cached label tracks."""
    samples = []
    for entry in entries:
        key = entry_key(entry)
        if key not in labels:
            continue
        clip = load_entry_clip(entry)
        samples.append(TrainSample.from_clip(clip, labels[key], key))
    return samples


def label_statistics(samples: Iterable[TrainSample]) -> tuple[float, float, float, float]:
    """Mean/std of voiced log-pitch and of log-energy over a corpus."""
    pitches, energies = [], []
    for s in samples:
        voiced = s.track.f0_hz[s.track.vuv]
        if voiced.size:
            pitches.append(np.log2(voiced / PITCH_REF_HZ))
        energies.append(s.energy)
    if not energies:
        raise ParameterError("cannot compute label statistics of an empty corpus")
    pitch_all = np.concatenate(pitches) if pitches else np.zeros(1)
    energy_all = np.concatenate(energies)
    return (
        float(pitch_all.mean()),
        float(max(pitch_all.std(), 1e-6)),
        float(energy_all.mean()),
        float(max(energy_all.std(), 1e-6)),
    )


def _crop_frames(cfg_seconds: float, samples: list[TrainSample]) -> int:
    want = max(1, int(round((cfg_seconds * 16000 - 800) / HOP_SAMPLES)) + 1)
    available = min(len(s.track) for s in samples)
    if available < 1:
        raise ShortInputError("a training clip has no full analysis frame")
    return min(want, available)


def _batch(
    samples: list[TrainSample],
    model: MelodyExtractor,
    t_crop: int,
    bgm_pool: list[AudioClip],
    bgm_prob: float,
    snr_range: tuple[float, float],
    rng: np.random.Generator,
    batch_size: int,
):
    n_crop = 800 + HOP_SAMPLES * (t_crop - 1)
    waves = np.empty((batch_size, n_crop), dtype=np.float32)
    pitch = np.zeros((batch_size, t_crop), dtype=np.float32)
    energy = np.zeros((batch_size, t_crop), dtype=np.float32)
    voiced = np.zeros((batch_size, t_crop), dtype=np.float32)
    p_mu = float(model.pitch_mean)
    p_sd = float(model.pitch_std)
    e_mu = float(model.energy_mean)
    e_sd = float(model.energy_std)
    for b in range(batch_size):
        s = samples[int(rng.integers(len(samples)))]
        start = int(rng.integers(len(s.track) - t_crop + 1))
        wave = s.clip.samples[start * HOP_SAMPLES : start * HOP_SAMPLES + n_crop]
        if bgm_pool and rng.random() < bgm_prob:
            crop = AudioClip(wave, s.clip.sample_rate)
            snr = float(rng.uniform(*snr_range))
            bgm = bgm_pool[int(rng.integers(len(bgm_pool)))]
            try:
                wave = mix_at_snr(crop, bgm, snr, rng).mixture.samples
            except Exception:
                pass  # silent crop: train on the clean waveform instead
        waves[b] = wave
        sl = slice(start, start + t_crop)
        vuv = s.track.vuv[sl]
        f0 = s.track.f0_hz[sl]
        with np.errstate(divide="ignore"):
            p = np.where(vuv, np.log2(np.maximum(f0, 1e-6) / PITCH_REF_HZ), 0.0)
        pitch[b] = np.where(vuv, (p - p_mu) / p_sd, 0.0)
        energy[b] = (s.energy[sl] - e_mu) / e_sd
        voiced[b] = vuv.astype(np.float32)
    return (
        torch.from_numpy(waves),
        torch.from_numpy(pitch),
        torch.from_numpy(energy),
        torch.from_numpy(voiced),
    )


@dataclass
class TrainLog:
    """Loss curve and layer-weight trajectory of one training run."""

    steps: list[int] = field(default_factory=list)
    losses: list[dict[str, float]] = field(default_factory=list)
    weight_steps: list[int] = field(default_factory=list)
    weights: list[list[float]] = field(default_factory=list)


def train_melody(
    samples: list[TrainSample],
    condition: AblationCondition,
    cfg: MelodyConfig,
    backbone_cfg: BackboneConfig,
    bgm_pool: list[AudioClip] | None = None,
    seed: int = 17,
    callbacks: Iterable[Callable] = (),
    steps: int | None = None,
) -> dict:
    """Train one extractor condition and return its checkpoint dict.

    Deterministic in ``seed``: the same data, condition, and seed give
    the same parameters.  ``callbacks`` receive
    ``(step, model, handle, loss_parts)`` after each optimizer step.
    """
    if not samples:
        raise ParameterError("training set is empty")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    handle = load_backbone(
        kind=backbone_cfg.kind,
        checkpoint=backbone_cfg.checkpoint,
        dim=backbone_cfg.dim,
        num_layers=backbone_cfg.layers,
        heads=backbone_cfg.heads,
        seed=backbone_cfg.seed,
        identity_layers=backbone_cfg.identity_layers,
    )
    handle.freeze_step = cfg.freeze_step
    model = MelodyExtractor(handle, condition, cfg, normalized_weights=backbone_cfg.softmax_weights)
    model.set_label_stats(*label_statistics(samples))
    model.train()

    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = (
        torch.optim.AdamW(trainable, lr=cfg.lr, weight_decay=cfg.weight_decay)
        if trainable
        else None
    )
    if optimizer is None:
        log.info("condition '%s' trains no parameters; running without updates", condition.name)

    total_steps = cfg.steps if steps is None else steps
    t_crop = _crop_frames(cfg.crop_seconds, samples)
    bgm_pool = bgm_pool or []
    train_log = TrainLog()

    for step in range(total_steps):
        schedule_step(handle, step)
        waves, pitch_t, energy_t, voiced = _batch(
            samples, model, t_crop, bgm_pool, cfg.bgm_prob, cfg.snr_range, rng, cfg.batch_size
        )
        _, pitch, energy, vuv_logit = model(waves, t_crop)
        loss, parts = melody_loss(
            pitch, energy, vuv_logit, pitch_t, energy_t, voiced,
            weights=(cfg.loss_pitch, cfg.loss_energy, cfg.loss_vuv),
        )
        if optimizer is not None:
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(
                    [p for p in model.parameters() if p.requires_grad], cfg.grad_clip
                )
            optimizer.step()
        if step % cfg.log_every == 0 or step == total_steps - 1:
            train_log.steps.append(step)
            train_log.losses.append(parts)
            train_log.weight_steps.append(step)
            train_log.weights.append([float(w) for w in model.layer_weights()])
            log.info("step %d: %s", step, parts)
        for callback in callbacks:
            callback(step, model, handle, parts)

    model.eval()
    return {
        "schema_version": CHECKPOINT_SCHEMA,
        "kind": "melody-extractor",
        "condition": condition.name,
        "backbone": {
            "kind": backbone_cfg.kind,
            "checkpoint": backbone_cfg.checkpoint,
            "dim": backbone_cfg.dim,
            "layers": backbone_cfg.layers,
            "heads": backbone_cfg.heads,
            "seed": backbone_cfg.seed,
            "identity_layers": backbone_cfg.identity_layers,
            "softmax_weights": backbone_cfg.softmax_weights,
        },
        "head": {
            "blocks": cfg.blocks,
            "heads": cfg.heads,
            "kernel": cfg.kernel,
            "ff_dim": cfg.ff_dim,
            "dropout": cfg.dropout,
            "feature_dim": cfg.feature_dim,
        },
        "train": {
            "steps": total_steps,
            "seed": seed,
            "lr": cfg.lr,
            "freeze_step": cfg.freeze_step,
            "frozen": handle.frozen,
            "freeze_digest": handle.digest,
        },
        "state_dict": model.state_dict(),
        "stats": {
            "pitch_mean": float(model.pitch_mean),
            "pitch_std": float(model.pitch_std),
            "energy_mean": float(model.energy_mean),
            "energy_std": float(model.energy_std),
        },
        "layer_weight_steps": train_log.weight_steps,
        "layer_weight_history": train_log.weights,
        "loss_steps": train_log.steps,
        "loss_history": train_log.losses,
        "model_digest": parameter_digest(model),
    }


def save_checkpoint(ckpt: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(ckpt, path)


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(ckpt, dict) or ckpt.get("schema_version") != CHECKPOINT_SCHEMA:
        raise CompatibilityError(f"'{path}' is not a supported checkpoint")
    return ckpt


def model_from_checkpoint(ckpt: dict) -> MelodyExtractor:
    """Rebuild an extractor exactly as trained (eval mode)."""
    if ckpt.get("kind") != "melody-extractor":
        raise CompatibilityError(f"expected a melody-extractor checkpoint, got '{ckpt.get('kind')}'")
    bb = ckpt["backbone"]
    handle = load_backbone(
        kind=bb["kind"],
        checkpoint=bb["checkpoint"],
        dim=bb["dim"],
        num_layers=bb["layers"],
        heads=bb["heads"],
        seed=bb["seed"],
        identity_layers=bb["identity_layers"],
    )
    cfg = dataclasses.replace(MelodyConfig(), **ckpt["head"])
    condition = condition_from_name(ckpt["condition"])
    model = MelodyExtractor(handle, condition, cfg, normalized_weights=bb["softmax_weights"])
    model.load_state_dict(ckpt["state_dict"])
    model.eval()
    return model


def _forward_clip(model: MelodyExtractor, clip: AudioClip):
    target_len = frame_count(len(clip))
    if target_len < 1:
        raise ShortInputError(f"clip '{clip.source_id}' is shorter than one analysis frame")
    model.eval()
    with torch.no_grad():
        wave = torch.from_numpy(np.asarray(clip.samples, dtype=np.float32))[None]
        return model(wave, target_len)


def export_features(model: MelodyExtractor, clip: AudioClip) -> MelodyFeatures:
    """Melody feature sequence for a clip, one row per 10 ms frame."""
    features, _, _, _ = _forward_clip(model, clip)
    return MelodyFeatures(features[0].cpu().numpy(), source_hash=content_hash(clip))


def predict(model: MelodyExtractor, clip: AudioClip) -> MelodyPrediction:
    """Head outputs for a clip in normalized target space."""
    _, pitch, energy, vuv_logit = _forward_clip(model, clip)
    return MelodyPrediction(
        pitch[0].cpu().numpy().astype(np.float64),
        energy[0].cpu().numpy().astype(np.float64),
        torch.sigmoid(vuv_logit)[0].cpu().numpy().astype(np.float64),
    )


def prediction_to_track(pred: MelodyPrediction, model: MelodyExtractor, threshold: float = 0.5) -> FrameTrack:
    """Decode normalized predictions to a Hz pitch track.

    Frames whose decoded pitch leaves the plausible range are marked
    unvoiced rather than clamped.
    """
    p = pred.pitch_norm * float(model.pitch_std) + float(model.pitch_mean)
    f0 = PITCH_REF_HZ * np.exp2(p)
    vuv = (pred.vuv_prob > threshold) & (f0 >= F0_FLOOR) & (f0 <= F0_CEIL)
    return FrameTrack(np.where(vuv, f0, 0.0), vuv)


def predicted_pitch_hz(pred: MelodyPrediction, model: MelodyExtractor) -> np.ndarray:
    """Decode the pitch head to Hz without any voicing gate."""
    p = pred.pitch_norm * float(model.pitch_std) + float(model.pitch_mean)
    return PITCH_REF_HZ * np.exp2(p)


def save_features(path: str | Path, features: MelodyFeatures) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        path,
        frames=features.frames,
        hop_ms=features.hop_ms,
        source_hash=features.source_hash,
        schema=CHECKPOINT_SCHEMA,
    )


def load_features(path: str | Path) -> MelodyFeatures:
    with np.load(path, allow_pickle=False) as data:
        return MelodyFeatures(
            data["frames"], hop_ms=float(data["hop_ms"]), source_hash=str(data["source_hash"])
        )
