"""Self-supervised speech backbone adapter.

Wraps a backbone network that maps raw 16 kHz waveforms to a stack of
``L + 1`` hidden-state sequences on a 20 ms grid: index 0 is the
convolutional front-end output, indices 1..L the Transformer layers.
Three backbone kinds exist behind one interface: a small seedable stub
(the default for tests and toy runs) and pretrained HuBERT or WavLM
loaded through ``transformers`` when available.

Also here: the learnable weighted sum over the layer stack, linear
interpolation from the 20 ms backbone grid onto the 10 ms analysis
grid, and the fine-tune freeze schedule (train the backbone for the
first ``freeze_step`` optimizer steps, then freeze it for good and
record a parameter digest so the freeze is verifiable).
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import torch
from torch import nn

from .audio import AudioClip
from .blocks import FFTBlock
from .errors import AlignmentError, ParameterError, ScheduleError, ShortInputError

log = logging.getLogger(__name__)

BACKBONE_HOP_MS = 20.0


@dataclass(frozen=True)
class LayerStack:
    """Hidden states of every backbone layer, shape ``(L+1, T, D)``."""

    hidden: torch.Tensor
    hop_ms: float = BACKBONE_HOP_MS

    def __post_init__(self):
        if self.hidden.ndim != 3:
            raise ParameterError(f"layer stack must be (L+1, T, D), got {tuple(self.hidden.shape)}")

    @property
    def num_layers(self) -> int:
        return self.hidden.shape[0]


class StubBackbone(nn.Module):
    """A miniature randomly initialized backbone with the real interface.

    Convolutional front-end with total stride 320 (20 ms at 16 kHz) and
    a 345-sample receptive field, followed by ``num_layers`` small
    Transformer blocks.  Construction is deterministic in ``seed`` and
    independent of ambient RNG state.  With ``identity_layers`` the
    Transformer blocks pass features through unchanged, so every layer
    of the stack equals the front-end output.
    """

    RECEPTIVE_FIELD = 345

    def __init__(
        self,
        dim: int = 64,
        num_layers: int = 3,
        heads: int = 2,
        seed: int = 0,
        identity_layers: bool = False,
    ):
        super().__init__()
        self.dim = dim
        self.num_layers = num_layers
        self.identity_layers = identity_layers
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.frontend = nn.Sequential(
                nn.Conv1d(1, dim, 10, stride=5),
                nn.GELU(),
                nn.Conv1d(dim, dim, 8, stride=4),
                nn.GELU(),
                nn.Conv1d(dim, dim, 4, stride=4),
                nn.GELU(),
                nn.Conv1d(dim, dim, 4, stride=4),
                nn.GELU(),
            )
            self.frontend_norm = nn.LayerNorm(dim)
            self.layers = nn.ModuleList(
                FFTBlock(dim, heads=heads, kernel=3, ff_dim=2 * dim, dropout=0.0)
                for _ in range(num_layers)
            )

    def forward(self, waves: torch.Tensor) -> list[torch.Tensor]:
        """Hidden states per layer, each ``(B, T, dim)``, front-end first."""
        if waves.ndim == 1:
            waves = waves[None]
        if waves.shape[-1] < self.RECEPTIVE_FIELD:
            raise ShortInputError(
                f"backbone needs at least {self.RECEPTIVE_FIELD} samples, got {waves.shape[-1]}"
            )
        h = self.frontend(waves[:, None, :]).transpose(1, 2)
        h = self.frontend_norm(h)
        hidden = [h]
        for layer in self.layers:
            hidden.append(hidden[0] if self.identity_layers else layer(hidden[-1]))
        return hidden


class _TransformersBackbone(nn.Module):
    """HuBERT or WavLM via the ``transformers`` package."""

    def __init__(self, kind: str, checkpoint: str):
        super().__init__()
        try:
            from transformers import AutoModel
        except ImportError as exc:
            raise ParameterError(
                f"backbone kind '{kind}' requires the transformers package"
            ) from exc
        self.model = AutoModel.from_pretrained(checkpoint)
        self.dim = int(self.model.config.hidden_size)
        self.num_layers = int(self.model.config.num_hidden_layers)

    def forward(self, waves: torch.Tensor) -> list[torch.Tensor]:
        if waves.ndim == 1:
            waves = waves[None]
        out = self.model(waves, output_hidden_states=True)
        return list(out.hidden_states)


@dataclass
class BackboneHandle:
    """A backbone plus its identity and fine-tune schedule state.

    ``step_counter`` tracks the last training step seen by
    :func:`schedule_step` and may only move forward.  Once the handle
    freezes, ``digest`` pins the exact parameter bytes; any later drift
    is a bug the digest makes detectable.
    """

    module: nn.Module
    model_id: str
    dim: int
    num_layers: int
    hop_ms: float = BACKBONE_HOP_MS
    fine_tune: bool = False
    freeze_step: int = 5000
    step_counter: int = -1
    frozen: bool = False
    digest: str | None = field(default=None)

    @property
    def stack_size(self) -> int:
        """Number of entries in the layer stack (front-end + layers)."""
        return self.num_layers + 1

    def set_trainable(self, trainable: bool) -> None:
        for p in self.module.parameters():
            p.requires_grad_(trainable)


def parameter_digest(module: nn.Module) -> str:
    """SHA-256 over all parameters in name order, as float32 bytes."""
    digest = hashlib.sha256()
    for name, param in sorted(module.named_parameters(), key=lambda kv: kv[0]):
        digest.update(name.encode())
        digest.update(param.detach().cpu().to(torch.float32).contiguous().numpy().tobytes())
    return digest.hexdigest()


def load_backbone(
    kind: str = "stub",
    checkpoint: str | None = None,
    dim: int = 64,
    num_layers: int = 3,
    heads: int = 2,
    seed: int = 0,
    identity_layers: bool = False,
) -> BackboneHandle:
    """Construct a backbone handle of the requested kind.

    ``stub`` is self-contained; ``hubert`` and ``wavlm`` require a
    ``checkpoint`` path or hub id and the ``transformers`` package.
    """
    if kind == "stub":
        module = StubBackbone(dim, num_layers, heads, seed, identity_layers)
        model_id = f"stub(dim={dim},layers={num_layers},seed={seed})"
        return BackboneHandle(module, model_id, dim, num_layers)
    if kind in ("hubert", "wavlm"):
        if not checkpoint:
            raise ParameterError(f"backbone kind '{kind}' requires a checkpoint id or path")
        module = _TransformersBackbone(kind, checkpoint)
        return BackboneHandle(module, f"{kind}:{checkpoint}", module.dim, module.num_layers)
    raise ParameterError(f"unknown backbone kind '{kind}'")


def extract_layers(handle: BackboneHandle, clip: AudioClip) -> LayerStack:
    """Run the backbone on one clip without gradients.

    Returns the full layer stack ``(L+1, T, D)`` on the backbone's
    native 20 ms grid.  Deterministic for a fixed clip and parameters.
    """
    was_training = handle.module.training
    handle.module.eval()
    try:
        with torch.no_grad():
            wave = torch.from_numpy(np.asarray(clip.samples, dtype=np.float32))
            hidden = handle.module(wave)
    finally:
        handle.module.train(was_training)
    return LayerStack(torch.stack([h[0] for h in hidden]), hop_ms=handle.hop_ms)


class LayerAggregator(nn.Module):
    """Learnable weighted sum over the backbone layer stack.

    In the default (normalized) mode the weights are a softmax over one
    logit per layer: non-negative, summing to one.  The free mode drops
    the softmax and uses the raw parameters as weights directly.
    """

    def __init__(self, stack_size: int, normalized: bool = True):
        super().__init__()
        if stack_size < 1:
            raise ParameterError("layer stack must have at least one entry")
        self.normalized = normalized
        self.logits = nn.Parameter(torch.zeros(stack_size))

    def effective_weights(self) -> torch.Tensor:
        return torch.softmax(self.logits, dim=0) if self.normalized else self.logits

    def forward(self, stack: torch.Tensor) -> torch.Tensor:
        """Collapse ``(..., L+1, T, D)`` to ``(..., T, D)``."""
        if stack.shape[-3] != self.logits.shape[0]:
            raise ParameterError(
                f"stack has {stack.shape[-3]} layers, aggregator expects {self.logits.shape[0]}"
            )
        weights = self.effective_weights().to(stack.dtype)
        return torch.tensordot(stack.movedim(-3, -1), weights, dims=1)


def weighted_sum(stack: LayerStack | torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Explicit-weight layer combination ``sum_l w_l * h[l]``.

    One-hot weights select a single layer exactly; the operation is
    linear in the weights.
    """
    hidden = stack.hidden if isinstance(stack, LayerStack) else stack
    if weights.ndim != 1 or weights.shape[0] != hidden.shape[-3]:
        raise ParameterError(
            f"need one weight per layer ({hidden.shape[-3]}), got shape {tuple(weights.shape)}"
        )
    return torch.tensordot(hidden.movedim(-3, -1), weights.to(hidden.dtype), dims=1)


def align_frames(
    features: torch.Tensor,
    target_len: int,
    src_hop_ms: float = BACKBONE_HOP_MS,
    dst_hop_ms: float = 10.0,
    max_edge_pad: int = 2,
) -> torch.Tensor:
    """Linearly interpolate ``(..., T_src, D)`` onto the target grid.

    Frame ``k`` of the output samples source position
    ``k * dst_hop / src_hop``.  Positions past the last source frame
    clamp to it; if that requires extending more than ``max_edge_pad``
    frames beyond the source span, the sequences are considered
    misaligned and an error is raised.  A single-frame source is the
    degenerate case and simply repeats.  Differentiable in ``features``.
    """
    if target_len < 1:
        raise AlignmentError(f"target length must be >= 1, got {target_len}")
    ratio = Fraction(src_hop_ms / dst_hop_ms).limit_denominator(1000)
    if abs(float(ratio) - src_hop_ms / dst_hop_ms) > 1e-9:
        raise AlignmentError(
            f"hop ratio {src_hop_ms}/{dst_hop_ms} is not a small rational; unsupported"
        )
    t_src = features.shape[-2]
    if t_src < 1:
        raise AlignmentError("source feature sequence is empty")
    if t_src > 1:
        natural = int(np.floor((t_src - 1) * float(ratio))) + 1
        if target_len > natural + max_edge_pad:
            raise AlignmentError(
                f"target {target_len} frames exceeds source span {natural} by more than"
                f" {max_edge_pad} frames"
            )
    pos = torch.arange(target_len, device=features.device, dtype=features.dtype) / float(ratio)
    pos = pos.clamp(max=float(t_src - 1))
    lo = pos.floor().long()
    hi = torch.clamp(lo + 1, max=t_src - 1)
    frac = (pos - lo.to(features.dtype))[..., None]
    f_lo = features.index_select(-2, lo)
    f_hi = features.index_select(-2, hi)
    return f_lo * (1.0 - frac) + f_hi * frac


def schedule_step(handle: BackboneHandle, global_step: int) -> BackboneHandle:
    """Advance the fine-tune schedule to ``global_step``.

    While ``fine_tune`` is set and the step is below ``freeze_step``,
    backbone parameters remain trainable.  At the boundary (or from
    step 0 when ``fine_tune`` is off) the backbone freezes permanently
    and the parameter digest is recorded.  Steps must not decrease.
    """
    if global_step < handle.step_counter:
        raise ScheduleError(
            f"training step went backwards: {handle.step_counter} -> {global_step}"
        )
    handle.step_counter = global_step
    should_train = handle.fine_tune and global_step < handle.freeze_step
    if handle.frozen and should_train:
        raise ScheduleError("backbone cannot unfreeze once frozen")
    if not should_train and not handle.frozen:
        handle.set_trainable(False)
        handle.frozen = True
        handle.digest = parameter_digest(handle.module)
        log.info("backbone frozen at step %d (digest %s)", global_step, handle.digest[:12])
    elif should_train:
        handle.set_trainable(True)
    return handle
