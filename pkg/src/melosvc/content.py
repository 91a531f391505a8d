"""Content (linguistic) feature providers for voice conversion.

The conversion model consumes two frame streams: melody features from
the extractor and content features describing what is being sung.  Real
systems obtain content features from a speech-recognition encoder;
that model is external to this package, so two providers exist behind
one protocol:

* :class:`StubContentProvider` derives deterministic pseudo-content
  from a fixed-seed frozen backbone.  It is speaker-dependent (it is
  not a real recognizer) but exercises the full pipeline and is enough
  for the toy reconstruction objective.
* :class:`FileContentProvider` reads precomputed features from disk,
  keyed by clip content hash, for plugging in an external recognizer.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Protocol

import numpy as np
import torch

from .audio import AudioClip, content_hash
from .backbone import align_frames, load_backbone
from .dsp import frame_count
from .errors import CompatibilityError, DataError, ParameterError

log = logging.getLogger(__name__)

CONTENT_DIM = 256


class ContentProvider(Protocol):
    """Maps a clip to content features ``(frames, dim)`` on the 10 ms grid."""

    dim: int

    def features(self, clip: AudioClip) -> np.ndarray: ...


class StubContentProvider:
    """Frozen random backbone + fixed projection as stand-in content."""

    def __init__(self, dim: int = CONTENT_DIM, seed: int = 997):
        self.dim = dim
        self._handle = load_backbone(kind="stub", dim=64, num_layers=2, seed=seed)
        self._handle.module.eval()
        for p in self._handle.module.parameters():
            p.requires_grad_(False)
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(self._handle.dim)
        self._proj = torch.from_numpy(
            rng.normal(0.0, scale, size=(self._handle.dim, dim)).astype(np.float32)
        )

    def features(self, clip: AudioClip) -> np.ndarray:
        target = frame_count(len(clip))
        if target < 1:
            raise DataError(f"clip '{clip.source_id}' is shorter than one analysis frame")
        with torch.no_grad():
            wave = torch.from_numpy(np.asarray(clip.samples, dtype=np.float32))[None]
            hidden = self._handle.module(wave)
            mean_layers = torch.stack(hidden).mean(dim=0)[0]
            aligned = align_frames(mean_layers, target, self._handle.hop_ms)
            return (aligned @ self._proj).cpu().numpy()


class FileContentProvider:
    """Reads ``<root>/<content_hash>.npy`` files written by an external
    recognizer; shape must be ``(frames, dim)`` on the 10 ms grid."""

    def __init__(self, root: str | Path, dim: int = CONTENT_DIM):
        self.root = Path(root)
        self.dim = dim
        if not self.root.is_dir():
            raise ParameterError(f"content feature directory not found: {self.root}")

    def features(self, clip: AudioClip) -> np.ndarray:
        path = self.root / f"{content_hash(clip)}.npy"
        if not path.exists():
            raise DataError(f"no content features for '{clip.source_id}' at {path}")
        feats = np.load(path)
        if feats.ndim != 2 or feats.shape[1] != self.dim:
            raise CompatibilityError(
                f"content features at {path} have shape {feats.shape}, expected (*, {self.dim})"
            )
        return feats.astype(np.float32)


def make_content_provider(spec: str, dim: int = CONTENT_DIM) -> ContentProvider:
    """Build a provider from its config string.

    ``"stub"`` or ``"stub:<seed>"`` select the built-in pseudo-content;
    ``"external:<dir>"`` reads precomputed features.
    """
    if spec == "stub":
        return StubContentProvider(dim)
    if spec.startswith("stub:"):
        return StubContentProvider(dim, seed=int(spec.split(":", 1)[1]))
    if spec.startswith("external:"):
        return FileContentProvider(spec.split(":", 1)[1], dim)
    raise ParameterError(f"unknown content provider '{spec}'")
