"""Accompaniment-robust melody extraction and any-to-one singing voice
conversion.

The package splits into a numpy side (audio I/O, manifests, DSP, pitch
labelling, alignment, metrics) importable without torch, and a torch
side (backbone adapter, melody extractor, conversion model) pulled in
on demand by the training and conversion entry points.
"""

__version__ = "0.1.0"

from .audio import AudioClip, content_hash, ingest, validate_clip, write_wav
from .dsp import (
    EnergyTrack,
    MelSpectrogram,
    apply_bgm_augmentation,
    frame_count,
    mel_spectrogram,
    mix_at_snr,
    rms_energy,
    speed_perturb,
    stft,
)
from .errors import ConfigError, DataError, MelosvcError, StageError
from .manifest import DatasetSpec, ManifestEntry, build_manifest, load_manifest, save_manifest
from .pitch import FrameTrack
from .labeling import label_clip, median_fuse

__all__ = [
    "AudioClip",
    "ConfigError",
    "DataError",
    "DatasetSpec",
    "EnergyTrack",
    "FrameTrack",
    "ManifestEntry",
    "MelSpectrogram",
    "MelosvcError",
    "StageError",
    "__version__",
    "apply_bgm_augmentation",
    "build_manifest",
    "content_hash",
    "frame_count",
    "ingest",
    "label_clip",
    "load_manifest",
    "median_fuse",
    "mel_spectrogram",
    "mix_at_snr",
    "rms_energy",
    "save_manifest",
    "speed_perturb",
    "stft",
    "validate_clip",
    "write_wav",
]
