"""Audio ingestion and canonicalization.

Everything downstream assumes mono float audio at 16 kHz with samples in
[-1, 1].  :func:`ingest` is the single entry point that enforces that
contract; the rest of this module provides WAV I/O, resampling, and the
content hash used to key cached artifacts.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import EmptyClipError, IngestError, ParameterError

CANONICAL_RATE = 16000

_PCM_SCALE = {
    np.dtype(np.int16): 2.0**15,
    np.dtype(np.int32): 2.0**31,
}


@dataclass(frozen=True)
class AudioClip:
    """An immutable mono audio buffer.

    Attributes
    ----------
    samples:
        1-D float64 array.  Stored read-only; construction copies.
    sample_rate:
        Sampling rate in Hz.
    source_id:
        Opaque provenance string (usually the originating path).
    """

    samples: np.ndarray
    sample_rate: int = CANONICAL_RATE
    source_id: str = ""

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ParameterError(f"AudioClip requires mono samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("AudioClip samples must be finite")
        if self.sample_rate <= 0:
            raise ParameterError(f"sample_rate must be positive, got {self.sample_rate}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        """Clip duration in seconds."""
        return len(self) / self.sample_rate

    def with_samples(self, samples: np.ndarray, source_id: str | None = None) -> "AudioClip":
        """Return a new clip sharing this clip's rate and provenance."""
        return AudioClip(samples, self.sample_rate, self.source_id if source_id is None else source_id)


def validate_clip(clip: AudioClip, expect_rate: int | None = CANONICAL_RATE) -> AudioClip:
    """Check the canonical-audio contract, returning the clip unchanged.

    Raises
    ------
    ParameterError
        If the rate differs from ``expect_rate`` or samples leave [-1, 1].
    EmptyClipError
        If the clip has no samples.
    """
    if len(clip) == 0:
        raise EmptyClipError(f"clip '{clip.source_id}' is empty")
    if expect_rate is not None and clip.sample_rate != expect_rate:
        raise ParameterError(
            f"clip '{clip.source_id}' has rate {clip.sample_rate}, expected {expect_rate}"
        )
    peak = float(np.max(np.abs(clip.samples)))
    if peak > 1.0 + 1e-9:
        raise ParameterError(f"clip '{clip.source_id}' has peak {peak:.6f} > 1")
    return clip


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a WAV file to float64 in [-1, 1].

    Returns ``(samples, rate)`` where samples keep the file's channel
    layout: shape ``(n,)`` for mono, ``(n, channels)`` otherwise.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise IngestError(f"no such audio file: {path}") from None
    except Exception as exc:  # scipy raises ValueError on malformed files
        raise IngestError(f"could not read '{path}': {exc}") from exc
    if data.dtype in _PCM_SCALE:
        samples = data.astype(np.float64) / _PCM_SCALE[data.dtype]
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        samples = data.astype(np.float64)
    else:
        raise IngestError(f"unsupported WAV sample format {data.dtype} in '{path}'")
    return samples, int(rate)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write a clip as 16-bit PCM, clipping samples to [-1, 1]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scaled = np.clip(clip.samples, -1.0, 1.0) * 32767.0
    wavfile.write(path, clip.sample_rate, np.round(scaled).astype(np.int16))


def resample(samples: np.ndarray, rate: int, target_rate: int) -> np.ndarray:
    """Polyphase resampling with the exact rational rate ratio."""
    if rate == target_rate:
        return np.asarray(samples, dtype=np.float64)
    ratio = Fraction(target_rate, rate)
    return resample_poly(np.asarray(samples, dtype=np.float64), ratio.numerator, ratio.denominator)


def ingest(path: str | Path, target_rate: int = CANONICAL_RATE) -> AudioClip:
    """Load an audio file onto the canonical grid.

    Decodes, averages channels to mono, resamples to ``target_rate``,
    and peak-normalizes only when the peak exceeds 1 (resampling can
    overshoot slightly).
    """
    path = Path(path)
    samples, rate = read_wav(path)
    if samples.size == 0:
        raise EmptyClipError(f"'{path}' contains no samples")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    samples = resample(samples, rate, target_rate)
    if samples.size == 0:
        raise EmptyClipError(f"'{path}' is too short to resample to {target_rate} Hz")
    peak = float(np.max(np.abs(samples)))
    if peak > 1.0:
        samples = samples / peak
    return AudioClip(samples, target_rate, source_id=str(path))


def content_hash(clip: AudioClip) -> str:
    """SHA-256 over the samples (as little-endian float32) and the rate.

    Stable across runs and platforms for identical audio, independent of
    file paths and timestamps; used to key label caches, feature files,
    and export layouts.
    """
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(clip.samples, dtype="<f4").tobytes())
    digest.update(int(clip.sample_rate).to_bytes(8, "little"))
    return digest.hexdigest()
