"""Frame-level signal processing on the canonical analysis grid.

The analysis grid is fixed across the whole toolkit: 50 ms frames with a
10 ms hop at 16 kHz (800 and 160 samples), no padding, so a clip of
``n`` samples yields ``(n - 800) // 160 + 1`` frames.  All spectrogram,
energy, pitch, and feature sequences share this grid, which is what lets
labels, features, and mel targets be sliced with the same indices.

Also here: SNR-controlled mixing of vocals with background tracks, the
random background augmentation used during training, and speed
perturbation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import get_window, resample_poly

from .audio import AudioClip
from .errors import (
    DegenerateAudioError,
    ParameterError,
    PoolError,
    ShapeError,
    ShortInputError,
)

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
FRAME_MS = 50.0
HOP_MS = 10.0
FRAME_SAMPLES = 800
HOP_SAMPLES = 160
N_MELS = 80
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-5

_SILENCE_POWER = 1e-20


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-magnitude mel spectrogram, shape ``(frames, n_mels)``."""

    frames: np.ndarray
    frame_ms: float = FRAME_MS
    hop_ms: float = HOP_MS
    sample_rate: int = SAMPLE_RATE
    log_floor: float = LOG_FLOOR

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise ShapeError(f"mel frames must be 2-D, got shape {frames.shape}")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class EnergyTrack:
    """Per-frame RMS energy, shape ``(frames,)``."""

    values: np.ndarray
    hop_samples: int = HOP_SAMPLES

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ShapeError(f"energy values must be 1-D, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]


def frame_count(n_samples: int, frame_samples: int = FRAME_SAMPLES, hop_samples: int = HOP_SAMPLES) -> int:
    """Number of full analysis frames for a clip of ``n_samples``."""
    if n_samples < frame_samples:
        return 0
    return (n_samples - frame_samples) // hop_samples + 1


def _window(name: str, length: int) -> np.ndarray:
    if name == "hann":
        return get_window("hann", length, fftbins=True)
    if name == "rect":
        return np.ones(length)
    raise ParameterError(f"unknown window '{name}' (expected 'hann' or 'rect')")


def _frame_signal(samples: np.ndarray, frame_samples: int, hop_samples: int) -> np.ndarray:
    n_frames = frame_count(samples.shape[0], frame_samples, hop_samples)
    if n_frames == 0:
        raise ShortInputError(
            f"need at least {frame_samples} samples for one frame, got {samples.shape[0]}"
        )
    idx = np.arange(n_frames)[:, None] * hop_samples + np.arange(frame_samples)[None, :]
    return samples[idx]


def stft(
    clip: AudioClip,
    frame_samples: int = FRAME_SAMPLES,
    hop_samples: int = HOP_SAMPLES,
    window: str = "hann",
) -> np.ndarray:
    """Short-time Fourier transform without padding.

    Returns a complex array of shape ``(frames, frame_samples // 2 + 1)``.
    The FFT length equals the frame length, so for the rectangular
    window each frame satisfies Parseval's identity exactly against the
    time-domain frame energy.
    """
    frames = _frame_signal(clip.samples, frame_samples, hop_samples)
    return np.fft.rfft(frames * _window(window, frame_samples)[None, :], axis=1)


def mel_filterbank(
    n_mels: int = N_MELS,
    frame_samples: int = FRAME_SAMPLES,
    sample_rate: int = SAMPLE_RATE,
    fmin: float = FMIN,
    fmax: float = FMAX,
) -> np.ndarray:
    """Area-normalized triangular mel filterbank, shape ``(n_mels, bins)``.

    Each triangle is scaled by ``2 / (f_hi - f_lo)`` so filters integrate
    to the same mass regardless of bandwidth.
    """
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise ParameterError(f"invalid mel range [{fmin}, {fmax}] at rate {sample_rate}")
    freqs = np.fft.rfftfreq(frame_samples, 1.0 / sample_rate)

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bank = np.zeros((n_mels, freqs.shape[0]))
    for i in range(n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / max(mid - lo, 1e-12)
        down = (hi - freqs) / max(hi - mid, 1e-12)
        bank[i] = np.maximum(0.0, np.minimum(up, down)) * (2.0 / (hi - lo))
    return bank


def mel_spectrogram(
    clip: AudioClip,
    n_mels: int = N_MELS,
    fmin: float = FMIN,
    fmax: float = FMAX,
    log_floor: float = LOG_FLOOR,
    frame_samples: int = FRAME_SAMPLES,
    hop_samples: int = HOP_SAMPLES,
) -> MelSpectrogram:
    """Log mel spectrogram of the magnitude STFT.

    Mel energies are floored at ``log_floor`` before the log, so silence
    maps to the constant ``log(log_floor)`` and doubling the waveform
    amplitude raises every unfloored entry by ``log(2)``.
    """
    mag = np.abs(stft(clip, frame_samples, hop_samples, window="hann"))
    bank = mel_filterbank(n_mels, frame_samples, clip.sample_rate, fmin, fmax)
    mel = mag @ bank.T
    return MelSpectrogram(
        np.log(np.maximum(mel, log_floor)),
        frame_ms=1000.0 * frame_samples / clip.sample_rate,
        hop_ms=1000.0 * hop_samples / clip.sample_rate,
        sample_rate=clip.sample_rate,
        log_floor=log_floor,
    )


def rms_energy(
    clip: AudioClip,
    frame_samples: int = FRAME_SAMPLES,
    hop_samples: int = HOP_SAMPLES,
) -> EnergyTrack:
    """Per-frame RMS energy from the Hann-windowed spectrum.

    Computed as the root mean square over rfft bin magnitudes (with the
    one-sided spectrum unfolded), so it is linear in waveform amplitude
    and exactly zero for silent frames.
    """
    spec = stft(clip, frame_samples, hop_samples, window="hann")
    power = np.abs(spec) ** 2
    # Unfold the one-sided spectrum: interior bins appear twice in the
    # full FFT, DC and Nyquist once (frame length is even).
    weights = np.full(power.shape[1], 2.0)
    weights[0] = 1.0
    if frame_samples % 2 == 0:
        weights[-1] = 1.0
    mean_sq = (power * weights[None, :]).sum(axis=1) / frame_samples**2
    return EnergyTrack(np.sqrt(mean_sq), hop_samples=hop_samples)


# -- SNR mixing --------------------------------------------------------------


@dataclass(frozen=True)
class MixResult:
    """A vocal/background mixture and its bookkeeping.

    ``vocal_part`` and ``bgm_part`` are the two summands of
    ``mixture.samples`` after any joint peak rescale, so the achieved
    SNR can be measured exactly from them.
    """

    mixture: AudioClip
    vocal_part: np.ndarray
    bgm_part: np.ndarray
    snr_db: float
    gain: float
    rescale: float

    @property
    def measured_snr_db(self) -> float:
        """SNR recomputed from the stored mixture components."""
        p_vocal = float(np.mean(self.vocal_part**2))
        p_bgm = float(np.mean(self.bgm_part**2))
        return 10.0 * np.log10(p_vocal / p_bgm)


def fit_to_length(samples: np.ndarray, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Crop or loop ``samples`` to exactly ``n`` samples.

    Longer inputs are cropped (at a random offset when ``rng`` is given,
    else from the start); shorter inputs are looped seamlessly.
    """
    m = samples.shape[0]
    if m == 0:
        raise DegenerateAudioError("cannot fit an empty background track")
    if m >= n:
        start = int(rng.integers(0, m - n + 1)) if rng is not None else 0
        return samples[start : start + n]
    reps = -(-(n + m) // m)
    tiled = np.tile(samples, reps)
    start = int(rng.integers(0, m)) if rng is not None else 0
    return tiled[start : start + n]


def mix_at_snr(
    vocal: AudioClip,
    bgm: AudioClip,
    snr_db: float,
    rng: np.random.Generator | None = None,
) -> MixResult:
    """Mix a background track under a vocal at an exact target SNR.

    The background is cropped or looped to the vocal's length, scaled by
    ``g = sqrt(P_vocal / (P_bgm * 10^(snr/10)))`` with powers measured
    as full-clip mean squares, and added.  If the sum's peak exceeds 1
    both components are rescaled jointly, which preserves the SNR.
    """
    if vocal.sample_rate != bgm.sample_rate:
        raise ParameterError(
            f"vocal rate {vocal.sample_rate} != background rate {bgm.sample_rate}"
        )
    v = vocal.samples
    p_vocal = float(np.mean(v**2))
    if p_vocal < _SILENCE_POWER:
        raise DegenerateAudioError(f"vocal '{vocal.source_id}' is silent; SNR undefined")
    b = fit_to_length(bgm.samples, len(vocal), rng)
    p_bgm = float(np.mean(b**2))
    if p_bgm < _SILENCE_POWER:
        raise DegenerateAudioError(f"background '{bgm.source_id}' is silent; SNR undefined")
    gain = float(np.sqrt(p_vocal / (p_bgm * 10.0 ** (snr_db / 10.0))))
    mix = v + gain * b
    peak = float(np.max(np.abs(mix)))
    rescale = 1.0 / peak if peak > 1.0 else 1.0
    vocal_part = v * rescale
    bgm_part = gain * b * rescale
    mixture = AudioClip(
        vocal_part + bgm_part,
        vocal.sample_rate,
        source_id=f"{vocal.source_id}+bgm@{snr_db:g}dB",
    )
    return MixResult(mixture, vocal_part, bgm_part, float(snr_db), gain, rescale)


def apply_bgm_augmentation(
    vocal: AudioClip,
    bgm_pool: list[AudioClip],
    p: float,
    snr_range: tuple[float, float],
    rng: np.random.Generator,
) -> AudioClip:
    """With probability ``p``, mix a random pool track under the vocal.

    The SNR is drawn uniformly from ``snr_range`` and the background is
    cropped at a random offset.  Otherwise the clean vocal is returned
    unchanged.  With ``p = 0`` this is the identity; the pool may then
    even be empty.
    """
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"augmentation probability must be in [0, 1], got {p}")
    if snr_range[0] > snr_range[1]:
        raise ParameterError(f"invalid SNR range {snr_range}")
    if rng.random() >= p:
        return vocal
    if not bgm_pool:
        raise PoolError("background augmentation fired but the pool is empty")
    bgm = bgm_pool[int(rng.integers(len(bgm_pool)))]
    snr = float(rng.uniform(snr_range[0], snr_range[1]))
    return mix_at_snr(vocal, bgm, snr, rng).mixture


# -- speed perturbation ------------------------------------------------------


def speed_perturb(clip: AudioClip, rate: float) -> AudioClip:
    """Resample-based speed change: duration scales by ``1/rate`` and
    every frequency, pitch included, scales by ``rate``.

    Implemented by polyphase resampling with the closest small rational
    to ``1/rate`` and keeping the original sample rate.
    """
    if not np.isfinite(rate) or rate <= 0:
        raise ParameterError(f"speed rate must be positive and finite, got {rate}")
    if rate == 1.0:
        return clip
    ratio = Fraction(1.0 / rate).limit_denominator(1000)
    samples = resample_poly(clip.samples, ratio.numerator, ratio.denominator)
    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    if peak > 1.0:
        samples = samples / peak
    return AudioClip(samples, clip.sample_rate, source_id=f"{clip.source_id}@x{rate:g}")
