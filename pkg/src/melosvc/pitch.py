"""Frame-level pitch estimation.

Provides three self-contained estimators with complementary failure
modes (YIN-style cumulative-mean normalized difference, windowed
autocorrelation peak picking, and cepstral peak picking) plus a registry
through which external tools can be plugged in.  All estimators emit
:class:`FrameTrack` objects on the canonical 10 ms grid; the label
fusion in :mod:`melosvc.labeling` takes the per-frame median across
estimators.

Estimators run on clean vocal tracks only.  Mixtures are what the
*extractor model* sees; the oracle never does.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .audio import AudioClip
from .dsp import FRAME_SAMPLES, HOP_SAMPLES, frame_count
from .errors import ParameterError, ShapeError

log = logging.getLogger(__name__)

F0_FLOOR = 50.0
F0_CEIL = 1100.0

_SEARCH_FMIN = 55.0
_SEARCH_FMAX = 1000.0
_ENERGY_GATE = 1e-4


@dataclass(frozen=True)
class FrameTrack:
    """Per-frame pitch with a voicing flag.

    ``f0_hz[t]`` is meaningful only where ``vuv[t]`` is true; unvoiced
    frames carry 0.  Voiced values lie in [50, 1100] Hz.
    """

    f0_hz: np.ndarray
    vuv: np.ndarray
    hop_samples: int = HOP_SAMPLES

    def __post_init__(self):
        f0 = np.asarray(self.f0_hz, dtype=np.float64)
        vuv = np.asarray(self.vuv, dtype=bool)
        if f0.ndim != 1 or vuv.shape != f0.shape:
            raise ShapeError(f"track shapes disagree: {f0.shape} vs {vuv.shape}")
        if np.any(~np.isfinite(f0)):
            raise ParameterError("f0 values must be finite")
        voiced = f0[vuv]
        if voiced.size and (voiced.min() < F0_FLOOR or voiced.max() > F0_CEIL):
            raise ParameterError(
                f"voiced f0 outside [{F0_FLOOR}, {F0_CEIL}] Hz:"
                f" [{voiced.min():.1f}, {voiced.max():.1f}]"
            )
        f0 = f0.copy()
        f0[~vuv] = 0.0
        f0.setflags(write=False)
        vuv = vuv.copy()
        vuv.setflags(write=False)
        object.__setattr__(self, "f0_hz", f0)
        object.__setattr__(self, "vuv", vuv)

    def __len__(self) -> int:
        return self.f0_hz.shape[0]

    @property
    def voiced_fraction(self) -> float:
        return float(np.mean(self.vuv)) if len(self) else 0.0


def _finalize_track(f0: np.ndarray, voiced: np.ndarray, energy_ok: np.ndarray) -> FrameTrack:
    """Apply the range guard and energy gate, zeroing unvoiced frames."""
    in_range = (f0 >= F0_FLOOR) & (f0 <= F0_CEIL)
    vuv = voiced & energy_ok & in_range
    out = np.where(vuv, f0, 0.0)
    return FrameTrack(out, vuv)


def _segments(samples: np.ndarray, seg_len: int, n_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Gather per-frame analysis segments, zero-padding the tail.

    Returns ``(segments, complete)`` where ``complete[t]`` says whether
    frame ``t`` had ``seg_len`` real samples.  Incomplete frames are
    later forced unvoiced rather than analyzed on padding.
    """
    n = samples.shape[0]
    starts = np.arange(n_frames) * HOP_SAMPLES
    complete = starts + seg_len <= n
    padded = np.concatenate([samples, np.zeros(seg_len)])
    idx = starts[:, None] + np.arange(seg_len)[None, :]
    return padded[idx], complete


def _parabolic_refine(values: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Sub-sample refinement of per-row extremum positions.

    Fits a parabola through (idx-1, idx, idx+1) of each row of
    ``values`` and returns the fractional extremum position; boundary
    indices are returned unrefined.
    """
    rows = np.arange(values.shape[0])
    idx = idx.astype(np.int64)
    interior = (idx > 0) & (idx < values.shape[1] - 1)
    left = values[rows, np.maximum(idx - 1, 0)]
    mid = values[rows, idx]
    right = values[rows, np.minimum(idx + 1, values.shape[1] - 1)]
    denom = left - 2.0 * mid + right
    shift = np.where(np.abs(denom) > 1e-12, 0.5 * (left - right) / np.where(denom == 0, 1, denom), 0.0)
    shift = np.clip(shift, -0.5, 0.5)
    return np.where(interior, idx + shift, idx.astype(np.float64))


def _frame_rms(samples: np.ndarray, n_frames: int, length: int) -> np.ndarray:
    segs, complete = _segments(samples, length, n_frames)
    rms = np.sqrt(np.mean(segs**2, axis=1))
    return np.where(complete, rms, 0.0)


def _local_minima(band: np.ndarray) -> np.ndarray:
    """Boolean mask of strict-or-plateau local minima per row (edges excluded)."""
    mask = np.zeros_like(band, dtype=bool)
    mask[:, 1:-1] = (band[:, 1:-1] <= band[:, :-2]) & (band[:, 1:-1] <= band[:, 2:])
    return mask


def _first_qualified_extremum(
    band: np.ndarray, is_candidate: np.ndarray, fallback: np.ndarray
) -> np.ndarray:
    """Per row: the first candidate column, else the fallback column."""
    has = is_candidate.any(axis=1)
    first = np.argmax(is_candidate, axis=1)
    return np.where(has, first, fallback)


class PitchExtractor(Protocol):
    """Anything that maps a clip to a frame track on the 10 ms grid."""

    name: str

    def extract(self, clip: AudioClip) -> FrameTrack: ...


class YinExtractor:
    """Cumulative mean normalized difference function estimator.

    Per frame, computes the difference function
    ``d(tau) = sum_n (x[n] - x[n+tau])^2`` over an 800-sample window via
    FFT correlation, normalizes it cumulatively, and takes the first lag
    dipping below ``pick_threshold`` (or the global minimum).  A frame
    is voiced when that minimum is below ``voicing_threshold``.
    """

    name = "yin"

    def __init__(
        self,
        window: int = FRAME_SAMPLES,
        pick_threshold: float = 0.1,
        voicing_threshold: float = 0.35,
        fmin: float = _SEARCH_FMIN,
        fmax: float = _SEARCH_FMAX,
    ):
        self.window = window
        self.pick_threshold = pick_threshold
        self.voicing_threshold = voicing_threshold
        self.fmin = fmin
        self.fmax = fmax

    def extract(self, clip: AudioClip) -> FrameTrack:
        sr = clip.sample_rate
        tau_min = max(2, int(np.floor(sr / self.fmax)))
        tau_max = int(np.ceil(sr / self.fmin))
        w = self.window
        seg_len = w + tau_max + 1
        n_frames = frame_count(len(clip))
        if n_frames == 0:
            return FrameTrack(np.zeros(0), np.zeros(0, dtype=bool))
        segs, complete = _segments(clip.samples, seg_len, n_frames)

        nfft = int(2 ** np.ceil(np.log2(seg_len + w)))
        spec_full = np.fft.rfft(segs, nfft, axis=1)
        head = np.zeros_like(segs)
        head[:, :w] = segs[:, :w]
        spec_head = np.fft.rfft(head, nfft, axis=1)
        corr = np.fft.irfft(spec_full * np.conj(spec_head), nfft, axis=1)[:, : tau_max + 1]

        sq = np.concatenate([np.zeros((segs.shape[0], 1)), np.cumsum(segs**2, axis=1)], axis=1)
        r0_head = sq[:, w] - sq[:, 0]
        taus = np.arange(tau_max + 1)
        r0_shift = sq[:, taus + w] - sq[:, taus]
        diff = r0_head[:, None] + r0_shift - 2.0 * corr
        diff = np.maximum(diff, 0.0)

        cum = np.cumsum(diff[:, 1:], axis=1)
        cmndf = np.ones_like(diff)
        cmndf[:, 1:] = diff[:, 1:] * taus[1:][None, :] / np.maximum(cum, 1e-12)

        band = cmndf[:, tau_min : tau_max + 1]
        # First local minimum below the pick threshold, not the first
        # threshold crossing: the crossing sits on the dip's left flank
        # and refines sharp (a ~1% bias at soprano range).
        dips = _local_minima(band) & (band < self.pick_threshold)
        fallback = np.argmin(band, axis=1)
        pick = _first_qualified_extremum(band, dips, fallback) + tau_min
        depth = cmndf[np.arange(n_frames), pick]

        tau = _parabolic_refine(cmndf, pick)
        f0 = sr / np.maximum(tau, 1e-6)
        voiced = complete & (depth < self.voicing_threshold)
        energy_ok = _frame_rms(clip.samples, n_frames, w) > _ENERGY_GATE
        return _finalize_track(f0, voiced, energy_ok)


class AutocorrelationExtractor:
    """Windowed autocorrelation peak picking.

    Uses a Hann-windowed 1024-sample segment, divides the signal
    autocorrelation by the window autocorrelation to undo the taper, and
    voices a frame when the strongest in-range peak is a sufficiently
    large fraction of lag-zero energy.
    """

    name = "acf"

    def __init__(
        self,
        window: int = 1024,
        voicing_threshold: float = 0.45,
        fmin: float = _SEARCH_FMIN,
        fmax: float = _SEARCH_FMAX,
    ):
        self.window = window
        self.voicing_threshold = voicing_threshold
        self.fmin = fmin
        self.fmax = fmax

    def extract(self, clip: AudioClip) -> FrameTrack:
        sr = clip.sample_rate
        tau_min = max(2, int(np.floor(sr / self.fmax)))
        tau_max = min(int(np.ceil(sr / self.fmin)), self.window - 2)
        n_frames = frame_count(len(clip))
        if n_frames == 0:
            return FrameTrack(np.zeros(0), np.zeros(0, dtype=bool))
        segs, complete = _segments(clip.samples, self.window, n_frames)
        win = np.hanning(self.window)

        nfft = int(2 ** np.ceil(np.log2(2 * self.window)))
        spec = np.fft.rfft(segs * win[None, :], nfft, axis=1)
        acf = np.fft.irfft(np.abs(spec) ** 2, nfft, axis=1)[:, : tau_max + 1]
        wspec = np.fft.rfft(win, nfft)
        wacf = np.fft.irfft(np.abs(wspec) ** 2, nfft)[: tau_max + 1]
        norm = acf / np.maximum(wacf[None, :], 1e-12)
        r0 = np.maximum(norm[:, 0], 1e-12)
        rel = norm / r0[:, None]

        band = rel[:, tau_min : tau_max + 1]
        # Periodic signals repeat their peak at every lag multiple and the
        # taper correction inflates the tail of the band, so a plain argmax
        # drifts to long lags.  Score only interior local maxima and take
        # the shortest lag within 90% of the best peak.
        lmax = _local_minima(-band)
        masked = np.where(lmax, band, -np.inf)
        best = masked.max(axis=1)
        has_peak = np.isfinite(best)
        floor = np.maximum(self.voicing_threshold, 0.9 * best)
        qualified = lmax & (band >= floor[:, None])
        pick = _first_qualified_extremum(band, qualified, np.argmax(masked, axis=1)) + tau_min
        strength = np.where(has_peak, rel[np.arange(n_frames), pick], 0.0)

        tau = _parabolic_refine(rel, pick)
        f0 = sr / np.maximum(tau, 1e-6)
        voiced = complete & (strength > self.voicing_threshold)
        energy_ok = _frame_rms(clip.samples, n_frames, self.window) > _ENERGY_GATE
        return _finalize_track(f0, voiced, energy_ok)


class CepstrumExtractor:
    """Cepstral peak picking.

    Takes the real cepstrum of each Hann-windowed segment and voices a
    frame when the in-range quefrency peak stands out from the band
    (peak z-score above ``prominence``).  Less precise than the other
    two but fails independently, which is what the median wants.
    """

    name = "cepstrum"

    def __init__(
        self,
        window: int = 1024,
        prominence: float = 3.5,
        fmin: float = _SEARCH_FMIN,
        fmax: float = _SEARCH_FMAX,
    ):
        self.window = window
        self.prominence = prominence
        self.fmin = fmin
        self.fmax = fmax

    def extract(self, clip: AudioClip) -> FrameTrack:
        sr = clip.sample_rate
        tau_min = max(2, int(np.floor(sr / self.fmax)))
        tau_max = min(int(np.ceil(sr / self.fmin)), self.window // 2 - 2)
        n_frames = frame_count(len(clip))
        if n_frames == 0:
            return FrameTrack(np.zeros(0), np.zeros(0, dtype=bool))
        segs, complete = _segments(clip.samples, self.window, n_frames)
        win = np.hanning(self.window)
        spec = np.abs(np.fft.rfft(segs * win[None, :], axis=1))
        cep = np.fft.irfft(np.log(np.maximum(spec, 1e-10)), axis=1)

        band = cep[:, tau_min : tau_max + 1]
        lmax = _local_minima(-band)
        masked = np.where(lmax, band, -np.inf)
        peak = np.where(lmax.any(axis=1), np.argmax(masked, axis=1), np.argmax(band, axis=1))
        peak = peak + tau_min
        mean = band.mean(axis=1)
        std = np.maximum(band.std(axis=1), 1e-12)
        score = (cep[np.arange(n_frames), peak] - mean) / std

        tau = _parabolic_refine(cep, peak)
        f0 = sr / np.maximum(tau, 1e-6)
        voiced = complete & (score > self.prominence)
        energy_ok = _frame_rms(clip.samples, n_frames, self.window) > _ENERGY_GATE
        return _finalize_track(f0, voiced, energy_ok)


def snap_to_grid(
    f0: np.ndarray,
    vuv: np.ndarray,
    src_hop_samples: int,
    n_frames: int,
    dst_hop_samples: int = HOP_SAMPLES,
) -> FrameTrack:
    """Resample a foreign-grid track to the canonical grid.

    External tools often emit tracks on their own hop; this picks the
    nearest source frame for each canonical frame.  Out-of-range source
    positions map to the nearest edge frame.
    """
    if src_hop_samples <= 0:
        raise ParameterError("source hop must be positive")
    src = np.asarray(f0, dtype=np.float64)
    if src.size == 0:
        return FrameTrack(np.zeros(n_frames), np.zeros(n_frames, dtype=bool))
    pos = np.arange(n_frames) * dst_hop_samples / src_hop_samples
    idx = np.clip(np.round(pos).astype(np.int64), 0, src.shape[0] - 1)
    picked = src[idx]
    voiced = np.asarray(vuv, dtype=bool)[idx]
    in_range = (picked >= F0_FLOOR) & (picked <= F0_CEIL)
    return FrameTrack(np.where(voiced & in_range, picked, 0.0), voiced & in_range)


# -- registry ---------------------------------------------------------------

_REGISTRY: dict[str, Callable[[], PitchExtractor]] = {}


def register_extractor(name: str, factory: Callable[[], PitchExtractor]) -> None:
    """Register an estimator factory under a lookup name."""
    _REGISTRY[name] = factory


def get_extractor(name: str) -> PitchExtractor:
    """Instantiate a registered estimator by name."""
    if name not in _REGISTRY:
        raise ParameterError(
            f"unknown pitch extractor '{name}' (available: {', '.join(sorted(_REGISTRY))})"
        )
    return _REGISTRY[name]()


def available_extractors() -> list[str]:
    return sorted(_REGISTRY)


def _make_pyin():
    try:
        import librosa
    except ImportError as exc:
        raise ParameterError("extractor 'pyin' requires the librosa package") from exc

    class PyinExtractor:
        name = "pyin"

        def extract(self, clip: AudioClip) -> FrameTrack:
            f0, _, voiced_prob = librosa.pyin(
                clip.samples.astype(np.float32),
                fmin=F0_FLOOR,
                fmax=F0_CEIL,
                sr=clip.sample_rate,
                frame_length=2048,
                hop_length=HOP_SAMPLES,
                center=False,
            )
            f0 = np.nan_to_num(f0, nan=0.0)
            vuv = voiced_prob > 0.5
            return snap_to_grid(f0, vuv, HOP_SAMPLES, frame_count(len(clip)))

    return PyinExtractor()


def _make_parselmouth():
    try:
        import parselmouth
    except ImportError as exc:
        raise ParameterError("extractor 'praat' requires the praat-parselmouth package") from exc

    class ParselmouthExtractor:
        name = "praat"

        def extract(self, clip: AudioClip) -> FrameTrack:
            snd = parselmouth.Sound(clip.samples, sampling_frequency=clip.sample_rate)
            hop_s = HOP_SAMPLES / clip.sample_rate
            pitch = snd.to_pitch(time_step=hop_s, pitch_floor=F0_FLOOR, pitch_ceiling=F0_CEIL)
            f0 = pitch.selected_array["frequency"]
            return snap_to_grid(f0, f0 > 0, HOP_SAMPLES, frame_count(len(clip)))

    return ParselmouthExtractor()


register_extractor("yin", YinExtractor)
register_extractor("acf", AutocorrelationExtractor)
register_extractor("cepstrum", CepstrumExtractor)
register_extractor("pyin", _make_pyin)
register_extractor("praat", _make_parselmouth)

DEFAULT_EXTRACTORS = ("yin", "acf", "cepstrum")
