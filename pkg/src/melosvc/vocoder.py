"""Waveform synthesis from mel spectrograms.

Neural vocoders are external to this package; what lives here is a
self-contained fallback (mel filterbank pseudo-inverse followed by
Griffin-Lim phase recovery on the 50 ms / 10 ms grid) plus a subprocess
bridge for plugging in an external vocoder, and the ground-truth-aligned
export used to fine-tune one on SVC outputs.

The fallback is deterministic: phase recovery starts from zero phase,
so the same mel always synthesizes the same waveform.
"""

from __future__ import annotations

import logging
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import savemat

from .audio import AudioClip, content_hash, write_wav
from .dsp import (
    FRAME_MS,
    FRAME_SAMPLES,
    HOP_MS,
    HOP_SAMPLES,
    MelSpectrogram,
    SAMPLE_RATE,
    _window,
    mel_filterbank,
)
from .errors import GridError, ParameterError, StageError

log = logging.getLogger(__name__)


def _check_grid(mel: MelSpectrogram) -> None:
    if abs(mel.frame_ms - FRAME_MS) > 1e-6 or abs(mel.hop_ms - HOP_MS) > 1e-6:
        raise GridError(
            f"mel grid {mel.frame_ms:g}/{mel.hop_ms:g} ms does not match the"
            f" synthesis grid {FRAME_MS:g}/{HOP_MS:g} ms"
        )
    if mel.sample_rate != SAMPLE_RATE:
        raise GridError(f"mel sample rate {mel.sample_rate} != {SAMPLE_RATE}")


def mel_to_linear(mel: MelSpectrogram) -> np.ndarray:
    """Least-squares magnitude spectrogram from a log-mel spectrogram.

    Applies the filterbank pseudo-inverse and clips negative leakage to
    zero.  Shape ``(frames, frame_samples // 2 + 1)``.
    """
    _check_grid(mel)
    bank = mel_filterbank(mel.n_mels, FRAME_SAMPLES, mel.sample_rate)
    linear = np.exp(mel.frames) @ np.linalg.pinv(bank).T
    return np.maximum(linear, 0.0)


def _istft(spec: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Overlap-add inverse of the package STFT (window-squared normalized).

    Samples where the window envelope has essentially no support (the
    outermost couple of ms) are zeroed instead of divided; dividing by a
    vanishing envelope there turns rounding noise into clicks.
    """
    n_frames, _ = spec.shape
    frames = np.fft.irfft(spec, FRAME_SAMPLES, axis=1) * window[None, :]
    length = (n_frames - 1) * HOP_SAMPLES + FRAME_SAMPLES
    out = np.zeros(length)
    norm = np.zeros(length)
    wsq = window**2
    for t in range(n_frames):
        start = t * HOP_SAMPLES
        out[start : start + FRAME_SAMPLES] += frames[t]
        norm[start : start + FRAME_SAMPLES] += wsq
    supported = norm > 1e-3 * norm.max()
    out[supported] /= norm[supported]
    out[~supported] = 0.0
    return out


def _stft_mag_phase(samples: np.ndarray, window: np.ndarray, n_frames: int) -> np.ndarray:
    idx = np.arange(n_frames)[:, None] * HOP_SAMPLES + np.arange(FRAME_SAMPLES)[None, :]
    padded = np.concatenate([samples, np.zeros(max(0, idx.max() + 1 - samples.shape[0]))])
    return np.fft.rfft(padded[idx] * window[None, :], axis=1)


def griffin_lim(magnitude: np.ndarray, n_iter: int = 60) -> np.ndarray:
    """Recover a waveform whose STFT magnitude approximates the target.

    Classic alternating projection with deterministic zero-phase
    initialization.  ``magnitude`` is ``(frames, bins)`` on the package
    grid; the result has ``frames * hop`` samples.
    """
    if magnitude.ndim != 2 or magnitude.shape[1] != FRAME_SAMPLES // 2 + 1:
        raise ParameterError(
            f"magnitude must be (frames, {FRAME_SAMPLES // 2 + 1}), got {magnitude.shape}"
        )
    if n_iter < 1:
        raise ParameterError("n_iter must be at least 1")
    window = _window("hann", FRAME_SAMPLES)
    n_frames = magnitude.shape[0]
    spec = magnitude.astype(np.complex128)
    samples = _istft(spec, window)
    for _ in range(n_iter):
        rebuilt = _stft_mag_phase(samples, window, n_frames)
        phase = rebuilt / np.maximum(np.abs(rebuilt), 1e-12)
        samples = _istft(magnitude * phase, window)
    return samples[: n_frames * HOP_SAMPLES]


@dataclass
class FallbackVocoder:
    """Griffin-Lim synthesis; always available, never great."""

    n_iter: int = 60

    def synthesize(self, mel: MelSpectrogram) -> AudioClip:
        samples = griffin_lim(mel_to_linear(mel), self.n_iter)
        peak = float(np.max(np.abs(samples))) if samples.size else 0.0
        if peak > 1.0:
            samples = samples / peak
        return AudioClip(samples, mel.sample_rate, source_id="griffin-lim")


@dataclass
class ExternalVocoder:
    """Bridge to an external vocoder process.

    ``command`` is a template with ``{mel}`` and ``{out}`` placeholders;
    the mel is handed over as an ``.npz`` with ``mel`` (frames x bands,
    log scale), ``frame_ms``, ``hop_ms``, and ``sample_rate`` keys, and
    the process must write a WAV to ``{out}``.
    """

    command: str

    def synthesize(self, mel: MelSpectrogram) -> AudioClip:
        from .audio import ingest

        _check_grid(mel)
        with tempfile.TemporaryDirectory(prefix="melosvc-vocoder-") as tmp:
            mel_path = Path(tmp) / "mel.npz"
            out_path = Path(tmp) / "out.wav"
            np.savez(
                mel_path,
                mel=mel.frames,
                frame_ms=mel.frame_ms,
                hop_ms=mel.hop_ms,
                sample_rate=mel.sample_rate,
            )
            cmd = self.command.format(mel=mel_path, out=out_path)
            proc = subprocess.run(cmd, shell=True, capture_output=True, text=True)
            if proc.returncode != 0:
                raise StageError(
                    "vocoder", f"external vocoder exited {proc.returncode}: {proc.stderr.strip()}"
                )
            if not out_path.exists():
                raise StageError("vocoder", f"external vocoder produced no file at {out_path}")
            return ingest(out_path)


def make_vocoder(spec: str):
    """``"fallback"``, ``"fallback:<iters>"``, or ``"external:<command>"``."""
    if spec == "fallback":
        return FallbackVocoder()
    if spec.startswith("fallback:"):
        return FallbackVocoder(n_iter=int(spec.split(":", 1)[1]))
    if spec.startswith("external:"):
        return ExternalVocoder(spec.split(":", 1)[1])
    raise ParameterError(f"unknown vocoder '{spec}'")


def synthesize(mel: MelSpectrogram, vocoder=None) -> AudioClip:
    """Vocode a mel spectrogram (fallback vocoder when none is given)."""
    vocoder = vocoder or FallbackVocoder()
    _check_grid(mel)
    return vocoder.synthesize(mel)


@dataclass
class ExportReport:
    """Outcome of a ground-truth-aligned export."""

    exported: list[str]
    skipped: list[tuple[str, str]]


def gta_export(
    clips: list[AudioClip],
    reconstruct,
    out_dir: str | Path,
) -> ExportReport:
    """Export (reconstruction mel, original audio) pairs for vocoder
    fine-tuning.

    ``reconstruct`` maps a clip to its SVC reconstruction mel.  Each
    pair lands in ``<out_dir>/pairs/<content_hash>/`` as ``mel.mat``
    (keys ``mel``, ``frame_ms``, ``hop_ms``, ``sample_rate``) plus
    ``audio.wav``.  Per-clip failures are reported, not fatal.
    """
    out_dir = Path(out_dir)
    pairs_dir = out_dir / "pairs"
    pairs_dir.mkdir(parents=True, exist_ok=True)
    exported: list[str] = []
    skipped: list[tuple[str, str]] = []
    for clip in clips:
        try:
            mel = reconstruct(clip)
            _check_grid(mel)
            digest = content_hash(clip)
            pair_dir = pairs_dir / digest
            pair_dir.mkdir(exist_ok=True)
            savemat(
                pair_dir / "mel.mat",
                {
                    "mel": mel.frames,
                    "frame_ms": mel.frame_ms,
                    "hop_ms": mel.hop_ms,
                    "sample_rate": mel.sample_rate,
                },
            )
            write_wav(pair_dir / "audio.wav", clip)
            exported.append(digest)
        except Exception as exc:
            log.warning("gta export skipped '%s': %s", clip.source_id, exc)
            skipped.append((clip.source_id, str(exc)))
    return ExportReport(exported, skipped)
