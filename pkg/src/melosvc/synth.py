"""Synthetic toy corpora.

Generates small singing-like clips (vibrato sine with amplitude
envelope, voiced/unvoiced structure, light noise) and background tracks
(chord of sines plus filtered noise).  These are what the test-suite and
the ``synth-corpus`` command use to exercise the full pipeline without
real recordings.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .audio import CANONICAL_RATE, AudioClip, write_wav
from .errors import ParameterError


def synth_vocal_clip(
    duration: float,
    f0_base: float,
    seed: int,
    sample_rate: int = CANONICAL_RATE,
    vibrato_cents: float = 35.0,
    vibrato_hz: float = 5.0,
    amplitude: float = 0.35,
    noise_rms: float = 0.003,
    edge_silence: float = 0.08,
    mid_gap: tuple[float, float] | None = None,
    source_id: str = "",
) -> AudioClip:
    """A vibrato tone with harmonics, silent edges, and an optional gap.

    The silent stretches give every clip both voiced and unvoiced
    frames, which the pitch oracle and the voicing head both need.
    """
    if duration <= 0 or f0_base <= 0:
        raise ParameterError("duration and f0_base must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate

    f0 = f0_base * 2.0 ** (
        vibrato_cents / 1200.0 * np.sin(2 * np.pi * vibrato_hz * t + rng.uniform(0, 2 * np.pi))
    )
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    tone = np.sin(phase) + 0.35 * np.sin(2 * phase) + 0.15 * np.sin(3 * phase)

    envelope = np.ones(n)
    edge = int(edge_silence * sample_rate)
    if edge > 0:
        envelope[:edge] = 0.0
        envelope[-edge:] = 0.0
    if mid_gap is not None:
        g0, g1 = (int(mid_gap[0] * sample_rate), int(mid_gap[1] * sample_rate))
        envelope[g0:g1] = 0.0
    ramp = max(1, int(0.012 * sample_rate))
    kernel = np.ones(ramp) / ramp
    envelope = np.convolve(envelope, kernel, mode="same")

    samples = amplitude * envelope * tone
    if noise_rms > 0:
        samples = samples + rng.normal(0.0, noise_rms, n)
    peak = float(np.max(np.abs(samples)))
    if peak > 1.0:
        samples = samples / peak
    return AudioClip(samples, sample_rate, source_id=source_id or f"synth-vocal-{seed}")


def synth_bgm_clip(
    duration: float,
    seed: int,
    sample_rate: int = CANONICAL_RATE,
    rms: float = 0.15,
    source_id: str = "",
) -> AudioClip:
    """A wideband accompaniment stand-in: a sine chord over pink-ish noise."""
    if duration <= 0:
        raise ParameterError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    samples = np.zeros(n)
    for _ in range(4):
        freq = float(np.exp(rng.uniform(np.log(70.0), np.log(2400.0))))
        samples += rng.uniform(0.4, 1.0) * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    noise = rng.normal(0.0, 1.0, n)
    # One-pole lowpass tilts the noise toward low frequencies.
    samples += 1.5 * lfilter([1.0], [1.0, -0.9], noise)
    samples *= rms / max(float(np.sqrt(np.mean(samples**2))), 1e-12)
    peak = float(np.max(np.abs(samples)))
    if peak > 1.0:
        samples = samples / peak
    return AudioClip(samples, sample_rate, source_id=source_id or f"synth-bgm-{seed}")


def make_toy_samples(
    n_clips: int,
    seed: int,
    duration: float = 2.0,
    f0_range: tuple[float, float] = (160.0, 420.0),
) -> list[AudioClip]:
    """In-memory vocal clips with per-clip base pitch spread over ``f0_range``."""
    rng = np.random.default_rng(seed)
    clips = []
    for i in range(n_clips):
        f0 = float(np.exp(rng.uniform(np.log(f0_range[0]), np.log(f0_range[1]))))
        gap = None
        if duration >= 1.5 and i % 2 == 0:
            mid = duration * rng.uniform(0.4, 0.55)
            gap = (mid, mid + duration * 0.12)
        clips.append(
            synth_vocal_clip(
                duration,
                f0,
                seed=int(rng.integers(0, 2**31)),
                mid_gap=gap,
                source_id=f"toy-{i:03d}",
            )
        )
    return clips


def write_toy_corpus(
    root: str | Path,
    layout: str,
    n_songs: int,
    seed: int,
    duration: float = 2.0,
    singers: int = 6,
) -> Path:
    """Materialize a toy corpus on disk in a manifest-compatible layout.

    ``stems`` writes ``<song>/vocal.wav`` + ``<song>/bgm.wav``; ``clean``
    writes ``<singer>/<clip>.wav`` with clips spread over ``singers``
    singer directories (each singer keeps a characteristic register).
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    if layout == "stems":
        for i in range(n_songs):
            song = root / f"song{i:03d}"
            song.mkdir(exist_ok=True)
            f0 = float(np.exp(rng.uniform(np.log(160.0), np.log(420.0))))
            vocal = synth_vocal_clip(
                duration, f0, seed=int(rng.integers(0, 2**31)), source_id=song.name
            )
            bgm = synth_bgm_clip(duration * 1.3, seed=int(rng.integers(0, 2**31)))
            write_wav(song / "vocal.wav", vocal)
            write_wav(song / "bgm.wav", bgm)
    elif layout == "clean":
        registers = np.exp(np.linspace(np.log(170.0), np.log(400.0), max(singers, 1)))
        for i in range(n_songs):
            singer = i % max(singers, 1)
            singer_dir = root / f"singer{singer:02d}"
            singer_dir.mkdir(exist_ok=True)
            f0 = float(registers[singer] * np.exp(rng.uniform(-0.1, 0.1)))
            clip = synth_vocal_clip(
                duration, f0, seed=int(rng.integers(0, 2**31)), source_id=f"s{singer}c{i}"
            )
            write_wav(singer_dir / f"clip{i:03d}.wav", clip)
    else:
        raise ParameterError(f"unknown layout '{layout}'")
    return root
