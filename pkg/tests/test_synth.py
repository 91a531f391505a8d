"""Synthetic corpus generator: deterministic, labeled-friendly audio."""

import numpy as np
import pytest

from melosvc.audio import CANONICAL_RATE
from melosvc.errors import ParameterError
from melosvc.synth import (
    make_toy_samples,
    synth_bgm_clip,
    synth_vocal_clip,
    write_toy_corpus,
)


class TestVocalClip:
    def test_deterministic(self):
        a = synth_vocal_clip(0.5, 300.0, seed=1)
        b = synth_vocal_clip(0.5, 300.0, seed=1)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_length_and_rate(self):
        clip = synth_vocal_clip(0.5, 300.0, seed=1)
        assert clip.sample_rate == CANONICAL_RATE
        assert len(clip) == 8000

    def test_edges_are_silent(self):
        clip = synth_vocal_clip(1.0, 300.0, seed=1, noise_rms=0.0)
        assert float(np.abs(clip.samples[:400]).max()) < 1e-6
        assert float(np.abs(clip.samples[-400:]).max()) < 1e-6

    def test_mid_gap_is_quiet(self):
        clip = synth_vocal_clip(1.0, 300.0, seed=1, mid_gap=(0.4, 0.6), noise_rms=0.0)
        gap = clip.samples[int(0.45 * CANONICAL_RATE) : int(0.55 * CANONICAL_RATE)]
        assert float(np.abs(gap).max()) < 1e-6

    def test_dominant_frequency_matches_f0(self):
        clip = synth_vocal_clip(1.0, 440.0, seed=2, vibrato_cents=0.0, edge_silence=0.0)
        spec = np.abs(np.fft.rfft(clip.samples))
        freqs = np.fft.rfftfreq(len(clip), 1 / CANONICAL_RATE)
        assert abs(freqs[np.argmax(spec)] - 440.0) < 2.0

    def test_bad_duration(self):
        with pytest.raises(ParameterError):
            synth_vocal_clip(0.0, 300.0, seed=1)


class TestBgmClip:
    def test_rms_calibrated(self):
        clip = synth_bgm_clip(1.0, seed=3, rms=0.15)
        rms = float(np.sqrt(np.mean(clip.samples**2)))
        assert rms == pytest.approx(0.15, rel=0.05)

    def test_deterministic(self):
        np.testing.assert_array_equal(
            synth_bgm_clip(0.5, seed=3).samples, synth_bgm_clip(0.5, seed=3).samples
        )


class TestToySamples:
    def test_count_and_ids(self):
        clips = make_toy_samples(5, seed=9, duration=0.5)
        assert len(clips) == 5
        assert [c.source_id for c in clips] == [f"toy-{i:03d}" for i in range(5)]

    def test_pitch_spread(self):
        clips = make_toy_samples(8, seed=9, duration=0.5)
        peaks = []
        for clip in clips:
            spec = np.abs(np.fft.rfft(clip.samples))
            freqs = np.fft.rfftfreq(len(clip), 1 / CANONICAL_RATE)
            peaks.append(freqs[np.argmax(spec)])
        assert max(peaks) / min(peaks) > 1.3


class TestToyCorpus:
    def test_stems_layout(self, tmp_path):
        root = write_toy_corpus(tmp_path / "c", "stems", n_songs=3, seed=4, duration=0.3)
        songs = sorted(p.name for p in root.iterdir())
        assert len(songs) == 3
        for song in songs:
            assert (root / song / "vocal.wav").exists()
            assert (root / song / "bgm.wav").exists()

    def test_clean_layout(self, tmp_path):
        root = write_toy_corpus(
            tmp_path / "c", "clean", n_songs=6, seed=4, duration=0.3, singers=3
        )
        singers = [p for p in root.iterdir() if p.is_dir()]
        assert len(singers) == 3
        assert sum(len(list(s.glob("*.wav"))) for s in singers) == 6

    def test_unknown_layout(self, tmp_path):
        with pytest.raises(ParameterError):
            write_toy_corpus(tmp_path / "c", "flat", n_songs=2, seed=4)
