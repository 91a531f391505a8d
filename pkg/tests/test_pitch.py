"""Pitch estimators: track invariants, tone accuracy, grid snapping."""

import numpy as np
import pytest

from melosvc.audio import CANONICAL_RATE, AudioClip
from melosvc.errors import ParameterError
from melosvc.pitch import (
    DEFAULT_EXTRACTORS,
    F0_CEIL,
    F0_FLOOR,
    AutocorrelationExtractor,
    CepstrumExtractor,
    FrameTrack,
    YinExtractor,
    available_extractors,
    get_extractor,
    register_extractor,
    snap_to_grid,
)
from melosvc.synth import synth_vocal_clip

EXTRACTORS = [YinExtractor, AutocorrelationExtractor, CepstrumExtractor]


class TestFrameTrack:
    def test_unvoiced_frames_carry_zero_f0(self):
        track = FrameTrack(np.array([100.0, 200.0]), np.array([True, False]))
        assert track.f0_hz[1] == 0.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(Exception):
            FrameTrack(np.array([100.0]), np.array([True, False]))

    def test_voiced_f0_out_of_range_rejected(self):
        with pytest.raises(Exception):
            FrameTrack(np.array([5000.0]), np.array([True]))

    def test_len(self):
        assert len(FrameTrack(np.zeros(7), np.zeros(7, dtype=bool))) == 7


@pytest.mark.parametrize("extractor_cls", EXTRACTORS)
class TestExtractorsOnTones:
    def test_steady_tone_median(self, extractor_cls, sine_clip):
        track = extractor_cls().extract(sine_clip)
        voiced = track.f0_hz[track.vuv]
        assert track.vuv.mean() > 0.9
        assert abs(np.median(voiced) - 440.0) < 3.0

    def test_low_and_high_registers(self, extractor_cls):
        for f0 in (160.0, 620.0):
            clip = synth_vocal_clip(
                0.7, f0, seed=int(f0), vibrato_cents=0.0, noise_rms=0.002, edge_silence=0.0
            )
            track = extractor_cls().extract(clip)
            voiced = track.f0_hz[track.vuv]
            assert voiced.size > 0
            assert abs(np.median(voiced) - f0) < 0.02 * f0

    def test_silence_is_unvoiced(self, extractor_cls):
        track = extractor_cls().extract(AudioClip(np.zeros(CANONICAL_RATE)))
        assert not track.vuv.any()

    def test_outputs_within_declared_range(self, extractor_cls, sine_clip):
        track = extractor_cls().extract(sine_clip)
        voiced = track.f0_hz[track.vuv]
        assert ((voiced >= F0_FLOOR) & (voiced <= F0_CEIL)).all()

    def test_deterministic(self, extractor_cls, sine_clip):
        a = extractor_cls().extract(sine_clip)
        b = extractor_cls().extract(sine_clip)
        np.testing.assert_array_equal(a.f0_hz, b.f0_hz)
        np.testing.assert_array_equal(a.vuv, b.vuv)


class TestGapVoicing:
    def test_mid_gap_unvoiced(self):
        clip = synth_vocal_clip(1.0, 300.0, seed=8, mid_gap=(0.45, 0.6), noise_rms=0.001)
        for cls in EXTRACTORS:
            track = cls().extract(clip)
            # frame at 0.52 s sits fully inside the gap
            gap_frame = int(0.52 * CANONICAL_RATE) // 160
            assert not track.vuv[gap_frame], cls.__name__


class TestSnapToGrid:
    def test_identity_hop(self):
        f0 = np.array([100.0, 110.0, 120.0])
        track = snap_to_grid(f0, np.ones(3, dtype=bool), 160, 3)
        np.testing.assert_array_equal(track.f0_hz, f0)

    def test_coarse_to_fine(self):
        # 320-sample source hop onto the 160-sample grid: each source
        # frame should appear twice (nearest-neighbour)
        f0 = np.array([100.0, 200.0])
        track = snap_to_grid(f0, np.ones(2, dtype=bool), 320, 4)
        assert track.f0_hz[0] == 100.0
        assert track.f0_hz[3] == 200.0

    def test_out_of_band_values_unvoiced(self):
        track = snap_to_grid(np.array([10.0]), np.array([True]), 160, 2)
        assert not track.vuv.any()

    def test_empty_source(self):
        track = snap_to_grid(np.zeros(0), np.zeros(0, dtype=bool), 160, 3)
        assert len(track) == 3
        assert not track.vuv.any()

    def test_bad_hop(self):
        with pytest.raises(ParameterError):
            snap_to_grid(np.array([100.0]), np.array([True]), 0, 1)


class TestRegistry:
    def test_defaults_registered(self):
        names = available_extractors()
        for name in DEFAULT_EXTRACTORS:
            assert name in names

    def test_unknown_name(self):
        with pytest.raises(ParameterError):
            get_extractor("does-not-exist")

    def test_custom_registration(self):
        class Fixed:
            name = "fixed"

            def extract(self, clip):
                n = len(clip) // 160
                return FrameTrack(np.full(n, 220.0), np.ones(n, dtype=bool))

        register_extractor("fixed-test", Fixed)
        track = get_extractor("fixed-test").extract(AudioClip(np.zeros(1600)))
        assert (track.f0_hz == 220.0).all()
