"""Content feature providers."""

import numpy as np
import pytest

from melosvc.audio import AudioClip, content_hash
from melosvc.content import (
    CONTENT_DIM,
    FileContentProvider,
    StubContentProvider,
    make_content_provider,
)
from melosvc.errors import CompatibilityError, DataError, ParameterError
from melosvc.synth import synth_vocal_clip


@pytest.fixture(scope="module")
def stub():
    return StubContentProvider(dim=32, seed=997)


class TestStubProvider:
    def test_shape_on_10ms_grid(self, stub, sine_clip):
        feats = stub.features(sine_clip)
        assert feats.shape == (96, 32)
        assert feats.dtype == np.float32

    def test_deterministic_across_instances(self, sine_clip):
        a = StubContentProvider(dim=16, seed=4).features(sine_clip)
        b = StubContentProvider(dim=16, seed=4).features(sine_clip)
        np.testing.assert_array_equal(a, b)

    def test_seed_changes_features(self, sine_clip):
        a = StubContentProvider(dim=16, seed=4).features(sine_clip)
        b = StubContentProvider(dim=16, seed=5).features(sine_clip)
        assert not np.array_equal(a, b)

    def test_silence_stays_finite(self, stub):
        silence = synth_vocal_clip(1.0, 220.0, seed=0, amplitude=0.0, noise_rms=0.0)
        feats = stub.features(silence)
        assert np.isfinite(feats).all()

    def test_too_short_clip(self, stub):
        blip = AudioClip(np.zeros(400), 16000)  # half of one analysis frame
        with pytest.raises(DataError):
            stub.features(blip)


class TestFileProvider:
    def test_reads_by_content_hash(self, tmp_path, sine_clip):
        feats = np.random.default_rng(0).normal(size=(96, 8)).astype(np.float32)
        np.save(tmp_path / f"{content_hash(sine_clip)}.npy", feats)
        provider = FileContentProvider(tmp_path, dim=8)
        np.testing.assert_array_equal(provider.features(sine_clip), feats)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(ParameterError, match="not found"):
            FileContentProvider(tmp_path / "absent")

    def test_missing_clip_features(self, tmp_path, sine_clip):
        provider = FileContentProvider(tmp_path, dim=8)
        with pytest.raises(DataError, match="no content features"):
            provider.features(sine_clip)

    def test_wrong_shape_rejected(self, tmp_path, sine_clip):
        np.save(tmp_path / f"{content_hash(sine_clip)}.npy", np.zeros((96, 9), dtype=np.float32))
        provider = FileContentProvider(tmp_path, dim=8)
        with pytest.raises(CompatibilityError, match="shape"):
            provider.features(sine_clip)


class TestProviderSpecs:
    def test_stub_default(self):
        provider = make_content_provider("stub", dim=16)
        assert isinstance(provider, StubContentProvider)
        assert provider.dim == 16

    def test_stub_with_seed(self, sine_clip):
        a = make_content_provider("stub:123", dim=16).features(sine_clip)
        b = StubContentProvider(dim=16, seed=123).features(sine_clip)
        np.testing.assert_array_equal(a, b)

    def test_external(self, tmp_path):
        provider = make_content_provider(f"external:{tmp_path}", dim=8)
        assert isinstance(provider, FileContentProvider)

    def test_unknown_spec(self):
        with pytest.raises(ParameterError, match="unknown content provider"):
            make_content_provider("asr-v2")

    def test_default_dim_constant(self):
        assert make_content_provider("stub").dim == CONTENT_DIM
