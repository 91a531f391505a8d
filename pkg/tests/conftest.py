"""Shared fixtures: single-thread torch, toy audio, labelled samples."""

import numpy as np
import pytest
import torch

from melosvc.labeling import label_clip
from melosvc.melody import TrainSample
from melosvc.synth import make_toy_samples, synth_bgm_clip, synth_vocal_clip

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def toy_clips():
    """Six 1.5 s vocal clips over a spread of registers."""
    return make_toy_samples(6, seed=11, duration=1.5)


@pytest.fixture(scope="session")
def labelled_samples(toy_clips):
    return [
        TrainSample.from_clip(clip, label_clip(clip), key=f"clip{i}")
        for i, clip in enumerate(toy_clips)
    ]


@pytest.fixture(scope="session")
def bgm_pool():
    return [synth_bgm_clip(2.0, seed=900 + i) for i in range(3)]


@pytest.fixture(scope="session")
def sine_clip():
    """Steady 440 Hz tone, no vibrato, no silent edges."""
    return synth_vocal_clip(
        1.0, 440.0, seed=5, vibrato_cents=0.0, noise_rms=0.001, edge_silence=0.0
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
