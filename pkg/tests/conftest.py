"""Shared fixtures: a small deterministic corpus and helper builders."""

import numpy as np
import pytest

from speechprint.audio import AudioBuffer
from speechprint.corpus import synth_corpus, synth_speech_like


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0xBEEF)


@pytest.fixture(scope="session")
def speech_clip():
    """10 s of synthetic speech-like audio at 8 kHz."""
    return synth_speech_like(10.0, 8000, seed=7)


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory):
    """Six 12 s files, enough for retrieval tests without bench cost."""
    path = tmp_path_factory.mktemp("corpus6")
    synth_corpus(path, n_files=6, duration_s=12.0, seed=11)
    return path


@pytest.fixture(scope="session")
def desk_corpus_dir(tmp_path_factory):
    """The 30-file reference corpus the benchmark criteria run against."""
    path = tmp_path_factory.mktemp("corpus30")
    synth_corpus(path, n_files=30, duration_s=15.0, seed=0)
    return path


def make_tone(freq_hz: float, duration_s: float, rate: int, amp: float = 0.5):
    t = np.arange(int(duration_s * rate)) / rate
    return AudioBuffer(amp * np.sin(2.0 * np.pi * freq_hz * t), rate)


@pytest.fixture
def tone():
    return make_tone
