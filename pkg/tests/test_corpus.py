"""Synthetic speech-like corpus generator."""

from pathlib import Path

import numpy as np
import pytest

from speechprint.audio import decode_wav
from speechprint.corpus import synth_corpus, synth_speech_like
from speechprint.errors import ConfigError
from speechprint.spectral import SpectralConfig, make_image


class TestSpeechLike:
    def test_deterministic_per_seed(self):
        a = synth_speech_like(3.0, 8000, seed=5)
        b = synth_speech_like(3.0, 8000, seed=5)
        assert np.array_equal(a.samples, b.samples)

    def test_seeds_produce_distinct_audio(self):
        a = synth_speech_like(3.0, 8000, seed=1)
        b = synth_speech_like(3.0, 8000, seed=2)
        assert not np.array_equal(a.samples, b.samples)

    def test_duration_and_rate(self):
        clip = synth_speech_like(2.5, 8000, seed=0)
        assert len(clip) == 20000
        assert clip.sample_rate == 8000

    def test_peak_normalised(self):
        clip = synth_speech_like(2.0, 8000, seed=3)
        assert np.abs(clip.samples).max() == pytest.approx(0.65)

    def test_energy_in_vocal_band(self):
        """The pitch fundamental keeps the 100-350 Hz analysis band alive."""
        clip = synth_speech_like(5.0, 8000, seed=4)
        spectrum = np.abs(np.fft.rfft(clip.samples)) ** 2
        freqs = np.fft.rfftfreq(len(clip), 1.0 / clip.sample_rate)
        vocal = spectrum[(freqs >= 100.0) & (freqs <= 350.0)].sum()
        assert vocal / spectrum.sum() > 0.05

    def test_nonpositive_duration_rejected(self):
        with pytest.raises(ConfigError):
            synth_speech_like(0.0, 8000)


class TestCorpus:
    def test_regenerates_identically(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        synth_corpus(a_dir, n_files=3, duration_s=2.0, seed=9)
        synth_corpus(b_dir, n_files=3, duration_s=2.0, seed=9)
        for a, b in zip(sorted(a_dir.iterdir()), sorted(b_dir.iterdir())):
            assert a.name == b.name
            assert a.read_bytes() == b.read_bytes()

    def test_names_and_count(self, tmp_path):
        paths = synth_corpus(tmp_path / "c", n_files=4, duration_s=1.0, seed=0)
        assert [p.name for p in paths] == [
            "file000.wav", "file001.wav", "file002.wav", "file003.wav",
        ]

    def test_files_decode_to_spec(self, small_corpus_dir):
        for path in sorted(Path(small_corpus_dir).glob("*.wav")):
            clip = decode_wav(path.read_bytes())
            assert clip.sample_rate == 8000
            assert clip.duration_seconds == pytest.approx(12.0)

    def test_files_are_mutually_distinct(self, small_corpus_dir):
        """No two files share spectral structure: block-image correlation low."""
        config = SpectralConfig.for_variant("mel-wide")
        images = [
            make_image(decode_wav(p.read_bytes()), config).data.ravel()
            for p in sorted(Path(small_corpus_dir).glob("*.wav"))
        ]
        for i in range(len(images)):
            for j in range(i + 1, len(images)):
                a = images[i] - images[i].mean()
                b = images[j] - images[j].mean()
                corr = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
                assert corr < 0.8

    def test_bad_count_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            synth_corpus(tmp_path / "x", n_files=0)
