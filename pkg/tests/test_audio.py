"""WAV codec, resampling and slicing behavior."""

import struct

import numpy as np
import pytest

from speechprint.audio import (
    AudioBuffer,
    clip_stats,
    decode_wav,
    dump_raw,
    encode_wav,
    resample,
    slice_seconds,
)
from speechprint.errors import (
    ConfigError,
    DecodeError,
    RangeError,
    UnsupportedFormat,
)


def pcm16_wav(values, rate=8000, channels=1):
    """Hand-built RIFF container around raw int16 values."""
    payload = np.asarray(values, dtype="<i2").tobytes()
    fmt = struct.pack("<HHIIHH", 1, channels, rate, rate * 2 * channels, 2 * channels, 16)
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    chunks += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks


class TestDecode:
    def test_silence_decodes_to_zeros(self):
        buf = decode_wav(pcm16_wav(np.zeros(8000, dtype=np.int16)))
        assert buf.sample_rate == 8000
        assert len(buf) == 8000
        assert np.all(buf.samples == 0.0)

    def test_stereo_downmix_is_channel_mean(self):
        left = np.full(100, 16384, dtype=np.int16)
        right = np.full(100, -16384, dtype=np.int16)
        interleaved = np.empty(200, dtype=np.int16)
        interleaved[0::2] = left
        interleaved[1::2] = right
        buf = decode_wav(pcm16_wav(interleaved, channels=2))
        assert len(buf) == 100
        np.testing.assert_allclose(buf.samples, 0.0)

    def test_most_negative_code_maps_to_minus_one(self):
        buf = decode_wav(pcm16_wav([-32768, 32767]))
        assert buf.samples[0] == -1.0
        assert buf.samples[1] == pytest.approx(32767 / 32768)

    def test_not_riff_raises(self):
        with pytest.raises(DecodeError):
            decode_wav(b"OggS" + b"\x00" * 40)

    def test_truncated_chunk_raises(self):
        data = pcm16_wav(np.zeros(100, dtype=np.int16))
        with pytest.raises(DecodeError):
            decode_wav(data[:-50])

    def test_missing_data_chunk_raises(self):
        fmt = struct.pack("<HHIIHH", 1, 1, 8000, 16000, 2, 16)
        chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
        data = b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks
        with pytest.raises(DecodeError):
            decode_wav(data)

    def test_unsupported_bit_depth_raises(self):
        fmt = struct.pack("<HHIIHH", 1, 1, 8000, 8000, 1, 8)
        chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
        chunks += b"data" + struct.pack("<I", 4) + b"\x00\x00\x00\x00"
        data = b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks
        with pytest.raises(UnsupportedFormat):
            decode_wav(data)

    def test_unsupported_format_code_raises(self):
        fmt = struct.pack("<HHIIHH", 0x55, 1, 8000, 16000, 2, 16)
        chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
        chunks += b"data" + struct.pack("<I", 4) + b"\x00" * 4
        data = b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks
        with pytest.raises(UnsupportedFormat):
            decode_wav(data)

    def test_float32_input_clipped_and_counted(self):
        clip_stats.reset()
        payload = np.array([0.25, 1.5, -2.0], dtype="<f4").tobytes()
        fmt = struct.pack("<HHIIHH", 3, 1, 8000, 32000, 4, 32)
        chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
        chunks += b"data" + struct.pack("<I", len(payload)) + payload
        chunks += b"\x00" * (len(payload) & 1)
        data = b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks
        buf = decode_wav(data)
        np.testing.assert_allclose(buf.samples, [0.25, 1.0, -1.0])
        assert clip_stats.count == 2


class TestEncodeRoundTrip:
    def test_pcm16_round_trip_is_sample_exact(self, rng):
        values = rng.integers(-32768, 32768, size=4000, dtype=np.int16)
        first = decode_wav(pcm16_wav(values, rate=16000))
        second = decode_wav(encode_wav(first))
        assert second.sample_rate == 16000
        np.testing.assert_array_equal(first.samples, second.samples)

    def test_float32_round_trip(self, tone):
        buf = tone(440.0, 0.25, 8000)
        back = decode_wav(encode_wav(buf, bit_depth=32))
        np.testing.assert_allclose(back.samples, buf.samples, atol=1e-6)

    def test_bad_bit_depth_rejected(self, tone):
        with pytest.raises(ConfigError):
            encode_wav(tone(100.0, 0.1, 8000), bit_depth=24)

    def test_dump_raw_is_float32_stream(self, tone):
        buf = tone(100.0, 0.01, 8000)
        raw = np.frombuffer(dump_raw(buf), dtype="<f4")
        np.testing.assert_allclose(raw, buf.samples, atol=1e-6)


class TestBufferInvariants:
    def test_rejects_bad_rate(self):
        with pytest.raises(ConfigError):
            AudioBuffer(np.zeros(10), 0)

    def test_rejects_non_mono(self):
        with pytest.raises(ConfigError):
            AudioBuffer(np.zeros((2, 10)), 8000)

    def test_rejects_non_finite(self):
        with pytest.raises(ConfigError):
            AudioBuffer(np.array([0.0, np.nan]), 8000)

    def test_samples_are_read_only(self):
        buf = AudioBuffer(np.zeros(4), 8000)
        with pytest.raises(ValueError):
            buf.samples[0] = 1.0

    def test_duration(self):
        assert AudioBuffer(np.zeros(4000), 8000).duration_seconds == 0.5


class TestResample:
    def test_identity_when_rates_equal(self, tone):
        buf = tone(200.0, 0.5, 8000)
        assert resample(buf, 8000) is buf

    def test_length_ratio(self):
        buf = AudioBuffer(np.zeros(1000), 16000)
        assert len(resample(buf, 8000)) == 500

    def test_odd_length_rounds_half_up(self):
        buf = AudioBuffer(np.zeros(1001), 16000)
        # 1001 * 8000 / 16000 = 500.5 -> 501
        assert len(resample(buf, 8000)) == 501

    def test_tone_survives_downsample(self, tone):
        buf = tone(200.0, 1.0, 16000)
        out = resample(buf, 8000)
        spectrum = np.abs(np.fft.rfft(out.samples))
        peak_hz = np.argmax(spectrum) * 8000 / len(out)
        assert abs(peak_hz - 200.0) <= 8000 / len(out)

    def test_down_up_round_trip_correlates(self, speech_clip):
        up = resample(speech_clip, 16000)
        back = resample(up, 8000)
        a, b = speech_clip.samples, back.samples
        corr = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
        assert corr >= 0.99

    def test_rejects_bad_target(self, tone):
        with pytest.raises(ConfigError):
            resample(tone(100.0, 0.1, 8000), -1)


class TestSlice:
    def test_whole_buffer_identity(self, tone):
        buf = tone(100.0, 10.0, 8000)
        out = slice_seconds(buf, 0.0, 10.0)
        np.testing.assert_array_equal(out.samples, buf.samples)

    def test_out_of_range_raises(self, tone):
        buf = tone(100.0, 10.0, 8000)
        with pytest.raises(RangeError):
            slice_seconds(buf, 9.5, 1.0)

    def test_index_arithmetic(self, tone):
        buf = tone(100.0, 10.0, 8000)
        out = slice_seconds(buf, 2.0, 3.0)
        assert len(out) == 24000
        np.testing.assert_array_equal(out.samples, buf.samples[16000:40000])

    def test_slice_composition(self, speech_clip):
        a, b, c = 1.25, 3.0, 2.0
        outer = slice_seconds(speech_clip, a, b + c)
        left = slice_seconds(outer, 0.0, b)
        direct = slice_seconds(speech_clip, a, b)
        np.testing.assert_array_equal(left.samples, direct.samples)

    def test_negative_start_raises(self, tone):
        with pytest.raises(RangeError):
            slice_seconds(tone(100.0, 1.0, 8000), -0.1, 0.5)
