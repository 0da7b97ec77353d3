"""WAV decoding, resampling and slicing.

All downstream processing works on :class:`AudioBuffer`: mono float64
samples in [-1, 1] plus a sample rate. Telephony sources arrive at a mix
of rates, so callers normalise to a single canonical rate (8000 Hz by
default elsewhere in the package) before fingerprinting.

Samples that fall outside [-1, 1] (float WAV input, resampler overshoot,
additive noise) are clipped; every clip increments a module-level counter
and logs one warning so bulk jobs can audit how much clipping happened.
"""

import logging
import struct
from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy.signal import resample_poly

from .errors import ConfigError, DecodeError, RangeError, UnsupportedFormat

logger = logging.getLogger(__name__)

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003

_PCM16_SCALE = 32768.0


class ClipStats:
    """Counter of samples clipped into [-1, 1] across the process."""

    __slots__ = ("count",)

    def __init__(self) -> None:
        self.count = 0

    def add(self, n: int, context: str) -> None:
        if n:
            self.count += n
            logger.warning("clipped %d samples to [-1, 1] (%s)", n, context)

    def reset(self) -> None:
        self.count = 0


clip_stats = ClipStats()


def _clip_unit(samples: np.ndarray, context: str) -> np.ndarray:
    """Clips to [-1, 1], recording how many samples were touched."""
    n_out = int(np.count_nonzero((samples < -1.0) | (samples > 1.0)))
    if n_out:
        samples = np.clip(samples, -1.0, 1.0)
        clip_stats.add(n_out, context)
    return samples


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Immutable mono audio: float64 samples in [-1, 1] plus a rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ConfigError("AudioBuffer samples must be 1-D (mono)")
        if not np.all(np.isfinite(samples)):
            raise ConfigError("AudioBuffer samples must be finite")
        if samples is self.samples or samples.flags.writeable:
            samples = samples.copy() if samples is self.samples else samples
            samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_seconds(self) -> float:
        return self.samples.shape[0] / self.sample_rate

    def __repr__(self) -> str:  # keep reprs short in logs
        return (
            f"AudioBuffer(n={len(self)}, rate={self.sample_rate}, "
            f"dur={self.duration_seconds:.3f}s)"
        )


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _parse_fmt_chunk(body: bytes) -> tuple[int, int, int, int]:
    """Returns (format_code, channels, sample_rate, bits_per_sample)."""
    if len(body) < 16:
        raise DecodeError("fmt chunk too small")
    format_code, channels, rate, _byte_rate, _block_align, bits = struct.unpack(
        "<HHIIHH", body[:16]
    )
    return format_code, channels, rate, bits


def _samples_from_raw(
    raw: bytes, format_code: int, channels: int, bits: int
) -> np.ndarray:
    if channels not in (1, 2):
        raise UnsupportedFormat(f"unsupported channel count {channels}")
    if format_code == _WAVE_FORMAT_PCM:
        if bits != 16:
            raise UnsupportedFormat(f"unsupported PCM bit depth {bits}")
        frame_bytes = 2 * channels
        usable = len(raw) - (len(raw) % frame_bytes)
        data = np.frombuffer(raw[:usable], dtype="<i2").astype(np.float64)
        samples = data / _PCM16_SCALE
    elif format_code == _WAVE_FORMAT_IEEE_FLOAT:
        if bits != 32:
            raise UnsupportedFormat(f"unsupported float bit depth {bits}")
        frame_bytes = 4 * channels
        usable = len(raw) - (len(raw) % frame_bytes)
        samples = np.frombuffer(raw[:usable], dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(samples)):
            raise DecodeError("float WAV contains non-finite samples")
        samples = _clip_unit(samples, "float wav decode")
    else:
        raise UnsupportedFormat(f"unsupported WAV format code 0x{format_code:04x}")
    if channels == 2:
        samples = samples.reshape(-1, 2).mean(axis=1)
    return samples


def decode_wav(data: bytes) -> AudioBuffer:
    """Decodes a RIFF/WAVE byte string into a mono :class:`AudioBuffer`.

    Accepts 16-bit PCM and 32-bit IEEE float, 1 or 2 channels. Stereo is
    downmixed by averaging. 16-bit values are scaled by 1/32768 so the
    most negative code maps exactly to -1.0.

    Raises:
        DecodeError: malformed or truncated container.
        UnsupportedFormat: valid container, unsupported encoding.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DecodeError("not a RIFF/WAVE file")
    fmt = None
    raw = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4 : pos + 8])
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise DecodeError(f"truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            fmt = _parse_fmt_chunk(body)
        elif chunk_id == b"data":
            raw = body
        pos += 8 + size + (size & 1)  # chunks are word aligned
    if fmt is None:
        raise DecodeError("missing fmt chunk")
    if raw is None:
        raise DecodeError("missing data chunk")
    format_code, channels, rate, bits = fmt
    if rate <= 0:
        raise DecodeError("invalid sample rate in fmt chunk")
    samples = _samples_from_raw(raw, format_code, channels, bits)
    return AudioBuffer(samples, rate)


def encode_wav(audio: AudioBuffer, bit_depth: int = 16) -> bytes:
    """Encodes to RIFF/WAVE bytes (mono, 16-bit PCM or 32-bit float).

    The 16-bit path is the exact inverse of :func:`decode_wav` for values
    that a 16-bit file can represent: decode(encode(x)) == x sample for
    sample when x came from a 16-bit file.
    """
    if bit_depth == 16:
        scaled = np.round(audio.samples * _PCM16_SCALE)
        payload = np.clip(scaled, -32768, 32767).astype("<i2").tobytes()
        format_code, bits = _WAVE_FORMAT_PCM, 16
    elif bit_depth == 32:
        payload = audio.samples.astype("<f4").tobytes()
        format_code, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ConfigError(f"bit_depth must be 16 or 32, got {bit_depth}")
    byte_rate = audio.sample_rate * bits // 8
    fmt = struct.pack(
        "<HHIIHH", format_code, 1, audio.sample_rate, byte_rate, bits // 8, bits
    )
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    chunks += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        chunks += b"\x00"
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks


def dump_raw(audio: AudioBuffer) -> bytes:
    """Raw little-endian float32 samples, for debugging dumps."""
    return audio.samples.astype("<f4").tobytes()


def resample(audio: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited resampling to ``target_rate``.

    Uses a polyphase windowed-sinc filter (Kaiser window) at the rational
    rate ratio, then fixes the length to round(len * target/source) with
    half-up rounding so durations stay predictable. Equal rates return
    the input unchanged.
    """
    if target_rate <= 0:
        raise ConfigError(f"target_rate must be positive, got {target_rate}")
    if target_rate == audio.sample_rate:
        return audio
    g = gcd(target_rate, audio.sample_rate)
    up, down = target_rate // g, audio.sample_rate // g
    out = resample_poly(audio.samples, up, down)
    n_out = (2 * len(audio) * target_rate + audio.sample_rate) // (
        2 * audio.sample_rate
    )
    if len(out) > n_out:
        out = out[:n_out]
    elif len(out) < n_out:
        out = np.pad(out, (0, n_out - len(out)))
    out = _clip_unit(out, "resample")
    return AudioBuffer(out, target_rate)


def slice_seconds(audio: AudioBuffer, start_s: float, duration_s: float) -> AudioBuffer:
    """Cuts [start_s, start_s + duration_s) out of the buffer.

    Boundaries are converted to sample counts with half-up rounding.

    Raises:
        RangeError: the window is not fully inside the buffer.
    """
    if duration_s <= 0:
        raise RangeError(f"duration_s must be positive, got {duration_s}")
    if start_s < 0:
        raise RangeError(f"start_s must be non-negative, got {start_s}")
    start = _round_half_up(start_s * audio.sample_rate)
    count = _round_half_up(duration_s * audio.sample_rate)
    if start + count > len(audio):
        raise RangeError(
            f"slice [{start_s:.6g}, {start_s + duration_s:.6g})s exceeds "
            f"{audio.duration_seconds:.6g}s buffer"
        )
    return AudioBuffer(audio.samples[start : start + count], audio.sample_rate)
