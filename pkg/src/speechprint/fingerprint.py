"""Wavelet min-hash fingerprints over spectral images.

The image is cut into overlapping blocks of frames; each block gets a 2-D
Haar transform, the t strongest coefficients are kept as sign bits, and
the resulting sparse bit set is crushed into a short min-hash signature.
Min-hash keeps the key property we rely on for retrieval: the probability
two signatures agree at one position equals the Jaccard similarity of the
underlying bit sets, so similarity survives into the compressed domain.

A file's fingerprint is the ordered list of its block signatures
("sub-fingerprints"). Matching happens in :mod:`speechprint.index` via
banded signature digests.
"""

import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .audio import AudioBuffer
from .errors import ConfigError, CorruptIndex, TooShort
from .hashing import fnv1a64, mix64, splitmix64
from .spectral import FrameTransform, SpectralConfig, SpectralImage

SQRT2 = np.sqrt(2.0)

FINGERPRINT_MAGIC = b"SPFP"
FINGERPRINT_VERSION = 1

#: Values a signature byte can take; min-hash positions are capped here.
SIGNATURE_CAP = 255


@dataclass(frozen=True)
class FingerprintConfig:
    """Block geometry and hashing parameters.

    Defaults follow the classic wavelet fingerprinting regime (128-frame
    blocks, top 200 coefficients, 100 permutations banded 20 x 5). Every
    field is tunable; the benchmark harness runs a smaller block so short
    queries still produce sub-fingerprints at coarse strides.
    """

    block_frames: int = 128
    block_hop_frames: int = 32
    top_t: int = 200
    n_permutations: int = 100
    band_count: int = 20
    band_width: int = 5
    seed: int = 0x53504650

    def __post_init__(self) -> None:
        if self.block_frames < 1 or self.block_frames & (self.block_frames - 1):
            raise ConfigError(
                f"block_frames must be a power of two, got {self.block_frames}"
            )
        if not 1 <= self.block_hop_frames <= self.block_frames:
            raise ConfigError(
                f"block_hop_frames must be in [1, block_frames], "
                f"got {self.block_hop_frames}"
            )
        if self.top_t < 1:
            raise ConfigError(f"top_t must be >= 1, got {self.top_t}")
        if self.n_permutations < 1:
            raise ConfigError(
                f"n_permutations must be >= 1, got {self.n_permutations}"
            )
        if self.band_count < 1 or self.band_width < 1:
            raise ConfigError("band_count and band_width must be >= 1")
        if self.band_count * self.band_width != self.n_permutations:
            raise ConfigError(
                f"band_count * band_width must equal n_permutations "
                f"({self.band_count} * {self.band_width} != {self.n_permutations})"
            )


@dataclass(frozen=True, eq=False)
class SparseBits:
    """Sparse bit vector: sorted set bit indices plus the full dimension."""

    indices: np.ndarray
    dimension: int

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", idx)
        if idx.size and (idx[0] < 0 or idx[-1] >= self.dimension):
            raise ConfigError("bit index out of range")

    def __len__(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True, eq=False)
class SubFingerprint:
    """Min-hash signature of one block."""

    signature: np.ndarray
    block_index: int
    time_offset_s: float

    def __post_init__(self) -> None:
        sig = np.asarray(self.signature, dtype=np.uint8)
        sig.flags.writeable = False
        object.__setattr__(self, "signature", sig)


@dataclass(frozen=True, eq=False)
class Fingerprint:
    """All sub-fingerprints of one file, in block order."""

    file_id: int
    subs: tuple[SubFingerprint, ...]
    config_digest: int = 0

    @property
    def signature_matrix(self) -> np.ndarray:
        """Signatures stacked as [n_subs, n_permutations] uint8."""
        return np.stack([s.signature for s in self.subs])


def config_digest(
    spectral: SpectralConfig, fingerprint: FingerprintConfig, sample_rate: int
) -> int:
    """Stable 64-bit digest of everything that shapes a signature.

    Fingerprints and indexes are only comparable when this matches.
    """
    canonical = "|".join(
        [
            "speechprint-cfg-v1",
            spectral.variant.value,
            repr(float(spectral.window_s)),
            repr(float(spectral.stride_s)),
            repr(float(spectral.f_min)),
            repr(float(spectral.f_max)),
            str(spectral.n_bins),
            str(fingerprint.block_frames),
            str(fingerprint.block_hop_frames),
            str(fingerprint.top_t),
            str(fingerprint.n_permutations),
            str(fingerprint.band_count),
            str(fingerprint.band_width),
            str(fingerprint.seed),
            str(sample_rate),
        ]
    )
    return fnv1a64(canonical.encode())


def _next_pow2(n: int) -> int:
    return 1 << max(n - 1, 0).bit_length() if n > 1 else 1


def blocks(image: SpectralImage, config: FingerprintConfig) -> list[np.ndarray]:
    """Overlapping frame blocks, centred and zero padded to a power of two.

    Block k covers frames [k * hop, k * hop + block_frames); the count is
    floor((n_frames - block_frames) / hop) + 1. Rows are padded so the
    Haar transform sees power-of-two sides.

    Each block's real rows have their scalar mean subtracted. Spectral
    image values are all positive, so without centring every block in
    every file shares a strong same-sign energy offset (and near-silent
    blocks are virtually identical everywhere); centring leaves only the
    content-dependent structure to be hashed.
    """
    n_frames = image.n_frames
    if n_frames < config.block_frames:
        raise TooShort(
            f"{n_frames} frames < one {config.block_frames}-frame block"
        )
    rows = _next_pow2(image.n_bins)
    hop = config.block_hop_frames
    n_blocks = (n_frames - config.block_frames) // hop + 1
    out = []
    for k in range(n_blocks):
        block = np.zeros((rows, config.block_frames))
        real = image.data[:, k * hop : k * hop + config.block_frames]
        block[: image.n_bins] = real - real.mean()
        out.append(block)
    return out


def _haar_axis(a: np.ndarray, axis: int) -> None:
    """Full 1-D orthonormal Haar transform along ``axis``, in place."""
    n = a.shape[axis]
    length = n
    while length > 1:
        half = length // 2
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(0, length, 2)
        even = a[tuple(idx)].copy()
        idx[axis] = slice(1, length, 2)
        odd = a[tuple(idx)].copy()
        idx[axis] = slice(0, half)
        a[tuple(idx)] = (even + odd) / SQRT2
        idx[axis] = slice(half, length)
        a[tuple(idx)] = (even - odd) / SQRT2
        length = half


def _ihaar_axis(a: np.ndarray, axis: int) -> None:
    n = a.shape[axis]
    length = 2
    while length <= n:
        half = length // 2
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(0, half)
        s = a[tuple(idx)].copy()
        idx[axis] = slice(half, length)
        d = a[tuple(idx)].copy()
        idx[axis] = slice(0, length, 2)
        a[tuple(idx)] = (s + d) / SQRT2
        idx[axis] = slice(1, length, 2)
        a[tuple(idx)] = (s - d) / SQRT2
        length *= 2


def haar2d(block: np.ndarray) -> np.ndarray:
    """Standard 2-D orthonormal Haar decomposition (rows fully, then columns).

    Both sides must be powers of two. The transform is orthonormal, so
    coefficient energy equals signal energy and a constant c block maps
    to a single DC coefficient c * sqrt(n_rows * n_cols).
    """
    rows, cols = block.shape
    if rows & (rows - 1) or cols & (cols - 1) or rows < 1 or cols < 1:
        raise ConfigError(f"block sides must be powers of two, got {block.shape}")
    out = np.array(block, dtype=np.float64, copy=True)
    _haar_axis(out, axis=1)
    _haar_axis(out, axis=0)
    return out


def ihaar2d(coeffs: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`haar2d`."""
    rows, cols = coeffs.shape
    if rows & (rows - 1) or cols & (cols - 1) or rows < 1 or cols < 1:
        raise ConfigError(f"block sides must be powers of two, got {coeffs.shape}")
    out = np.array(coeffs, dtype=np.float64, copy=True)
    _ihaar_axis(out, axis=0)
    _ihaar_axis(out, axis=1)
    return out


def top_t_signs(coeffs: np.ndarray, t: int) -> SparseBits:
    """Sign encoding of the t largest-magnitude coefficients.

    Flat coefficient i contributes bit 2i when positive and bit 2i+1 when
    negative; zeros contribute nothing even when ranked. Magnitude ties at
    the cut are resolved toward lower flat indices, so the output is a
    pure function of the coefficient values.
    """
    if t < 1:
        raise ConfigError(f"t must be >= 1, got {t}")
    flat = coeffs.ravel()
    magnitude = np.abs(flat)
    area = flat.size
    if t >= area:
        keep = np.flatnonzero(flat)
    else:
        cutoff = np.partition(magnitude, area - t)[area - t]
        above = np.flatnonzero(magnitude > cutoff)
        ties = np.flatnonzero(magnitude == cutoff)[: t - above.size]
        keep = np.concatenate([above, ties])
        keep = keep[flat[keep] != 0.0]
    bits = 2 * keep + (flat[keep] < 0.0)
    bits.sort()
    return SparseBits(bits.astype(np.int64), 2 * area)


class MinHasher:
    """Fixed family of seeded random permutations over a bit domain.

    Permutation j is the ranking of splitmix64 keys derived from (seed, j),
    which is indistinguishable from a uniform random permutation for our
    purposes and reproducible everywhere. Signature entry j is the
    position of the first set bit under permutation j, capped at 255 so it
    fits a byte.
    """

    def __init__(self, n_permutations: int, dimension: int, seed: int) -> None:
        if dimension < 1:
            raise ConfigError(f"dimension must be >= 1, got {dimension}")
        self.n_permutations = n_permutations
        self.dimension = dimension
        self.seed = seed
        base = np.arange(dimension, dtype=np.uint64)
        positions = np.empty((n_permutations, dimension), dtype=np.int32)
        ranks = np.arange(dimension, dtype=np.int32)
        for j in range(n_permutations):
            keys = splitmix64(base ^ np.uint64(mix64(seed * 0x1F123BB5 + j)))
            order = np.argsort(keys, kind="stable")
            positions[j, order] = ranks
        self._positions = positions

    def signature(self, bits: SparseBits) -> np.ndarray:
        """Min-hash signature of a sparse bit set, dtype uint8.

        An empty set yields the all-255 signature.
        """
        if bits.dimension != self.dimension:
            raise ConfigError(
                f"bit vector dimension {bits.dimension} != hasher "
                f"dimension {self.dimension}"
            )
        if len(bits) == 0:
            return np.full(self.n_permutations, SIGNATURE_CAP, dtype=np.uint8)
        mins = self._positions[:, bits.indices].min(axis=1)
        return np.minimum(mins, SIGNATURE_CAP).astype(np.uint8)


@lru_cache(maxsize=16)
def get_minhasher(n_permutations: int, dimension: int, seed: int) -> MinHasher:
    """Shared cache; permutation tables are deterministic in their key."""
    return MinHasher(n_permutations, dimension, seed)


def minhash(bits: SparseBits, config: FingerprintConfig) -> np.ndarray:
    """Signature of ``bits`` under the config's permutation family."""
    return get_minhasher(config.n_permutations, bits.dimension, config.seed).signature(
        bits
    )


class StreamingFingerprinter:
    """Incrementally fingerprints audio fed in arbitrary chunks.

    Feed any split of the sample stream; completed sub-fingerprints come
    back as soon as their block's last frame is available, and the result
    is bit-identical to a whole-file pass because every frame column is
    computed independently of chunk boundaries.
    """

    def __init__(
        self,
        sample_rate: int,
        spectral_config: SpectralConfig,
        fingerprint_config: FingerprintConfig,
        file_id: int = 0,
    ) -> None:
        self.file_id = file_id
        self.spectral_config = spectral_config
        self.fingerprint_config = fingerprint_config
        self._transform = FrameTransform(sample_rate, spectral_config)
        rows = _next_pow2(self._transform.n_bins)
        area = rows * fingerprint_config.block_frames
        if fingerprint_config.top_t > area:
            raise ConfigError(
                f"top_t {fingerprint_config.top_t} exceeds padded block "
                f"area {area}"
            )
        self._rows = rows
        self._hasher = get_minhasher(
            fingerprint_config.n_permutations, 2 * area, fingerprint_config.seed
        )
        self._buffer = np.empty(0, dtype=np.float64)
        self._buffer_start = 0  # absolute sample index of _buffer[0]
        self._columns: list[np.ndarray] = []
        self._columns_start = 0  # absolute frame index of _columns[0]
        self._frames_done = 0
        self._blocks_done = 0
        self._samples_seen = 0

    @property
    def config_digest(self) -> int:
        return config_digest(
            self.spectral_config, self.fingerprint_config, self._transform.sample_rate
        )

    @property
    def blocks_emitted(self) -> int:
        return self._blocks_done

    @property
    def seconds_consumed(self) -> float:
        return self._samples_seen / self._transform.sample_rate

    def feed(self, samples: np.ndarray) -> list[SubFingerprint]:
        """Consumes more samples; returns newly completed sub-fingerprints."""
        samples = np.asarray(samples, dtype=np.float64)
        self._samples_seen += samples.size
        self._buffer = np.concatenate([self._buffer, samples])
        transform, cfg = self._transform, self.fingerprint_config
        fresh: list[SubFingerprint] = []
        while True:
            frame_start = self._frames_done * transform.hop
            local = frame_start - self._buffer_start
            if local + transform.window > len(self._buffer):
                break
            self._columns.append(
                transform.column(self._buffer[local : local + transform.window])
            )
            self._frames_done += 1
            block_start = self._blocks_done * cfg.block_hop_frames
            if self._frames_done >= block_start + cfg.block_frames:
                fresh.append(self._emit_block(block_start))
        # drop samples no frame will touch again
        next_needed = self._frames_done * transform.hop
        if next_needed > self._buffer_start:
            cut = next_needed - self._buffer_start
            self._buffer = self._buffer[cut:]
            self._buffer_start = next_needed
        return fresh

    def _emit_block(self, block_start: int) -> SubFingerprint:
        cfg = self.fingerprint_config
        local = block_start - self._columns_start
        block = np.zeros((self._rows, cfg.block_frames))
        n_bins = self._transform.n_bins
        for i, col in enumerate(self._columns[local : local + cfg.block_frames]):
            block[: col.size, i] = col
        block[:n_bins] -= block[:n_bins].mean()  # mirror blocks()
        coeffs = haar2d(block)
        signature = self._hasher.signature(top_t_signs(coeffs, cfg.top_t))
        sub = SubFingerprint(
            signature,
            block_index=self._blocks_done,
            time_offset_s=block_start * self.spectral_config.stride_s,
        )
        self._blocks_done += 1
        # columns before the next block's start are done
        keep_from = self._blocks_done * cfg.block_hop_frames
        if keep_from > self._columns_start:
            del self._columns[: keep_from - self._columns_start]
            self._columns_start = keep_from
        return sub

    def finish(self) -> list[SubFingerprint]:
        """Signals end of stream. No partial blocks are ever emitted.

        Raises TooShort when the total stream never filled one block.
        """
        if self._blocks_done == 0:
            raise TooShort(
                f"{self.seconds_consumed:.3f}s of audio never completed a "
                f"{self.fingerprint_config.block_frames}-frame block"
            )
        return []


def fingerprint_audio(
    audio: AudioBuffer,
    spectral_config: SpectralConfig,
    fingerprint_config: FingerprintConfig,
    file_id: int = 0,
) -> Fingerprint:
    """Full fingerprint of a buffer: image, blocks, Haar, signs, min-hash.

    Raises TooShort when the audio cannot fill a single block, i.e. it is
    shorter than window_s + (block_frames - 1) * stride_s.
    """
    streamer = StreamingFingerprinter(
        audio.sample_rate, spectral_config, fingerprint_config, file_id
    )
    subs = streamer.feed(audio.samples)
    subs.extend(streamer.finish())
    return Fingerprint(file_id, tuple(subs), streamer.config_digest)


def min_audio_seconds(
    spectral_config: SpectralConfig, fingerprint_config: FingerprintConfig
) -> float:
    """Shortest audio that yields at least one sub-fingerprint."""
    return (
        spectral_config.window_s
        + (fingerprint_config.block_frames - 1) * spectral_config.stride_s
    )


def serialize_fingerprint(fp: Fingerprint) -> bytes:
    """Compact binary form: magic, version, config digest, id, subs.

    Layout (little endian): "SPFP", u16 version, u64 config digest,
    u64 file_id, u32 sub count, then per sub a u32 block index followed
    by the raw signature bytes.
    """
    subs = fp.subs
    parts = [
        FINGERPRINT_MAGIC,
        struct.pack(
            "<HQQI",
            FINGERPRINT_VERSION,
            fp.config_digest,
            fp.file_id,
            len(subs),
        ),
    ]
    for sub in subs:
        parts.append(struct.pack("<I", sub.block_index))
        parts.append(sub.signature.tobytes())
    return b"".join(parts)


def deserialize_fingerprint(data: bytes, block_period_s: float = 0.0) -> Fingerprint:
    """Inverse of :func:`serialize_fingerprint`.

    The wire format stores block indices, not times; pass the block
    period (block_hop_frames * stride_s) to restore time offsets, else
    they come back as 0.0.
    """
    header = 4 + struct.calcsize("<HQQI")
    if len(data) < header or data[:4] != FINGERPRINT_MAGIC:
        raise CorruptIndex("not a fingerprint record")
    version, digest, file_id, count = struct.unpack("<HQQI", data[4:header])
    if version != FINGERPRINT_VERSION:
        raise CorruptIndex(f"unsupported fingerprint version {version}")
    body = len(data) - header
    if count == 0:
        if body:
            raise CorruptIndex("trailing bytes after empty fingerprint")
        return Fingerprint(file_id, (), digest)
    if body % count or body // count <= 4:
        raise CorruptIndex("fingerprint record length inconsistent with count")
    n_permutations = body // count - 4
    subs = []
    pos = header
    for _ in range(count):
        (block_index,) = struct.unpack("<I", data[pos : pos + 4])
        signature = np.frombuffer(
            data[pos + 4 : pos + 4 + n_permutations], dtype=np.uint8
        )
        subs.append(
            SubFingerprint(
                signature,
                block_index=block_index,
                time_offset_s=block_index * block_period_s,
            )
        )
        pos += 4 + n_permutations
    return Fingerprint(file_id, tuple(subs), digest)
