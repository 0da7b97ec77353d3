"""End-to-end identify/enroll pipeline over streaming WAV bytes.

The intended deployment listens to early media: audio arrives in small
chunks, and after a few seconds we either recognise an already-enrolled
announcement (and can act on its label immediately) or keep listening,
eventually enrolling the whole recording as a new file. Decisions happen
at a configurable point (6 s of audio by default) and are retried every
couple of seconds up to a cap, after which the stream is just collected
for enrolment.
"""

import io
import logging
import struct
import threading
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

from .audio import AudioBuffer, _samples_from_raw, resample
from .errors import DecodeError, SpeechprintError
from .fingerprint import (
    FingerprintConfig,
    Fingerprint,
    StreamingFingerprinter,
    fingerprint_audio,
    min_audio_seconds,
)
from .index import MatchResult, RetrievalIndex
from .registry import LabelRegistry, load_transcript
from .spectral import SpectralConfig

logger = logging.getLogger(__name__)

CANONICAL_RATE = 8000

STATUS_IDENTIFIED = "identified"
STATUS_ENROLLED = "enrolled"
STATUS_ERROR = "error"


@dataclass(frozen=True)
class IdentifyOutcome:
    """Terminal state of one stream: identified, enrolled or error.

    audio_consumed_s is how much audio had been decoded when the decision
    fired; for identifications it doubles as the decision latency in
    stream time.
    """

    status: str
    file_id: int | None = None
    label_id: int | None = None
    confidence: float = 0.0
    audio_consumed_s: float = 0.0
    message: str = ""


class WavStreamDecoder:
    """Incremental RIFF/WAVE decoder for chunked byte streams.

    Buffers until the fmt and data headers are visible, then converts
    every complete frame as it arrives. Only the formats decode_wav
    accepts are supported.
    """

    def __init__(self) -> None:
        self._header = bytearray()
        self._fmt: tuple[int, int, int, int] | None = None
        self._frame_bytes = 0
        self._tail = b""
        self._data_started = False

    @property
    def sample_rate(self) -> int | None:
        return self._fmt[2] if self._fmt else None

    def feed(self, chunk: bytes) -> np.ndarray:
        """Returns the samples completed by this chunk (may be empty)."""
        from .audio import _parse_fmt_chunk  # local to avoid import cycle noise

        if self._data_started:
            return self._convert(chunk)
        self._header.extend(chunk)
        buf = bytes(self._header)
        if len(buf) < 12:
            return np.empty(0)
        if buf[:4] != b"RIFF" or buf[8:12] != b"WAVE":
            raise DecodeError("stream is not RIFF/WAVE")
        pos = 12
        while pos + 8 <= len(buf):
            chunk_id = buf[pos : pos + 4]
            (size,) = struct.unpack("<I", buf[pos + 4 : pos + 8])
            if chunk_id == b"fmt ":
                if pos + 8 + size > len(buf):
                    return np.empty(0)  # wait for the full fmt chunk
                self._fmt = _parse_fmt_chunk(buf[pos + 8 : pos + 8 + size])
                pos += 8 + size + (size & 1)
            elif chunk_id == b"data":
                if self._fmt is None:
                    raise DecodeError("data chunk before fmt chunk")
                format_code, channels, _rate, bits = self._fmt
                self._frame_bytes = channels * (bits // 8)
                self._data_started = True
                self._header = bytearray()
                return self._convert(buf[pos + 8 :])
            else:
                pos += 8 + size + (size & 1)
        return np.empty(0)

    def _convert(self, raw: bytes) -> np.ndarray:
        raw = self._tail + raw
        usable = len(raw) - (len(raw) % self._frame_bytes)
        self._tail = raw[usable:]
        if not usable:
            return np.empty(0)
        format_code, channels, _rate, bits = self._fmt
        return _samples_from_raw(raw[:usable], format_code, channels, bits)


class PendingLabeler:
    """Labeler that never labels; enrolments stay pending for a human."""

    def __call__(self, audio: AudioBuffer, transcript_path=None) -> int | None:
        return None


class TranscriptLabeler:
    """Labels enrolments whose transcript matches an existing cluster.

    Scores each same-language cluster by cosine similarity between the
    transcript's term counts and the cluster's keyword weights; a score
    above the floor yields that cluster's label, anything else stays
    pending. A real deployment would put an ASR system in front of this.
    """

    def __init__(self, registry: LabelRegistry, min_similarity: float = 0.1) -> None:
        self.registry = registry
        self.min_similarity = min_similarity

    def __call__(self, audio: AudioBuffer, transcript_path=None) -> int | None:
        if transcript_path is None:
            return None
        doc = load_transcript(transcript_path, file_id=0)
        counts = {}
        for token in doc.tokens:
            counts[token] = counts.get(token, 0) + 1
        best_label, best_score = None, 0.0
        for info in self.registry.clusters():
            if info.language not in (doc.language, "und") and doc.language != "und":
                continue
            if not info.keywords:
                continue
            dot = sum(counts.get(t, 0) * w for t, w in info.keywords)
            doc_norm = np.sqrt(sum(c * c for c in counts.values()))
            kw_norm = np.sqrt(sum(w * w for _t, w in info.keywords))
            if doc_norm == 0 or kw_norm == 0:
                continue
            score = dot / (doc_norm * kw_norm)
            if score > best_score:
                best_label, best_score = info.label_id, score
        if best_label is not None and best_score >= self.min_similarity:
            return best_label
        return None


class Pipeline:
    """Identify-or-enroll orchestration shared by the CLI and the server."""

    def __init__(
        self,
        index: RetrievalIndex,
        registry: LabelRegistry,
        spectral_config: SpectralConfig,
        fingerprint_config: FingerprintConfig,
        decision_after_s: float = 6.0,
        requery_interval_s: float = 2.0,
        max_wait_s: float = 12.0,
        labeler=None,
        canonical_rate: int = CANONICAL_RATE,
    ) -> None:
        if decision_after_s <= 0 or requery_interval_s <= 0:
            raise SpeechprintError("decision and requery intervals must be positive")
        if max_wait_s < decision_after_s:
            raise SpeechprintError("max_wait_s must be >= decision_after_s")
        self.index = index
        self.registry = registry
        self.spectral_config = spectral_config
        self.fingerprint_config = fingerprint_config
        self.decision_after_s = decision_after_s
        self.requery_interval_s = requery_interval_s
        self.max_wait_s = max_wait_s
        self.labeler = labeler if labeler is not None else PendingLabeler()
        self.canonical_rate = canonical_rate
        self._id_lock = threading.Lock()
        self._next_id = max(index.file_ids, default=0) + 1

    def _alloc_file_id(self) -> int:
        with self._id_lock:
            file_id = self._next_id
            self._next_id += 1
            return file_id

    @property
    def min_decision_audio_s(self) -> float:
        return min_audio_seconds(self.spectral_config, self.fingerprint_config)

    def fingerprint(self, audio: AudioBuffer, file_id: int = 0) -> Fingerprint:
        if audio.sample_rate != self.canonical_rate:
            audio = resample(audio, self.canonical_rate)
        return fingerprint_audio(
            audio, self.spectral_config, self.fingerprint_config, file_id
        )

    def identify_buffer(self, audio: AudioBuffer) -> MatchResult | None:
        """One-shot query of a whole buffer (no streaming, no enrolment)."""
        return self.index.query(self.fingerprint(audio))

    def enroll_file(
        self, audio: AudioBuffer, transcript_path=None
    ) -> IdentifyOutcome:
        """Fingerprints and enrolls a new file; labelling runs alongside.

        The labeler runs on its own thread while the fingerprint is
        computed and inserted. When it fails or abstains the file is
        marked pending rather than blocking enrolment.
        """
        file_id = self._alloc_file_id()
        label_holder: list[int | None] = [None]

        def run_labeler() -> None:
            try:
                label_holder[0] = self.labeler(audio, transcript_path)
            except Exception:
                logger.exception("labeler failed for file %d", file_id)
                label_holder[0] = None

        worker = threading.Thread(target=run_labeler, name=f"label-{file_id}")
        worker.start()
        try:
            self.index.enroll(self.fingerprint(audio, file_id))
        finally:
            worker.join()
        label_id = label_holder[0]
        if label_id is not None:
            try:
                self.registry.assign(file_id, label_id)
            except SpeechprintError:
                logger.warning(
                    "labeler returned unknown label %s for file %d", label_id, file_id
                )
                label_id = None
        if label_id is None:
            self.registry.mark_pending(file_id)
        return IdentifyOutcome(
            STATUS_ENROLLED,
            file_id=file_id,
            label_id=label_id,
            audio_consumed_s=audio.duration_seconds,
        )

    def _decision_points(self, first: float) -> list[float]:
        points = []
        t = first
        while t <= self.max_wait_s + 1e-9:
            points.append(t)
            t += self.requery_interval_s
        return points

    def identify_stream(
        self,
        chunks: Iterable[bytes],
        decision_after_s: float | None = None,
        transcript_path=None,
    ) -> IdentifyOutcome:
        """Consumes a chunked WAV byte stream until a terminal outcome.

        Queries fire once ``decision_after_s`` seconds of audio have
        been decoded and again every requery interval up to the wait
        cap. A confident match returns immediately (the rest of the
        stream is not consumed); otherwise the whole stream is decoded
        and enrolled as a new file.
        """
        first_decision = (
            self.decision_after_s if decision_after_s is None else decision_after_s
        )
        decisions = self._decision_points(max(first_decision, 0.0))
        decoder = WavStreamDecoder()
        collected: list[np.ndarray] = []
        streamer: StreamingFingerprinter | None = None
        subs = []
        native_rate = None
        consumed = 0
        try:
            for chunk in chunks:
                samples = decoder.feed(bytes(chunk))
                if native_rate is None and decoder.sample_rate is not None:
                    native_rate = decoder.sample_rate
                    if native_rate == self.canonical_rate:
                        streamer = StreamingFingerprinter(
                            native_rate,
                            self.spectral_config,
                            self.fingerprint_config,
                        )
                if samples.size:
                    collected.append(samples)
                    consumed += samples.size
                    if streamer is not None:
                        subs.extend(streamer.feed(samples))
                consumed_s = consumed / native_rate if native_rate else 0.0
                while decisions and consumed_s >= decisions[0] - 1e-9:
                    decisions.pop(0)
                    result = self._query_prefix(collected, native_rate, subs, streamer)
                    if result is not None:
                        return IdentifyOutcome(
                            STATUS_IDENTIFIED,
                            file_id=result.file_id,
                            label_id=self.registry.lookup(result.file_id),
                            confidence=result.confidence,
                            audio_consumed_s=consumed_s,
                        )
        except SpeechprintError as exc:
            return IdentifyOutcome(STATUS_ERROR, message=str(exc))
        if native_rate is None or consumed == 0:
            return IdentifyOutcome(STATUS_ERROR, message="stream carried no audio")
        audio = AudioBuffer(np.concatenate(collected), native_rate)
        if audio.sample_rate != self.canonical_rate:
            audio = resample(audio, self.canonical_rate)
        if audio.duration_seconds < self.min_decision_audio_s - 1e-9:
            return IdentifyOutcome(
                STATUS_ERROR,
                message=(
                    f"{audio.duration_seconds:.3f}s of audio is below the "
                    f"{self.min_decision_audio_s:.3f}s fingerprinting minimum"
                ),
                audio_consumed_s=audio.duration_seconds,
            )
        # final query over everything we got, then enroll on a miss
        result = self.index.query(
            fingerprint_audio(audio, self.spectral_config, self.fingerprint_config)
        )
        if result is not None:
            return IdentifyOutcome(
                STATUS_IDENTIFIED,
                file_id=result.file_id,
                label_id=self.registry.lookup(result.file_id),
                confidence=result.confidence,
                audio_consumed_s=audio.duration_seconds,
            )
        try:
            return self.enroll_file(audio, transcript_path)
        except SpeechprintError as exc:
            return IdentifyOutcome(STATUS_ERROR, message=str(exc))

    def _query_prefix(
        self,
        collected: list[np.ndarray],
        native_rate: int | None,
        subs,
        streamer: StreamingFingerprinter | None,
    ) -> MatchResult | None:
        """Queries whatever audio has arrived so far."""
        if streamer is not None:
            if not subs:
                return None
            return self.index.query(list(subs))
        if native_rate is None:
            return None
        prefix = AudioBuffer(np.concatenate(collected), native_rate)
        prefix = resample(prefix, self.canonical_rate)
        if prefix.duration_seconds < self.min_decision_audio_s:
            return None
        return self.index.query(
            fingerprint_audio(prefix, self.spectral_config, self.fingerprint_config)
        )


def stream_wav_bytes(data: bytes, chunk_size: int = 4096) -> Iterable[bytes]:
    """Splits WAV bytes into chunks, for driving identify_stream."""
    view = io.BytesIO(data)
    while True:
        chunk = view.read(chunk_size)
        if not chunk:
            return
        yield chunk
