"""Threaded TCP front end for the identify/enroll pipeline.

Wire protocol, little endian throughout. Every frame is a u32 length
followed by that many bytes: one opcode byte plus the payload.

Client to server:
    0x01 AUDIO_CHUNK  payload: the next bytes of a WAV stream
    0x02 END          payload: empty, the stream is finished

Server to client:
    0x10 RESULT  payload: u8 status (0 identified, 1 enrolled),
                 u64 file_id, u64 label_id (0 = none), f32 confidence
    0x11 ERROR   payload: utf-8 message

Each connection is one session. Queries from concurrent sessions are
coalesced for a few milliseconds and answered through one batched index
call, which is where a vector-friendly backend would earn its keep; the
responses are identical to per-session queries by construction.
"""

import logging
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .errors import SpeechprintError
from .index import MatchResult
from .pipeline import (
    IdentifyOutcome,
    Pipeline,
    STATUS_ENROLLED,
    STATUS_ERROR,
    STATUS_IDENTIFIED,
    WavStreamDecoder,
)

logger = logging.getLogger(__name__)

OP_AUDIO_CHUNK = 0x01
OP_END = 0x02
OP_RESULT = 0x10
OP_ERROR = 0x11

_STATUS_CODES = {STATUS_IDENTIFIED: 0, STATUS_ENROLLED: 1}
_MAX_FRAME = 1 << 22  # 4 MiB of payload is far beyond any sane chunk


def write_frame(sock: socket.socket, opcode: int, payload: bytes = b"") -> None:
    sock.sendall(struct.pack("<IB", len(payload) + 1, opcode) + payload)


def read_frame(sock: socket.socket) -> tuple[int, bytes] | None:
    """Reads one frame; None on clean EOF before any byte."""
    header = _read_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack("<I", header)
    if not 1 <= length <= _MAX_FRAME:
        raise SpeechprintError(f"bad frame length {length}")
    body = _read_exact(sock, length)
    if body is None:
        raise SpeechprintError("connection dropped mid-frame")
    return body[0], body[1:]


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if buf:
                raise SpeechprintError("connection dropped mid-frame")
            return None
        buf.extend(chunk)
    return bytes(buf)


class QueryBatcher:
    """Coalesces index queries from many sessions into batched calls.

    The first submission opens a collection window (batch_window_s);
    everything submitted within it goes to one query_batch call. Results
    are handed back through per-submission events.
    """

    def __init__(self, index, batch_window_s: float = 0.020) -> None:
        self.index = index
        self.batch_window_s = batch_window_s
        self._lock = threading.Lock()
        self._pending: list[tuple[list, threading.Event, list]] = []
        self._timer: threading.Timer | None = None
        self._closed = False

    def submit(self, subs: list) -> MatchResult | None:
        """Blocks until the batch containing this query is answered."""
        done = threading.Event()
        slot: list = [None]
        with self._lock:
            if self._closed:
                raise SpeechprintError("batcher is shut down")
            self._pending.append((subs, done, slot))
            if self._timer is None:
                self._timer = threading.Timer(self.batch_window_s, self._flush)
                self._timer.daemon = True
                self._timer.start()
        done.wait()
        return slot[0]

    def _flush(self) -> None:
        with self._lock:
            batch = self._pending
            self._pending = []
            self._timer = None
        if not batch:
            return
        try:
            results = self.index.query_batch([subs for subs, _e, _s in batch])
        except Exception as exc:  # propagate to every waiter
            logger.exception("batched query failed")
            results = [exc] * len(batch)
        for (_subs, event, slot), result in zip(batch, results):
            slot[0] = result
            event.set()

    def close(self) -> None:
        with self._lock:
            self._closed = True
            timer = self._timer
        if timer is not None:
            timer.cancel()
        self._flush()


class _SessionHandler(socketserver.BaseRequestHandler):
    """One identify-or-enroll session per connection."""

    def handle(self) -> None:
        server: PipelineServer = self.server
        pipeline = server.pipeline
        outcome = None
        try:
            outcome = self._run_session(server, pipeline)
        except SpeechprintError as exc:
            self._send_error(str(exc))
            self._drain()
            return
        except (ConnectionError, OSError) as exc:
            logger.info("session dropped: %s", exc)
            return
        if outcome is None:
            return
        if outcome.status == STATUS_ERROR:
            self._send_error(outcome.message or "identification failed")
            self._drain()
            return
        payload = struct.pack(
            "<BQQf",
            _STATUS_CODES[outcome.status],
            outcome.file_id or 0,
            outcome.label_id or 0,
            outcome.confidence,
        )
        write_frame(self.request, OP_RESULT, payload)
        self._drain()

    def _send_error(self, message: str) -> None:
        try:
            write_frame(self.request, OP_ERROR, message.encode("utf-8"))
        except OSError:
            pass

    def _drain(self) -> None:
        """Reads out the rest of the stream after an early decision.

        Closing with unread bytes would reset the connection and could
        destroy the result frame before the client sees it.
        """
        try:
            for _ in range(100_000):
                frame = read_frame(self.request)
                if frame is None or frame[0] == OP_END:
                    return
        except (SpeechprintError, ConnectionError, OSError):
            return

    def _run_session(
        self, server: "PipelineServer", pipeline: Pipeline
    ) -> IdentifyOutcome | None:
        """identify_stream, but with queries routed through the batcher."""
        decoder = WavStreamDecoder()
        decisions = pipeline._decision_points(pipeline.decision_after_s)
        collected: list[np.ndarray] = []
        streamer = None
        subs: list = []
        native_rate = None
        consumed = 0
        ended = False
        while not ended:
            frame = read_frame(self.request)
            if frame is None:
                return None  # client went away without END
            opcode, payload = frame
            if opcode == OP_END:
                ended = True
            elif opcode == OP_AUDIO_CHUNK:
                samples = decoder.feed(payload)
                if native_rate is None and decoder.sample_rate is not None:
                    native_rate = decoder.sample_rate
                    if native_rate == pipeline.canonical_rate:
                        from .fingerprint import StreamingFingerprinter

                        streamer = StreamingFingerprinter(
                            native_rate,
                            pipeline.spectral_config,
                            pipeline.fingerprint_config,
                        )
                if samples.size:
                    collected.append(samples)
                    consumed += samples.size
                    if streamer is not None:
                        subs.extend(streamer.feed(samples))
                consumed_s = consumed / native_rate if native_rate else 0.0
                while decisions and consumed_s >= decisions[0] - 1e-9:
                    decisions.pop(0)
                    if subs:
                        result = server.batcher.submit(list(subs))
                        if isinstance(result, Exception):
                            raise SpeechprintError(str(result))
                        if result is not None:
                            return IdentifyOutcome(
                                STATUS_IDENTIFIED,
                                file_id=result.file_id,
                                label_id=pipeline.registry.lookup(result.file_id),
                                confidence=result.confidence,
                                audio_consumed_s=consumed_s,
                            )
            else:
                raise SpeechprintError(f"unknown opcode 0x{opcode:02x}")
        if native_rate is None or consumed == 0:
            return IdentifyOutcome(STATUS_ERROR, message="stream carried no audio")
        from .audio import AudioBuffer, resample
        from .fingerprint import fingerprint_audio

        audio = AudioBuffer(np.concatenate(collected), native_rate)
        if audio.sample_rate != pipeline.canonical_rate:
            audio = resample(audio, pipeline.canonical_rate)
        if audio.duration_seconds < pipeline.min_decision_audio_s - 1e-9:
            return IdentifyOutcome(
                STATUS_ERROR,
                message=(
                    f"{audio.duration_seconds:.3f}s of audio is below the "
                    f"{pipeline.min_decision_audio_s:.3f}s fingerprinting minimum"
                ),
            )
        fp = fingerprint_audio(
            audio, pipeline.spectral_config, pipeline.fingerprint_config
        )
        result = server.batcher.submit(list(fp.subs))
        if isinstance(result, Exception):
            raise SpeechprintError(str(result))
        if result is not None:
            return IdentifyOutcome(
                STATUS_IDENTIFIED,
                file_id=result.file_id,
                label_id=pipeline.registry.lookup(result.file_id),
                confidence=result.confidence,
                audio_consumed_s=audio.duration_seconds,
            )
        return pipeline.enroll_file(audio)


class PipelineServer(socketserver.ThreadingTCPServer):
    """TCP server wrapping a Pipeline; one thread per session.

    Shutdown is graceful: in-flight sessions (including enrolments) run
    to completion before ``server_close`` returns, so the index and
    registry are never left half-updated by a stop.
    """

    allow_reuse_address = True
    daemon_threads = False  # close() must join in-flight enrolments
    # sessions arrive in bursts; the socketserver default backlog of 5
    # lets simultaneous connects overflow the accept queue and get reset
    request_queue_size = 128

    def __init__(
        self, address: tuple[str, int], pipeline: Pipeline, batch_window_s: float = 0.020
    ) -> None:
        super().__init__(address, _SessionHandler)
        self.pipeline = pipeline
        self.batcher = QueryBatcher(pipeline.index, batch_window_s)

    def server_close(self) -> None:
        super().server_close()
        self.batcher.close()


def parse_endpoint(listen: str) -> tuple[str, int]:
    """"host:port" -> (host, port); bare ":port" binds all interfaces."""
    host, sep, port = listen.rpartition(":")
    if not sep or not port.isdigit():
        raise SpeechprintError(f"listen endpoint must be host:port, got {listen!r}")
    return host or "0.0.0.0", int(port)


def serve(listen: str, pipeline: Pipeline, batch_window_s: float = 0.020) -> PipelineServer:
    """Binds a PipelineServer; the caller drives serve_forever/shutdown."""
    return PipelineServer(parse_endpoint(listen), pipeline, batch_window_s)


def identify_over_socket(
    host: str,
    port: int,
    wav_bytes: bytes,
    chunk_size: int = 4096,
    timeout_s: float = 60.0,
) -> IdentifyOutcome:
    """Small reference client: streams a WAV file, returns the outcome."""
    with socket.create_connection((host, port), timeout=timeout_s) as sock:
        for start in range(0, len(wav_bytes), chunk_size):
            write_frame(sock, OP_AUDIO_CHUNK, wav_bytes[start : start + chunk_size])
        write_frame(sock, OP_END)
        frame = read_frame(sock)
    if frame is None:
        raise SpeechprintError("server closed the connection without a result")
    opcode, payload = frame
    if opcode == OP_ERROR:
        return IdentifyOutcome(STATUS_ERROR, message=payload.decode("utf-8"))
    if opcode != OP_RESULT:
        raise SpeechprintError(f"unexpected reply opcode 0x{opcode:02x}")
    code, file_id, label_id, confidence = struct.unpack("<BQQf", payload)
    status = STATUS_IDENTIFIED if code == 0 else STATUS_ENROLLED
    return IdentifyOutcome(
        status,
        file_id=file_id or None,
        label_id=label_id or None,
        confidence=confidence,
    )
