"""Live capture -> inference -> playback pipeline with latency accounting.

The capture stage accumulates source samples into two-second chunks, the
inference stage maps each chunk to thirty pose frames, and the playback
stage paces those frames out at fifteen per second, easing the first few
frames of every chunk from the last frame of the previous one. Stages talk
through bounded queues so a slow stage back-pressures instead of buffering
without limit.

A clock object paces everything. The real clock sleeps on the wall clock
and runs the stages on threads; the virtual clock advances a simulated time
cursor through the same per-chunk schedule single-threaded, which makes
every latency number deterministic and lets a long stream run in
milliseconds. Sequence ids count chunks from 1; frame indices within a
chunk run 0..29.

Wire format per frame: a 4-byte little-endian payload length, then the
payload: version byte, sequence id (4 bytes), frame index (1 byte),
capture timestamp in ms (8 bytes), keypoint count (2 bytes), and K*3
float32 coordinates, everything little-endian.
"""

from __future__ import annotations

import logging
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .animate import interpolate
from .audio import ChunkAssembler, MelConfig, load_wav, mel_features, resample
from .errors import GestureGenError
from .model import frames_from_rows, generator_forward

log = logging.getLogger("gesturegen.stream")

PROTOCOL_VERSION = 1
_LENGTH = struct.Struct("<I")
_HEADER = struct.Struct("<BIBQH")   # version, sequence id, frame index, ts ms, K


class StreamError(GestureGenError):
    """A pipeline input or stage contract is violated."""


class OverrunError(StreamError):
    """Inference on one chunk took longer than the chunk itself."""

    def __init__(self, chunk_id: int, seconds: float, budget: float):
        self.chunk_id = chunk_id
        self.seconds = seconds
        self.budget = budget
        super().__init__(
            f"chunk {chunk_id}: inference took {seconds:.3f} s, "
            f"budget {budget:.3f} s; the pipeline cannot keep real time"
        )


class FrameDecodeError(StreamError):
    """A wire frame cannot be decoded."""


class ShortBufferError(FrameDecodeError):
    """The buffer ends before the declared frame does."""


class UnknownVersionError(FrameDecodeError):
    """The frame's protocol version is not supported."""


class LengthMismatchError(FrameDecodeError):
    """The declared payload length contradicts the frame's own header."""


# -------------------------------------------------------------- wire protocol


@dataclass(frozen=True, eq=False)
class PoseFrameMessage:
    """One emitted pose frame: (sequence_id, frame_index) strictly increase."""

    sequence_id: int
    frame_index: int
    timestamp_ms: int
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.array(self.coords, dtype=np.float32))
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise StreamError(f"coords shape {self.coords.shape}, expected (K, 3)")
        if not 1 <= self.coords.shape[0] <= 0xFFFF:
            raise StreamError(f"keypoint count {self.coords.shape[0]} not encodable")
        if not 0 <= self.sequence_id <= 0xFFFFFFFF:
            raise StreamError(f"sequence id {self.sequence_id} out of range")
        if not 0 <= self.frame_index < 30:
            raise StreamError(f"frame index {self.frame_index} outside 0..29")
        if not 0 <= self.timestamp_ms <= 0xFFFFFFFFFFFFFFFF:
            raise StreamError(f"timestamp {self.timestamp_ms} out of range")

    def __eq__(self, other):
        if not isinstance(other, PoseFrameMessage):
            return NotImplemented
        return (
            self.sequence_id == other.sequence_id
            and self.frame_index == other.frame_index
            and self.timestamp_ms == other.timestamp_ms
            and np.array_equal(self.coords, other.coords)
        )


def encode_frame(msg: PoseFrameMessage) -> bytes:
    """Length-prefixed binary encoding; decode_frame inverts it bit-exactly."""
    coords = np.ascontiguousarray(msg.coords, dtype="<f4")
    payload = (
        _HEADER.pack(
            PROTOCOL_VERSION,
            msg.sequence_id,
            msg.frame_index,
            msg.timestamp_ms,
            coords.shape[0],
        )
        + coords.tobytes()
    )
    return _LENGTH.pack(len(payload)) + payload


def decode_frame(buf: bytes) -> PoseFrameMessage:
    buf = bytes(buf)
    if len(buf) < _LENGTH.size:
        raise ShortBufferError(f"{len(buf)} bytes cannot hold a length prefix")
    (length,) = _LENGTH.unpack_from(buf, 0)
    total = _LENGTH.size + length
    if len(buf) < total:
        raise ShortBufferError(f"declared {length} payload bytes, got {len(buf) - 4}")
    if len(buf) > total:
        raise LengthMismatchError(f"{len(buf) - total} bytes beyond the declared frame")
    if length < 1:
        raise LengthMismatchError("payload too short for a version byte")
    version = buf[4]
    if version != PROTOCOL_VERSION:
        raise UnknownVersionError(f"protocol version {version}, expected {PROTOCOL_VERSION}")
    if length < _HEADER.size:
        raise LengthMismatchError(f"payload of {length} bytes cannot hold a header")
    _, seq, idx, ts, k = _HEADER.unpack_from(buf, 4)
    if length != _HEADER.size + 12 * k:
        raise LengthMismatchError(
            f"declared {length} payload bytes, header promises {_HEADER.size + 12 * k}"
        )
    coords = np.frombuffer(buf, dtype="<f4", count=3 * k, offset=4 + _HEADER.size)
    return PoseFrameMessage(seq, idx, ts, coords.reshape(k, 3))


# --------------------------------------------------------------------- clocks


class RealClock:
    """Wall-clock seconds since construction; sleep_until really sleeps."""

    is_virtual = False

    def __init__(self):
        self._t0 = time.perf_counter()

    def now(self) -> float:
        return time.perf_counter() - self._t0

    def sleep_until(self, t: float) -> None:
        dt = t - self.now()
        if dt > 0:
            time.sleep(dt)


class VirtualClock:
    """Simulated clock: sleep_until jumps the cursor, nothing ever waits."""

    is_virtual = True

    def __init__(self):
        self._now = 0.0

    def now(self) -> float:
        return self._now

    def sleep_until(self, t: float) -> None:
        if t > self._now:
            self._now = t


# --------------------------------------------------------------------- config


@dataclass(frozen=True)
class StreamConfig:
    sample_rate: int = 16000
    chunk_seconds: float = 2.0
    fps: float = 15.0
    blend_frames: int = 3
    queue_capacity: int = 2
    stall_tolerance: float = 0.05

    def __post_init__(self):
        if self.sample_rate < 1 or self.chunk_seconds <= 0 or self.fps <= 0:
            raise StreamError("sample_rate, chunk_seconds and fps must be positive")
        n = self.frames_per_chunk
        if not 2 <= n <= 30:
            raise StreamError(f"{n} frames per chunk outside the supported 2..30")
        if not 0 <= self.blend_frames < n:
            raise StreamError(f"blend_frames {self.blend_frames} outside 0..{n - 1}")
        if self.queue_capacity < 1:
            raise StreamError("queues need capacity of at least 1")
        if self.stall_tolerance < 0:
            raise StreamError("stall_tolerance cannot be negative")

    @property
    def frames_per_chunk(self) -> int:
        return int(round(self.chunk_seconds * self.fps))

    @property
    def chunk_samples(self) -> int:
        return int(round(self.chunk_seconds * self.sample_rate))


# -------------------------------------------------------------------- reports


@dataclass(frozen=True)
class ChunkLatency:
    """Timing of one chunk, all in stream seconds.

    total_delay is first_playback minus the chunk's nominal start, kept as
    the sum capture + queue wait + inference + pacing wait so the parts are
    visible.
    """

    chunk_id: int
    capture_complete: float
    queue_wait: float
    inference_seconds: float
    pacing_wait: float
    first_playback: float
    total_delay: float


@dataclass(frozen=True)
class StallEvent:
    """Playback had to hold the last pose while waiting for this chunk."""

    chunk_id: int
    seconds: float


@dataclass
class LatencyReport:
    chunk_seconds: float
    chunks: list = field(default_factory=list)
    stalls: list = field(default_factory=list)

    @property
    def delays(self) -> list:
        return [c.total_delay for c in self.chunks]

    @property
    def mean_total_delay(self):
        return float(np.mean(self.delays)) if self.chunks else None

    @property
    def max_total_delay(self):
        return max(self.delays) if self.chunks else None


# ----------------------------------------------------------------- predictors


class ConstantPosePredictor:
    """Stub model: fixed frames, with a declared per-chunk inference cost."""

    def __init__(self, frames: np.ndarray, inference_seconds: float = 0.0):
        self.frames = np.ascontiguousarray(frames, dtype=np.float32)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise StreamError(f"stub frames shape {self.frames.shape}, expected (F, K, 3)")
        if inference_seconds < 0:
            raise StreamError("inference_seconds cannot be negative")
        self.inference_seconds = float(inference_seconds)

    def __call__(self, samples, sample_rate) -> np.ndarray:
        return self.frames


class CheckpointPredictor:
    """Runs a trained generator on the log-mel features of each chunk."""

    def __init__(self, model, mel: MelConfig = MelConfig()):
        if hasattr(model, "params"):
            model = model.params
        if hasattr(model, "gen"):
            model = model.gen
        self.gen = model
        self.mel = mel

    def __call__(self, samples, sample_rate) -> np.ndarray:
        if sample_rate != self.mel.sample_rate:
            samples = resample(samples, sample_rate, self.mel.sample_rate)
        feats = mel_features(samples, self.mel)
        out = generator_forward(self.gen, feats.data)
        return frames_from_rows(out.data)


# -------------------------------------------------------------------- sources


def replay_source(path, clock, *, sample_rate: int = 16000, block_seconds: float = 0.1):
    """Generator of sample blocks paced by the clock, replacing a microphone.

    Each block is yielded once the clock reaches the block's end position in
    the audio, so a real clock replays in real time and a virtual clock
    replays instantly while keeping the same timeline.
    """
    samples, rate = load_wav(path)
    if rate != sample_rate:
        samples = resample(samples, rate, sample_rate)
    block = max(1, int(round(block_seconds * sample_rate)))

    def blocks():
        sent = 0
        while sent < samples.size:
            out = samples[sent : sent + block]
            sent += out.size
            clock.sleep_until(sent / sample_rate)
            yield out

    return blocks()


# ---------------------------------------------------------------------- sinks


class FileSink:
    """Appends encoded frames to a binary file."""

    def __init__(self, path):
        self._fh = open(path, "wb")

    def __call__(self, msg: PoseFrameMessage) -> None:
        self._fh.write(encode_frame(msg))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_frame_file(path) -> list:
    """Parse a FileSink output back into messages, in order."""
    with open(path, "rb") as fh:
        data = fh.read()
    frames = []
    at = 0
    while at < len(data):
        if at + _LENGTH.size > len(data):
            raise ShortBufferError("file ends inside a length prefix")
        (length,) = _LENGTH.unpack_from(data, at)
        end = at + _LENGTH.size + length
        frames.append(decode_frame(data[at:end]))
        at = end
    return frames


class TcpSink:
    """Sends encoded frames over an established TCP connection."""

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)

    def __call__(self, msg: PoseFrameMessage) -> None:
        self._sock.sendall(encode_frame(msg))

    def close(self) -> None:
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ------------------------------------------------------------------- pipeline


def _predict(model, chunk, config: StreamConfig, n_keypoints, simulate_cost: bool):
    t0 = time.perf_counter()
    frames = np.asarray(model(chunk.samples, chunk.sample_rate), dtype=np.float32)
    measured = time.perf_counter() - t0
    declared = getattr(model, "inference_seconds", None)
    seconds = measured if declared is None else float(declared)
    if simulate_cost and declared is not None and declared > measured:
        time.sleep(declared - measured)
    bad = (
        frames.ndim != 3
        or frames.shape[0] != config.frames_per_chunk
        or frames.shape[2] != 3
        or (n_keypoints is not None and frames.shape[1] != n_keypoints)
    )
    if bad:
        raise StreamError(
            f"model produced frames {frames.shape}, expected "
            f"({config.frames_per_chunk}, {n_keypoints or 'K'}, 3)"
        )
    return frames, seconds


def _emit_chunk(sink, clock, config: StreamConfig, chunk_id, frames, captured, start, prev_last):
    ts_ms = int(round(captured * 1000.0))
    for j in range(config.frames_per_chunk):
        clock.sleep_until(start + j / config.fps)
        out = frames[j]
        if prev_last is not None and j < config.blend_frames:
            out = interpolate(prev_last, frames[j], (j + 1) / config.blend_frames, "between")
        sink(PoseFrameMessage(chunk_id, j, ts_ms, out))
    return frames[config.frames_per_chunk - 1]


class _Playback:
    """Shared playback bookkeeping for both drivers.

    The first frame of chunk n+1 goes out one frame interval after the last
    frame of chunk n, or as soon as the chunk is ready, whichever is later;
    arriving later than the schedule by more than the stall tolerance is
    logged as a stall.
    """

    def __init__(self, sink, clock, config: StreamConfig):
        self.sink = sink
        self.clock = clock
        self.config = config
        self.report = LatencyReport(chunk_seconds=config.chunk_seconds)
        self._prev_last = None
        self._prev_start = None

    def play(self, chunk_id, frames, captured, queue_wait, seconds, ready):
        config = self.config
        if self._prev_start is None:
            natural = ready
        else:
            natural = self._prev_start + config.frames_per_chunk / config.fps
        start = max(ready, natural)
        if self._prev_start is not None and ready - natural > config.stall_tolerance:
            stall = StallEvent(chunk_id, ready - natural)
            self.report.stalls.append(stall)
            log.warning(
                "chunk %d ready %.3f s late; playback held the last pose",
                chunk_id,
                stall.seconds,
            )
        self._prev_last = _emit_chunk(
            self.sink, self.clock, config, chunk_id, frames, captured, start, self._prev_last
        )
        self._prev_start = start
        self.report.chunks.append(
            ChunkLatency(
                chunk_id=chunk_id,
                capture_complete=captured,
                queue_wait=queue_wait,
                inference_seconds=seconds,
                pacing_wait=start - ready,
                first_playback=start,
                total_delay=config.chunk_seconds + queue_wait + seconds + (start - ready),
            )
        )


def run_pipeline(source, model, sink, config: StreamConfig | None = None, clock=None) -> LatencyReport:
    """Stream a sample source through the model to the sink; report latency.

    source yields sample blocks (already paced by its clock); model maps a
    chunk's samples to [frames_per_chunk, K, 3] poses; sink is called with
    each PoseFrameMessage in strictly increasing (sequence id, frame index)
    order. Inference longer than a chunk raises OverrunError with the
    1-based chunk id.
    """
    config = config or StreamConfig()
    clock = clock or RealClock()
    if getattr(clock, "is_virtual", False):
        return _run_virtual(source, model, sink, config, clock)
    return _run_threaded(source, model, sink, config, clock)


def _run_virtual(source, model, sink, config, clock):
    assembler = ChunkAssembler(config.sample_rate, config.chunk_seconds)
    captured = []
    for block in source:
        for chunk in assembler.feed(block):
            captured.append((chunk, clock.now()))
    # a trailing partial chunk never completes, so it is not animated

    playback = _Playback(sink, clock, config)
    n_keypoints = None
    inference_free = 0.0
    for chunk, capture_time in captured:
        chunk_id = chunk.index + 1
        frames, seconds = _predict(model, chunk, config, n_keypoints, simulate_cost=False)
        n_keypoints = frames.shape[1]
        if seconds > config.chunk_seconds:
            raise OverrunError(chunk_id, seconds, config.chunk_seconds)
        inference_start = max(capture_time, inference_free)
        ready = inference_start + seconds
        inference_free = ready
        playback.play(
            chunk_id, frames, capture_time, inference_start - capture_time, seconds, ready
        )
    return playback.report


_DONE = object()


@dataclass
class _Failure:
    exc: BaseException


def _put(q, item, stop) -> bool:
    while not stop.is_set():
        try:
            q.put(item, timeout=0.05)
            return True
        except queue.Full:
            continue
    return False


def _get(q, stop):
    while not stop.is_set():
        try:
            return q.get(timeout=0.05)
        except queue.Empty:
            continue
    return _DONE


def _run_threaded(source, model, sink, config, clock):
    chunks_q = queue.Queue(maxsize=config.queue_capacity)
    frames_q = queue.Queue(maxsize=config.queue_capacity)
    stop = threading.Event()

    def capture():
        try:
            assembler = ChunkAssembler(config.sample_rate, config.chunk_seconds)
            for block in source:
                for chunk in assembler.feed(block):
                    if not _put(chunks_q, (chunk, clock.now()), stop):
                        return
                if stop.is_set():
                    return
            _put(chunks_q, _DONE, stop)
        except BaseException as exc:
            _put(chunks_q, _Failure(exc), stop)

    def inference():
        n_keypoints = None
        try:
            while True:
                item = _get(chunks_q, stop)
                if item is _DONE or isinstance(item, _Failure):
                    _put(frames_q, item, stop)
                    return
                chunk, capture_time = item
                chunk_id = chunk.index + 1
                started = clock.now()
                frames, seconds = _predict(
                    model, chunk, config, n_keypoints, simulate_cost=True
                )
                n_keypoints = frames.shape[1]
                if seconds > config.chunk_seconds:
                    raise OverrunError(chunk_id, seconds, config.chunk_seconds)
                batch = (
                    chunk_id, frames, capture_time,
                    started - capture_time, seconds, clock.now(),
                )
                if not _put(frames_q, batch, stop):
                    return
        except BaseException as exc:
            _put(frames_q, _Failure(exc), stop)

    threads = [threading.Thread(target=capture), threading.Thread(target=inference)]
    for t in threads:
        t.start()
    playback = _Playback(sink, clock, config)
    try:
        while True:
            item = _get(frames_q, stop)
            if item is _DONE:
                break
            if isinstance(item, _Failure):
                raise item.exc
            chunk_id, frames, capture_time, queue_wait, seconds, ready = item
            playback.play(chunk_id, frames, capture_time, queue_wait, seconds, ready)
    finally:
        stop.set()
        for t in threads:
            t.join(timeout=2.0)
    return playback.report
