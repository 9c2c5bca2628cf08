"""Audio frontend: WAV files, fixed-length chunking, log-mel features.

The synthesis model consumes speech as two-second chunks at 16 kHz mono,
reduced to 64 log-mel bands computed with a 25 ms Hann window and a 10 ms
hop (198 frames per chunk). The WAV reader is a small RIFF parser so that
unsupported codecs, truncation, and empty files raise distinct errors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import GestureGenError


class AudioError(GestureGenError):
    """Base class for audio input errors."""


class UnsupportedWavError(AudioError):
    """The WAV file uses a codec or layout this package does not read."""


class TruncatedWavError(AudioError):
    """The WAV file ends before its declared data."""


class EmptyWavError(AudioError):
    """The WAV file contains no samples."""


def load_wav(path) -> tuple[np.ndarray, int]:
    """Read a PCM16 or float32 WAV file.

    Returns:
        (samples, sample_rate): float32 samples in [-1, 1], mono. Stereo
        files are averaged; 16-bit data is scaled by 1/32768 so the most
        negative code maps to exactly -1.0.

    Raises:
        UnsupportedWavError: compression codes other than PCM16/float32,
            or more than two channels.
        TruncatedWavError: header or data shorter than declared.
        EmptyWavError: a valid file with zero samples.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise UnsupportedWavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    offset = 12
    while offset + 8 <= len(blob):
        tag = blob[offset : offset + 4]
        (size,) = struct.unpack_from("<I", blob, offset + 4)
        body_start = offset + 8
        if body_start + size > len(blob):
            if tag in (b"fmt ", b"data"):
                raise TruncatedWavError(
                    f"{path}: chunk {tag!r} declares {size} bytes but file ends early"
                )
            break
        if tag == b"fmt ":
            fmt = blob[body_start : body_start + size]
        elif tag == b"data":
            data = blob[body_start : body_start + size]
        offset = body_start + size + (size & 1)  # chunks are word-aligned

    if fmt is None or len(fmt) < 16:
        raise TruncatedWavError(f"{path}: missing or short fmt chunk")
    if data is None:
        raise TruncatedWavError(f"{path}: missing data chunk")

    audio_format, channels, sample_rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if channels not in (1, 2):
        raise UnsupportedWavError(f"{path}: {channels} channels, expected mono or stereo")
    if audio_format == 1 and bits == 16:
        raw = np.frombuffer(data, dtype="<i2")
        samples = raw.astype(np.float32) / np.float32(32768.0)
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float32)
        samples = np.clip(samples, -1.0, 1.0)
    else:
        raise UnsupportedWavError(
            f"{path}: format code {audio_format} with {bits} bits is not supported"
        )
    if channels == 2:
        if samples.size % 2:
            raise TruncatedWavError(f"{path}: stereo data with an odd sample count")
        samples = samples.reshape(-1, 2).mean(axis=1, dtype=np.float32)
    if samples.size == 0:
        raise EmptyWavError(f"{path}: no samples")
    return np.ascontiguousarray(samples, dtype=np.float32), int(sample_rate)


def save_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write mono float32 samples in [-1, 1] as a PCM16 WAV file."""
    samples = np.asarray(samples, dtype=np.float32)
    codes = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    body = codes.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(body), b"WAVE",
        b"fmt ", 16, 1, 1, sample_rate, sample_rate * 2, 2, 16,
        b"data", len(body),
    )
    with open(path, "wb") as fh:
        fh.write(header + body)


def quantize_wav_grid(samples: np.ndarray) -> np.ndarray:
    """Snap samples to the exact values a PCM16 round trip would produce."""
    samples = np.asarray(samples, dtype=np.float32)
    codes = np.clip(np.round(samples * 32768.0), -32768, 32767)
    return (codes.astype(np.float32) / np.float32(32768.0)).astype(np.float32)


def resample(samples: np.ndarray, rate_in: int, rate_out: int) -> np.ndarray:
    """Linear-interpolation resampling of a mono signal."""
    if rate_in == rate_out:
        return np.asarray(samples, dtype=np.float32)
    samples = np.asarray(samples, dtype=np.float64)
    duration = samples.size / rate_in
    n_out = max(int(round(duration * rate_out)), 1)
    src_pos = np.arange(n_out) * (rate_in / rate_out)
    src_pos = np.minimum(src_pos, samples.size - 1)
    return np.interp(src_pos, np.arange(samples.size), samples).astype(np.float32)


@dataclass
class AudioChunk:
    """A fixed-duration slice of the input signal.

    n_valid counts the samples that came from the source; the remainder, if
    any, is zero padding on the final chunk of a stream.
    """

    samples: np.ndarray
    sample_rate: int
    index: int
    n_valid: int

    @property
    def padded(self) -> bool:
        return self.n_valid < self.samples.size


class ChunkAssembler:
    """Accumulates arbitrary sample blocks into fixed-length chunks.

    Used both for offline chunking and by the streaming capture stage.
    """

    def __init__(self, sample_rate: int, chunk_seconds: float = 2.0):
        self.sample_rate = int(sample_rate)
        self.chunk_len = int(round(chunk_seconds * sample_rate))
        if self.chunk_len < 1:
            raise AudioError(f"chunk of {chunk_seconds} s is empty at {sample_rate} Hz")
        self._pending: list[np.ndarray] = []
        self._pending_len = 0
        self._next_index = 0

    def feed(self, block: np.ndarray) -> list[AudioChunk]:
        """Add samples; return every chunk completed by this block."""
        block = np.asarray(block, dtype=np.float32)
        if block.size:
            self._pending.append(block)
            self._pending_len += block.size
        done = []
        while self._pending_len >= self.chunk_len:
            done.append(self._take(self.chunk_len))
        return done

    def flush(self) -> AudioChunk | None:
        """Zero-pad and return the final partial chunk, if any."""
        if self._pending_len == 0:
            return None
        return self._take(self._pending_len)

    def _take(self, n_valid: int) -> AudioChunk:
        joined = np.concatenate(self._pending) if len(self._pending) > 1 else self._pending[0]
        head, tail = joined[: self.chunk_len], joined[self.chunk_len :]
        self._pending = [tail] if tail.size else []
        self._pending_len = tail.size
        if head.size < self.chunk_len:
            head = np.concatenate([head, np.zeros(self.chunk_len - head.size, dtype=np.float32)])
        chunk = AudioChunk(
            samples=np.ascontiguousarray(head, dtype=np.float32),
            sample_rate=self.sample_rate,
            index=self._next_index,
            n_valid=min(n_valid, self.chunk_len),
        )
        self._next_index += 1
        return chunk


def chunk_stream(samples: np.ndarray, sample_rate: int, chunk_seconds: float = 2.0) -> list[AudioChunk]:
    """Cut a signal into consecutive fixed-duration chunks.

    The trailing remainder, when shorter than a chunk, is zero padded and
    flagged through n_valid. Empty input produces no chunks.
    """
    assembler = ChunkAssembler(sample_rate, chunk_seconds)
    chunks = assembler.feed(np.asarray(samples, dtype=np.float32))
    tail = assembler.flush()
    if tail is not None:
        chunks.append(tail)
    return chunks


@dataclass(frozen=True)
class MelConfig:
    """Log-mel extraction settings.

    Defaults give 198 frames of 64 bands for a two-second 16 kHz chunk:
    frame count is (N - window) // hop + 1.
    """

    sample_rate: int = 16000
    window: int = 400
    hop: int = 160
    bands: int = 64
    n_fft: int = 512
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10


@dataclass
class FeatureSequence:
    """Frame-major log-mel features: data[f, m] for frame f, band m."""

    data: np.ndarray
    hop_seconds: float
    chunk_index: int = 0


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (np.power(10.0, np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: MelConfig = MelConfig()) -> np.ndarray:
    """Triangular mel filters [bands, n_fft//2 + 1], peak weight 1."""
    n_bins = config.n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * (config.sample_rate / config.n_fft)
    mel_edges = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.bands + 2)
    hz_edges = mel_to_hz(mel_edges)
    fb = np.zeros((config.bands, n_bins))
    for m in range(config.bands):
        lo, mid, hi = hz_edges[m], hz_edges[m + 1], hz_edges[m + 2]
        up = (bin_hz - lo) / max(mid - lo, 1e-12)
        down = (hi - bin_hz) / max(hi - mid, 1e-12)
        fb[m] = np.clip(np.minimum(up, down), 0.0, 1.0)
    return fb


def band_of_frequency(hz: float, config: MelConfig = MelConfig()) -> int:
    """Index of the mel band whose triangle peaks nearest to hz."""
    mel_edges = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.bands + 2)
    centers = mel_to_hz(mel_edges[1:-1])
    return int(np.argmin(np.abs(centers - hz)))


def mel_features(chunk, config: MelConfig = MelConfig()) -> FeatureSequence:
    """Log-mel features of an AudioChunk or raw sample array.

    Frames are windowed with a periodic Hann window, padded to n_fft, and
    reduced to band energies through the triangular filterbank; the log is
    floored at config.log_floor, so silence maps to log(1e-10) everywhere.
    """
    if isinstance(chunk, AudioChunk):
        if chunk.sample_rate != config.sample_rate:
            raise AudioError(
                f"chunk at {chunk.sample_rate} Hz, features expect {config.sample_rate} Hz"
            )
        samples = chunk.samples
        chunk_index = chunk.index
    else:
        samples = np.asarray(chunk, dtype=np.float32)
        chunk_index = 0
    if samples.size < config.window:
        raise AudioError(
            f"signal of {samples.size} samples is shorter than the {config.window} window"
        )
    if config.n_fft < config.window:
        raise AudioError("n_fft must be at least the window length")

    x = samples.astype(np.float64)
    n_frames = (x.size - config.window) // config.hop + 1
    idx = np.arange(config.window)[None, :] + config.hop * np.arange(n_frames)[:, None]
    frames = x[idx]
    n = np.arange(config.window)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / config.window)
    spectrum = np.fft.rfft(frames * hann, n=config.n_fft, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    energies = power @ mel_filterbank(config).T
    logmel = np.log(np.maximum(energies, config.log_floor))
    return FeatureSequence(
        data=logmel.astype(np.float32),
        hop_seconds=config.hop / config.sample_rate,
        chunk_index=chunk_index,
    )
