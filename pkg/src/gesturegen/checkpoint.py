"""Versioned binary model checkpoints.

Layout: 4-byte magic "G2P1", little-endian uint32 format version, uint32
header length, a UTF-8 JSON header (layer configs, training settings,
epoch, metric history, tensor name/shape table), the raw float32 tensor
payloads in table order, and a trailing CRC-32 of everything before it.
Integers and floats are little-endian throughout, so files round-trip
bit-exactly across machines.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GestureGenError
from .model import (
    DiscriminatorConfig,
    DiscriminatorParams,
    GanParams,
    GeneratorConfig,
    GeneratorParams,
)
from .numeric import Tensor

MAGIC = b"G2P1"
FORMAT_VERSION = 1


class CheckpointError(GestureGenError):
    """Base for checkpoint file problems."""


class CheckpointFormatError(CheckpointError):
    """The file is not a checkpoint or its structure is malformed."""


class CheckpointVersionError(CheckpointError):
    """The file's format version is not supported."""


class CheckpointTruncatedError(CheckpointError):
    """The file ends before its declared contents do."""


class CheckpointChecksumError(CheckpointError):
    """The trailing CRC-32 does not match the stored bytes."""


@dataclass
class Checkpoint:
    """A trained (or initialized) model plus its training provenance.

    train_config and history hold plain JSON-compatible values so the
    header stays readable by tools outside this package.
    """

    params: GanParams
    train_config: dict | None = None
    epoch: int = 0
    history: list = field(default_factory=list)
    version: int = FORMAT_VERSION


def _named_tensors(params: GanParams) -> list[tuple[str, Tensor]]:
    out = [("gen." + name, t) for name, t in params.gen.named.items()]
    out += [("disc." + name, t) for name, t in params.disc.named.items()]
    return out


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    if checkpoint.version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"can only write version {FORMAT_VERSION}, got {checkpoint.version}"
        )
    tensors = _named_tensors(checkpoint.params)
    header = {
        "generator": asdict(checkpoint.params.gen.config),
        "discriminator": asdict(checkpoint.params.disc.config),
        "train": checkpoint.train_config,
        "epoch": int(checkpoint.epoch),
        "history": checkpoint.history,
        "tensors": [[name, list(t.data.shape)] for name, t in tensors],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", checkpoint.version), struct.pack("<I", len(head)), head]
    for _, t in tensors:
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    blob = b"".join(parts)
    blob += struct.pack("<I", zlib.crc32(blob))
    with open(path, "wb") as f:
        f.write(blob)


def _config_from(d: dict, cls):
    kwargs = dict(d)
    if "widths" in kwargs:
        kwargs["widths"] = tuple(kwargs["widths"])
    return cls(**kwargs)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4:
        raise CheckpointTruncatedError(f"{len(data)} bytes is too short for the magic")
    if data[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    pos = 4

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data) - 4:   # the last 4 bytes belong to the checksum
            raise CheckpointTruncatedError(f"file ends inside {what}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if len(data) < 12:
        raise CheckpointTruncatedError("file ends inside the version or header-length field")
    version = struct.unpack("<I", data[4:8])[0]
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"format version {version}, supported: {FORMAT_VERSION}")
    pos = 8
    (head_len,) = struct.unpack("<I", take(4, "the header length"))
    try:
        header = json.loads(take(head_len, "the header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"header is not valid JSON: {exc}") from exc

    try:
        gen_cfg = _config_from(header["generator"], GeneratorConfig)
        disc_cfg = _config_from(header["discriminator"], DiscriminatorConfig)
        table = [(str(name), tuple(int(s) for s in shape)) for name, shape in header["tensors"]]
        epoch = int(header["epoch"])
        history = list(header["history"])
        train_config = header["train"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"header is missing or mistypes a field: {exc}") from exc

    named: dict[str, dict[str, Tensor]] = {"gen": {}, "disc": {}}
    for name, shape in table:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = take(4 * count, f"tensor {name}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
        prefix, _, layer = name.partition(".")
        if prefix not in named or not layer:
            raise CheckpointFormatError(f"tensor name {name!r} lacks a gen./disc. prefix")
        named[prefix][layer] = Tensor(arr, name=layer)
    if pos != len(data) - 4:
        raise CheckpointFormatError(f"{len(data) - 4 - pos} unexpected bytes after the tensors")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != stored_crc:
        raise CheckpointChecksumError("CRC-32 mismatch, the file is corrupt")

    params = GanParams(
        gen=GeneratorParams(gen_cfg, named["gen"]),
        disc=DiscriminatorParams(disc_cfg, named["disc"]),
    )
    return Checkpoint(
        params=params, train_config=train_config, epoch=epoch, history=history, version=version
    )
