"""Bit-exact binary interchange for episode feature tensors (`.ftens`).

A feature file is a little-endian header followed by a dense float32
payload in [episode][time][patch][feature] order:

    magic "FIDL" (4 bytes) | version u32 | N u32 | T u32 | P u32 | F u32
    | encoder_id length u16 | encoder_id UTF-8 bytes | N*T*P*F float32

The header is 26 bytes when encoder_id is empty.  Any implementation that
reproduces this layout byte-for-byte can exchange files with this one.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import FormatError, InsufficientData, ValidationError

TENSOR_MAGIC = b"FIDL"
TENSOR_VERSION = 1
FILE_SUFFIX = ".ftens"

_HEADER = struct.Struct("<4sIIIIIH")  # magic, version, N, T, P, F, encoder_id length


@dataclass(frozen=True)
class FeatureTensor:
    """Dense per-episode patch features, shape (episodes, time, patch, feature)."""

    data: np.ndarray
    encoder_id: str = ""

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 4:
            raise ValidationError(
                f"feature tensor must be 4-dimensional (N,T,P,F), got shape {arr.shape}"
            )
        object.__setattr__(self, "data", arr)
        if min(arr.shape[1:]) < 1:
            raise ValidationError(f"horizon/patches/features must all be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            idx = np.unravel_index(int(np.argmin(np.isfinite(arr))), arr.shape)
            raise ValidationError(f"non-finite value at (episode,t,patch,feature)={tuple(map(int, idx))}")

    @property
    def n_episodes(self) -> int:
        return self.data.shape[0]

    @property
    def horizon(self) -> int:
        return self.data.shape[1]

    @property
    def n_patches(self) -> int:
        return self.data.shape[2]

    @property
    def n_features(self) -> int:
        return self.data.shape[3]

    def episode(self, n: int) -> np.ndarray:
        """One episode as a (T, P, F) view."""
        return self.data[n]


def _as_sink(destination) -> tuple[BinaryIO, bool]:
    if isinstance(destination, (str, Path)):
        return open(destination, "wb"), True
    return destination, False


def _as_source(source) -> tuple[BinaryIO, bool]:
    if isinstance(source, (str, Path)):
        return open(source, "rb"), True
    if isinstance(source, (bytes, bytearray)):
        return io.BytesIO(source), True
    return source, False


def write_feature_file(tensor: FeatureTensor, destination) -> None:
    """Write `tensor` to a path or binary sink in the `.ftens` layout."""
    enc = tensor.encoder_id.encode("utf-8")
    if len(enc) > 0xFFFF:
        raise ValidationError("encoder_id longer than 65535 UTF-8 bytes")
    sink, owned = _as_sink(destination)
    try:
        n, t, p, f = tensor.data.shape
        try:
            sink.write(_HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, n, t, p, f, len(enc)))
            sink.write(enc)
            sink.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
        except OSError as exc:
            raise OSError(f"write failed near byte {sink.tell() if sink.seekable() else '?'}: {exc}") from exc
    finally:
        if owned:
            sink.close()


def _read_exact(source: BinaryIO, count: int, what: str) -> bytes:
    buf = source.read(count)
    if len(buf) != count:
        raise FormatError(f"truncated {what}: expected {count} bytes, got {len(buf)} (missing {count - len(buf)})")
    return buf


def read_feature_file(source) -> FeatureTensor:
    """Read and validate a `.ftens` file from a path, bytes, or binary source."""
    src, owned = _as_source(source)
    try:
        header = _read_exact(src, _HEADER.size, "header")
        magic, version, n, t, p, f, enc_len = _HEADER.unpack(header)
        if magic != TENSOR_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
        if version != TENSOR_VERSION:
            raise FormatError(f"unsupported format version {version}, expected {TENSOR_VERSION}")
        if min(t, p, f) < 1:
            raise FormatError(f"illegal dimensions N={n} T={t} P={p} F={f}")
        encoder_id = _read_exact(src, enc_len, "encoder_id").decode("utf-8")
        expected = n * t * p * f * 4
        payload = src.read(expected + 1)  # extra byte detects trailing garbage
        if len(payload) < expected:
            raise FormatError(
                f"truncated payload: expected {expected} bytes, got {len(payload)} (missing {expected - len(payload)})"
            )
        if len(payload) > expected:
            raise FormatError(f"payload has {len(payload) - expected} trailing byte(s) beyond N*T*P*F*4={expected}")
        data = np.frombuffer(payload, dtype="<f4").reshape(n, t, p, f)
        finite = np.isfinite(data)
        if not finite.all():
            idx = np.unravel_index(int(np.argmin(finite)), data.shape)
            raise ValidationError(f"non-finite payload value at (episode,t,patch,feature)={tuple(map(int, idx))}")
        return FeatureTensor(data=data.astype(np.float32), encoder_id=encoder_id)
    finally:
        if owned:
            src.close()


def write_frame_stream(frames: np.ndarray, sink: BinaryIO) -> None:
    """Length-prefixed frame records: u32 byte count, then P*F float32 LE."""
    frames = np.asarray(frames, dtype=np.float32)
    for frame in frames:
        payload = np.ascontiguousarray(frame, dtype="<f4").tobytes()
        sink.write(struct.pack("<I", len(payload)))
        sink.write(payload)


def read_frame_stream(source: BinaryIO, n_patches: int, n_features: int):
    """Yield (P, F) float32 frames from a length-prefixed byte stream.

    A clean EOF at a record boundary ends iteration; a short record or a
    length that disagrees with P*F*4 is a FormatError.
    """
    expected = n_patches * n_features * 4
    index = 0
    while True:
        head = source.read(4)
        if head == b"":
            return
        if len(head) < 4:
            raise FormatError(f"truncated length prefix at record {index}")
        (length,) = struct.unpack("<I", head)
        if length != expected:
            raise FormatError(f"record {index} declares {length} bytes, expected P*F*4={expected}")
        payload = _read_exact(source, length, f"record {index} payload")
        frame = np.frombuffer(payload, dtype="<f4").reshape(n_patches, n_features)
        if not np.isfinite(frame).all():
            raise ValidationError(f"non-finite value in stream record {index}")
        yield frame
        index += 1


def split_nominal(tensor: FeatureTensor, seed: int) -> tuple[FeatureTensor, FeatureTensor]:
    """Seeded disjoint episode split into (ceil(N/2), floor(N/2)) halves.

    The first half feeds memory construction, the second threshold
    calibration.  Episode order inside each half keeps the original
    file order so repeated splits are reproducible byte-for-byte.
    """
    n = tensor.n_episodes
    if n < 2:
        raise InsufficientData(f"need at least 2 episodes to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_first = (n + 1) // 2
    first = np.sort(perm[:n_first])
    second = np.sort(perm[n_first:])
    return (
        FeatureTensor(data=tensor.data[first], encoder_id=tensor.encoder_id),
        FeatureTensor(data=tensor.data[second], encoder_id=tensor.encoder_id),
    )
