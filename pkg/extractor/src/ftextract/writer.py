"""Standalone writer for the `.ftens` feature-tensor interchange format.

The monitoring engine consumes these files; this tool only needs to
produce them, so the format is implemented here from its byte-level
definition rather than by importing the engine:

    magic "FIDL" | version u32 | N u32 | T u32 | P u32 | F u32
    | encoder_id length u16 | encoder_id UTF-8 | N*T*P*F float32

All integers and floats are little-endian; payload order is
[episode][time][patch][feature].
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"FIDL"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIIH")


def write_feature_tensor(data: np.ndarray, encoder_id: str, destination: str | Path) -> None:
    """Atomically write an (N, T, P, F) float32 array as a `.ftens` file."""
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 4:
        raise ValueError(f"expected an (N, T, P, F) array, got shape {data.shape}")
    if not np.isfinite(data).all():
        raise ValueError("refusing to write non-finite features")
    enc = encoder_id.encode("utf-8")
    if len(enc) > 0xFFFF:
        raise ValueError("encoder_id longer than 65535 UTF-8 bytes")
    destination = Path(destination)
    n, t, p, f = data.shape
    fd, tmp_name = tempfile.mkstemp(dir=destination.parent, suffix=".ftens.tmp")
    try:
        with os.fdopen(fd, "wb") as sink:
            sink.write(_HEADER.pack(MAGIC, VERSION, n, t, p, f, len(enc)))
            sink.write(enc)
            sink.write(data.tobytes())
        os.replace(tmp_name, destination)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
