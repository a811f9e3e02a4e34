"""NLSFLD1 field snapshots and small atomic-write helpers.

Layout::

    b"NLSFLD1\\n"
    uint32 little-endian header length
    UTF-8 JSON header {dimension, kind, side_lengths, grid_points, time_stamp}
    row-major complex values, interleaved little-endian float64 (re, im)
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .spectral import DomainSpec, Field

MAGIC = b"NLSFLD1\n"


class SnapshotError(ValueError):
    pass


def encode_field(f: Field) -> bytes:
    header = f.domain.to_json()
    header["time_stamp"] = float(f.time)
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    body = np.ascontiguousarray(f.values, dtype="<c16").tobytes(order="C")
    return MAGIC + struct.pack("<I", len(raw)) + raw + body


def decode_field(blob: bytes) -> Field:
    if not blob.startswith(MAGIC):
        raise SnapshotError("not an NLSFLD1 snapshot (bad magic)")
    off = len(MAGIC)
    if len(blob) < off + 4:
        raise SnapshotError("truncated header length")
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    try:
        header = json.loads(blob[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"unreadable header: {exc}") from exc
    off += hlen
    domain = DomainSpec.from_json(header)
    count = int(np.prod(domain.shape))
    if len(blob) - off != 16 * count:
        raise SnapshotError(f"expected {16 * count} payload bytes, found {len(blob) - off}")
    values = np.frombuffer(blob, dtype="<c16", count=count, offset=off).reshape(domain.shape)
    return Field(domain, values, float(header["time_stamp"]))


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_field(path, f: Field) -> None:
    atomic_write_bytes(path, encode_field(f))


def read_field(path) -> Field:
    return decode_field(Path(path).read_bytes())
