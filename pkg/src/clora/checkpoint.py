"""CLORA1 checkpoint format.

Layout, in order:

* 6-byte magic ``CLORA1``
* 4-byte little-endian unsigned header length
* UTF-8 header: one line per tensor, tab-separated ``name  rows  cols  offset``
  (offset in bytes from the start of the blob section)
* concatenated row-major float64 little-endian blobs

Round-trips are bit-exact; all tensors are 2-D.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, ShapeError

MAGIC = b"CLORA1"


@dataclass(frozen=True)
class TensorEntry:
    name: str
    rows: int
    cols: int
    offset: int


def _normalize(name: str, arr) -> np.ndarray:
    a = np.asarray(arr, dtype="<f8")
    if a.ndim != 2:
        raise ShapeError(f"tensor {name!r} must be 2-D, got shape {a.shape}")
    return np.ascontiguousarray(a)


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named 2-D float64 tensors; insertion order is preserved."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        if "\t" in name or "\n" in name or not name:
            raise CheckpointError(f"tensor name {name!r} may not be empty or contain tabs/newlines")
        a = _normalize(name, arr)
        entries.append(f"{name}\t{a.shape[0]}\t{a.shape[1]}\t{offset}\n")
        blob = a.tobytes(order="C")
        blobs.append(blob)
        offset += len(blob)
    header = "".join(entries).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def read_header(path) -> list[TensorEntry]:
    """Parse the table of contents without loading any tensor data."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
        raw_len = f.read(4)
        if len(raw_len) != 4:
            raise CheckpointError("truncated header length")
        (hlen,) = struct.unpack("<I", raw_len)
        header = f.read(hlen)
        if len(header) != hlen:
            raise CheckpointError(f"truncated header: expected {hlen} bytes, got {len(header)}")
    entries = []
    for line_no, line in enumerate(header.decode("utf-8").splitlines(), start=1):
        parts = line.split("\t")
        if len(parts) != 4:
            raise CheckpointError(f"header line {line_no} has {len(parts)} fields, expected 4")
        name, rows, cols, offset = parts
        try:
            entries.append(TensorEntry(name=name, rows=int(rows), cols=int(cols), offset=int(offset)))
        except ValueError as exc:
            raise CheckpointError(f"header line {line_no} is not numeric: {line!r}") from exc
    return entries


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read all tensors back, bit-exactly, keyed by name in header order."""
    entries = read_header(path)
    with open(path, "rb") as f:
        f.seek(len(MAGIC))
        (hlen,) = struct.unpack("<I", f.read(4))
        f.seek(len(MAGIC) + 4 + hlen)
        blob = f.read()
    out: dict[str, np.ndarray] = {}
    for e in entries:
        nbytes = e.rows * e.cols * 8
        if e.offset < 0 or e.offset + nbytes > len(blob):
            raise CheckpointError(
                f"tensor {e.name!r} spans bytes [{e.offset}, {e.offset + nbytes}) "
                f"but the blob section holds {len(blob)}"
            )
        if e.name in out:
            raise CheckpointError(f"duplicate tensor name {e.name!r}")
        flat = np.frombuffer(blob, dtype="<f8", count=e.rows * e.cols, offset=e.offset)
        out[e.name] = flat.reshape(e.rows, e.cols).copy()
    return out
