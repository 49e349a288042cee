"""Binary artifact containers.

Two layouts share the same framing conventions (little-endian, UTF-8 ids):

* vector table -- 8-byte magic, u32 entry count, u32 dim, then per entry a
  u16 id length, the id bytes, and ``dim`` float32 values.  Used for visual
  feature stores (magic ``ARTCTXF1``) and node embedding tables
  (``ARTCTXE1``).
* named tensors -- 8-byte magic ``ARTCTXM1``, u32 tensor count, then per
  tensor a u16 name length, the name bytes, u32 rank, ``rank`` u32 dims and
  the float32 payload.  Used for model checkpoints.
"""

from __future__ import annotations

import os
import struct
from typing import Iterable

import numpy as np

from .errors import DimensionMismatchError, MagicError, TruncatedFileError

FEATURE_MAGIC = b"ARTCTXF1"
EMBEDDING_MAGIC = b"ARTCTXE1"
CHECKPOINT_MAGIC = b"ARTCTXM1"
GRAPH_MAGIC_LINE = "#ARTCTXG1"

_MAGIC_LEN = 8


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"file ended while reading {what} ({len(data)}/{n} bytes)")
    return data


def write_vector_table(path: str, magic: bytes, entries: Iterable[tuple[str, np.ndarray]], dim: int) -> None:
    """Write ``(id, vector)`` pairs atomically (temp file + rename)."""
    items = list(entries)
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(magic)
            fh.write(struct.pack("<II", len(items), dim))
            for key, vec in items:
                arr = np.ascontiguousarray(vec, dtype="<f4")
                if arr.ndim != 1 or arr.shape[0] != dim:
                    raise DimensionMismatchError(
                        f"entry {key!r} has shape {arr.shape}, expected ({dim},)"
                    )
                raw = key.encode("utf-8")
                if len(raw) > 0xFFFF:
                    raise ValueError(f"id too long to serialize: {key!r}")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(arr.tobytes())
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def read_vector_table(path: str, expected_magic: bytes) -> tuple[int, dict[str, np.ndarray]]:
    """Read a vector table, returning ``(dim, id -> float32 vector)``."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, _MAGIC_LEN, "magic")
        if magic != expected_magic:
            raise MagicError(
                f"bad magic {magic!r} in {path}, expected {expected_magic!r}"
            )
        count, dim = struct.unpack("<II", _read_exact(fh, 8, "header"))
        entries: dict[str, np.ndarray] = {}
        for i in range(count):
            (id_len,) = struct.unpack("<H", _read_exact(fh, 2, f"id length of entry {i}"))
            key = _read_exact(fh, id_len, f"id of entry {i}").decode("utf-8")
            raw = _read_exact(fh, 4 * dim, f"vector of entry {i}")
            entries[key] = np.frombuffer(raw, dtype="<f4").copy()
        trailing = fh.read(1)
        if trailing:
            raise TruncatedFileError(f"unexpected trailing bytes after {count} entries")
    return dim, entries


def write_checkpoint(path: str, tensors: dict[str, np.ndarray]) -> None:
    """Write named float32 tensors atomically."""
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(tensors)))
            for name, tensor in tensors.items():
                arr = np.ascontiguousarray(tensor, dtype="<f4")
                raw = name.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.tobytes())
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def read_checkpoint(path: str) -> dict[str, np.ndarray]:
    """Read named tensors back as float32 arrays."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, _MAGIC_LEN, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise MagicError(f"bad magic {magic!r} in {path}, expected {CHECKPOINT_MAGIC!r}")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors: dict[str, np.ndarray] = {}
        for i in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, f"name length of tensor {i}"))
            name = _read_exact(fh, name_len, f"name of tensor {i}").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, f"rank of tensor {name}"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, f"dims of tensor {name}"))
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            raw = _read_exact(fh, 4 * n, f"payload of tensor {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        trailing = fh.read(1)
        if trailing:
            raise TruncatedFileError(f"unexpected trailing bytes after {count} tensors")
    return tensors


def sniff_artifact_kind(path: str) -> str | None:
    """Identify an artifact file by its magic bytes.

    Returns one of ``"features"``, ``"embeddings"``, ``"checkpoint"``,
    ``"graph"`` or None for unrecognized content.
    """
    with open(path, "rb") as fh:
        head = fh.read(max(_MAGIC_LEN, len(GRAPH_MAGIC_LINE.encode())))
    if head.startswith(FEATURE_MAGIC):
        return "features"
    if head.startswith(EMBEDDING_MAGIC):
        return "embeddings"
    if head.startswith(CHECKPOINT_MAGIC):
        return "checkpoint"
    if head.startswith(GRAPH_MAGIC_LINE.encode()):
        return "graph"
    return None
