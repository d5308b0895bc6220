"""Portable binary checkpoints.

Layout: magic ``SSIA``, u32 format version, u32 entry count, then per entry
u16 name length, UTF-8 name, u8 dtype tag, u8 rank, u32 extents, raw
little-endian values. Entries are named arrays; namespaces used by the
trainer: ``param/`` trainable tensors, ``buffer/`` batchnorm running stats,
``opt/`` momentum buffers, ``meta/`` config text, kind, epoch and seed.
Training checkpoints carry the full optimizer/RNG-deriving state; stripped
checkpoints carry only backbone params, buffers and metadata.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SSIA"
VERSION = 1

_TAG_TO_DTYPE = {0: "<f4", 1: "<f8", 2: "<u8", 3: "|u1"}
_DTYPE_TO_TAG = {np.dtype(np.float32): 0, np.dtype(np.float64): 1,
                 np.dtype(np.uint64): 2, np.dtype(np.uint8): 3}


class CheckpointError(ValueError):
    """Malformed checkpoint; message includes the byte offset."""


def save_entries(path: str, entries: dict) -> None:
    """Write named arrays in insertion order."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_TO_TAG:
            raise ValueError(f"unsupported checkpoint dtype {arr.dtype} for {name!r}")
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<BB", _DTYPE_TO_TAG[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(_TAG_TO_DTYPE[_DTYPE_TO_TAG[arr.dtype]], copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_entries(path: str) -> dict:
    """Read back named arrays; raises CheckpointError with the failing offset."""
    with open(path, "rb") as fh:
        raw = fh.read()

    def need(offset: int, count: int):
        if offset + count > len(raw):
            raise CheckpointError(f"{path}: truncated at offset {offset} "
                                  f"(needed {count} bytes, file has {len(raw)})")

    need(0, 12)
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r} at offset 0")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version} at offset 4")
    entries: dict = {}
    off = 12
    for _ in range(count):
        need(off, 2)
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        need(off, name_len)
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        need(off, 2)
        tag, rank = struct.unpack_from("<BB", raw, off)
        off += 2
        if tag not in _TAG_TO_DTYPE:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} at offset {off - 2}")
        need(off, 4 * rank)
        shape = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        dtype = np.dtype(_TAG_TO_DTYPE[tag])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        need(off, nbytes)
        entries[name] = np.frombuffer(raw, dtype=dtype, count=max(nbytes // dtype.itemsize, 1),
                                      offset=off).reshape(shape).copy()
        off += nbytes
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes at offset {off}")
    return entries


def pack_text(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-8"), dtype=np.uint8).copy()


def unpack_text(arr: np.ndarray) -> str:
    return arr.tobytes().decode("utf-8")
