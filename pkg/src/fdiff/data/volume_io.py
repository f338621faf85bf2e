"""FDFV volume files.

Layout (little-endian)::

    b"FDFV"  u16 version = 1
    image block    (u8 dtype code, u8 ndim, ndim x u32 dims, payload)
    label block    (same)
    u64 seed  u16 id length  UTF-8 id

Dtype codes: 0 = float32, 1 = float64, 2 = uint8.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

from fdiff.binio import expect_end, read_block, read_struct, write_block
from fdiff.data.phantom import VolumeRecord
from fdiff.errors import CorruptFile, ShapeMismatch

MAGIC = b"FDFV"
VERSION = 1


def write_volume(record: VolumeRecord, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw_id = record.id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<H", VERSION))
        write_block(fh, record.image)
        write_block(fh, record.label)
        fh.write(struct.pack("<QH", record.seed, len(raw_id)) + raw_id)


def read_volume(path: str | os.PathLike) -> VolumeRecord:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CorruptFile(f"{path}: bad magic, not an FDFV volume")
        (version,) = read_struct(fh, "H")
        if version != VERSION:
            raise CorruptFile(f"{path}: unsupported FDFV version {version}")
        image = read_block(fh)
        label = read_block(fh)
        seed, n = read_struct(fh, "QH")
        raw_id = fh.read(n)
        if len(raw_id) != n:
            raise CorruptFile(f"{path}: truncated id")
        expect_end(fh)
    try:
        return VolumeRecord(image, label, id=raw_id.decode("utf-8"), seed=seed)
    except (ShapeMismatch, UnicodeDecodeError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
