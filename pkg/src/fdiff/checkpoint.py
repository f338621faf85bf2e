"""FDFW parameter checkpoints.

Layout (little-endian)::

    b"FDFW"  u16 version  u32 block count
    per block: u16 name length, UTF-8 name, array block (see ``fdiff.binio``)

Batch-norm running statistics are stored alongside the parameters so a
reloaded model evaluates identically.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from fdiff.binio import expect_end, read_block, read_struct, write_block
from fdiff.errors import CorruptFile
from fdiff.numerics.nn import Module

MAGIC = b"FDFW"
VERSION = 1


def save_state(state: dict[str, np.ndarray], path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HI", VERSION, len(state)))
        for name, arr in state.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            write_block(fh, arr)
    os.replace(tmp, path)


def load_state(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CorruptFile(f"{path}: not an FDFW checkpoint")
        version, count = read_struct(fh, "HI")
        if version != VERSION:
            raise CorruptFile(f"{path}: unsupported checkpoint version {version}")
        state = {}
        for _ in range(count):
            (n,) = read_struct(fh, "H")
            try:
                name = fh.read(n).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorruptFile(f"{path}: bad block name") from exc
            if len(name.encode("utf-8")) != n:
                raise CorruptFile(f"{path}: truncated block name")
            state[name] = read_block(fh)
        expect_end(fh)
    return state


def save_checkpoint(model: Module, path) -> None:
    save_state(model.state_dict(), path)


def load_checkpoint(model: Module, path) -> Module:
    model.load_state_dict(load_state(path))
    return model
