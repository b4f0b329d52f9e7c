"""MTEN tensor container and the checkpoint file built on top of it.

Binary layout (all little-endian):

    magic   4 bytes  b"MTEN"
    version u16      currently 1
    dtype   u8       0 = float32 (the only defined code)
    rank    u8
    dims    rank * u64
    payload row-major float32

Checkpoints are one data file of concatenated MTEN records plus a plain-text
index file (``<path>.index``) with one ``name<TAB>offset`` line per tensor.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import torch

from .errors import FormatError

MAGIC = b"MTEN"
VERSION = 1
DTYPE_F32 = 0

_HEADER = struct.Struct("<4sHBB")


def tensor_to_bytes(tensor: torch.Tensor) -> bytes:
    data = tensor.detach().to(torch.float32).contiguous()
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, data.dim())
    dims = struct.pack(f"<{data.dim()}Q", *data.shape)
    return header + dims + data.numpy().tobytes()


def tensor_from_bytes(blob: bytes, offset: int = 0) -> tuple[torch.Tensor, int]:
    """Decode one record starting at `offset`; returns (tensor, next offset)."""
    if len(blob) - offset < _HEADER.size:
        raise FormatError("truncated MTEN header", op="tensor_from_bytes")
    magic, version, dtype, rank = _HEADER.unpack_from(blob, offset)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", op="tensor_from_bytes")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", op="tensor_from_bytes")
    if dtype != DTYPE_F32:
        raise FormatError(f"unknown dtype code {dtype}", op="tensor_from_bytes")
    pos = offset + _HEADER.size
    dims = struct.unpack_from(f"<{rank}Q", blob, pos)
    pos += 8 * rank
    numel = 1
    for d in dims:
        numel *= d
    end = pos + 4 * numel
    if end > len(blob):
        raise FormatError("truncated MTEN payload", op="tensor_from_bytes")
    flat = torch.frombuffer(bytearray(blob[pos:end]), dtype=torch.float32)
    return flat.reshape(dims).clone(), end


def write_tensor(path: str | Path, tensor: torch.Tensor) -> None:
    Path(path).write_bytes(tensor_to_bytes(tensor))


def read_tensor(path: str | Path) -> torch.Tensor:
    tensor, _ = tensor_from_bytes(Path(path).read_bytes())
    return tensor


def index_path(path: str | Path) -> Path:
    return Path(str(path) + ".index")


def write_checkpoint(tensors: dict[str, torch.Tensor], path: str | Path) -> None:
    """Write named tensors to `path` and the name->offset index beside it.

    Both files are written via rename so readers never see partial content.
    """
    path = Path(path)
    offset = 0
    chunks: list[bytes] = []
    lines: list[str] = []
    for name, tensor in tensors.items():
        if "\t" in name or "\n" in name:
            raise FormatError(f"invalid tensor name {name!r}", op="write_checkpoint")
        blob = tensor_to_bytes(tensor)
        lines.append(f"{name}\t{offset}\n")
        chunks.append(blob)
        offset += len(blob)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)
    idx = index_path(path)
    tmp_idx = idx.with_name(idx.name + ".tmp")
    tmp_idx.write_text("".join(lines))
    os.replace(tmp_idx, idx)


def read_checkpoint(path: str | Path) -> dict[str, torch.Tensor]:
    blob = Path(path).read_bytes()
    out: dict[str, torch.Tensor] = {}
    for line in index_path(path).read_text().splitlines():
        if not line:
            continue
        try:
            name, offset = line.split("\t")
        except ValueError as exc:
            raise FormatError(f"malformed index line {line!r}", op="read_checkpoint") from exc
        out[name], _ = tensor_from_bytes(blob, int(offset))
    return out
