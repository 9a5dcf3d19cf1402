"""Binary file formats for cubes and model checkpoints.

Cube files (magic ``HSIF1``) hold one cube as little-endian float32 with an
optional per-band wavelength table. Checkpoint files (magic ``T2CK1``) hold
named float32 tensors followed by a CRC32 of everything before it. Both
readers reject unknown magics, truncated payloads, and trailing bytes, and
the checkpoint reader additionally rejects checksum mismatches, so a
single flipped bit anywhere in a checkpoint fails loudly instead of
producing a silently corrupt model.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .cube import HsiCube
from .errors import DimensionError, FormatError

CUBE_MAGIC = b"HSIF1"
CKPT_MAGIC = b"T2CK1"
_FLAG_WAVELENGTHS = 0x01

_U32 = struct.Struct("<I")
_U16 = struct.Struct("<H")


def write_cube(path, cube: HsiCube, wavelengths=None) -> None:
    """Serialize a cube, optionally with per-band wavelength centers in nm."""
    h, w, c = cube.height, cube.width, cube.bands
    flags = 0
    wl_bytes = b""
    if wavelengths is not None:
        wl = np.asarray(wavelengths, dtype="<f4")
        if wl.shape != (c,):
            raise DimensionError(
                f"wavelength array has shape {wl.shape}, expected ({c},)"
            )
        flags |= _FLAG_WAVELENGTHS
        wl_bytes = wl.tobytes()
    payload = np.ascontiguousarray(cube.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(_U32.pack(h))
        fh.write(_U32.pack(w))
        fh.write(_U32.pack(c))
        fh.write(bytes([flags]))
        fh.write(wl_bytes)
        fh.write(payload)


def read_cube(path):
    """Read a cube file; returns ``(cube, wavelengths_or_None)``.

    Raises :class:`FormatError` on a bad magic, truncation, trailing
    bytes, or undefined flag bits.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != CUBE_MAGIC:
        raise FormatError(f"not a cube file: bad magic {blob[:5]!r}")
    if len(blob) < 5 + 12 + 1:
        raise FormatError("cube file truncated in header")
    h = _U32.unpack_from(blob, 5)[0]
    w = _U32.unpack_from(blob, 9)[0]
    c = _U32.unpack_from(blob, 13)[0]
    flags = blob[17]
    if flags & ~_FLAG_WAVELENGTHS:
        raise FormatError(f"unknown flag bits 0x{flags:02x} in cube file")
    if h < 1 or w < 1 or c < 1:
        raise FormatError(f"cube file declares empty dimensions {h}x{w}x{c}")
    offset = 18
    wavelengths = None
    if flags & _FLAG_WAVELENGTHS:
        need = offset + 4 * c
        if len(blob) < need:
            raise FormatError("cube file truncated in wavelength table")
        wavelengths = np.frombuffer(blob, dtype="<f4", count=c, offset=offset).copy()
        offset = need
    need = offset + 4 * h * w * c
    if len(blob) < need:
        raise FormatError(
            f"cube file truncated: payload needs {need - offset} bytes, "
            f"found {len(blob) - offset}"
        )
    if len(blob) > need:
        raise FormatError(f"cube file has {len(blob) - need} trailing bytes")
    flat = np.frombuffer(blob, dtype="<f4", count=h * w * c, offset=offset)
    data = flat.reshape(c, h, w).copy()
    return HsiCube(data=data), wavelengths


def write_checkpoint(path, entries: dict) -> None:
    """Serialize named float32 tensors in insertion order with a CRC32."""
    parts = [CKPT_MAGIC, _U32.pack(len(entries))]
    for name, tensor in entries.items():
        name_bytes = name.encode("utf-8")
        if len(name_bytes) > 0xFFFF:
            raise FormatError(f"entry name too long: {len(name_bytes)} bytes")
        arr = np.ascontiguousarray(tensor, dtype="<f4")
        if arr.ndim < 1 or arr.ndim > 255:
            raise DimensionError(f"entry {name!r} has unsupported rank {arr.ndim}")
        parts.append(_U16.pack(len(name_bytes)))
        parts.append(name_bytes)
        parts.append(bytes([arr.ndim]))
        for dim in arr.shape:
            parts.append(_U32.pack(dim))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(_U32.pack(zlib.crc32(body) & 0xFFFFFFFF))


def read_checkpoint(path) -> dict:
    """Read a checkpoint into an ordered ``{name: float32 array}`` dict.

    Verifies the trailing CRC32 before parsing, rejects duplicate names,
    truncation, and trailing bytes.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != CKPT_MAGIC:
        raise FormatError(f"not a checkpoint file: bad magic {blob[:5]!r}")
    if len(blob) < 5 + 4 + 4:
        raise FormatError("checkpoint truncated in header")
    body, stored = blob[:-4], _U32.unpack(blob[-4:])[0]
    actual = zlib.crc32(body) & 0xFFFFFFFF
    if stored != actual:
        raise FormatError(
            f"checkpoint checksum mismatch: stored 0x{stored:08x}, "
            f"computed 0x{actual:08x}"
        )
    n_entries = _U32.unpack_from(body, 5)[0]
    offset = 9
    entries: dict = {}

    def _need(count, what):
        if offset + count > len(body):
            raise FormatError(f"checkpoint truncated in {what}")

    for _ in range(n_entries):
        _need(2, "entry name length")
        name_len = _U16.unpack_from(body, offset)[0]
        offset += 2
        _need(name_len, "entry name")
        try:
            name = body[offset : offset + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"checkpoint entry name is not valid UTF-8: {exc}") from exc
        offset += name_len
        if name in entries:
            raise FormatError(f"duplicate checkpoint entry {name!r}")
        _need(1, "entry rank")
        rank = body[offset]
        offset += 1
        if rank < 1:
            raise FormatError(f"entry {name!r} has rank 0")
        _need(4 * rank, "entry dims")
        dims = struct.unpack_from(f"<{rank}I", body, offset)
        offset += 4 * rank
        count = 1
        for dim in dims:
            if dim < 1:
                raise FormatError(f"entry {name!r} has zero dimension")
            count *= dim
        _need(4 * count, f"entry {name!r} data")
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        entries[name] = arr.reshape(dims).copy()
    if offset != len(body):
        raise FormatError(f"checkpoint has {len(body) - offset} trailing bytes")
    return entries
