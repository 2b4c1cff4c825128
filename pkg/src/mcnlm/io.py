"""File formats: binary PGM, a lossless raw float64 image format, and the patch database."""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .core import Image, PatchDatabase

RAW_MAGIC = b"MCRAW\x00\x01\x00"
DB_MAGIC = b"MCNLMDB\x00"
DB_VERSION = 1
_DB_HEADER = struct.Struct("<8sIQIIdI")  # magic, version, n, d, Q, h_r, side


class FormatError(ValueError):
    """Malformed file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


# --------------------------------------------------------------------------- PGM


def _pgm_tokens(buf: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header", pos)
        tokens.append((buf[start:pos], start))
    return tokens, pos + 1  # exactly one whitespace byte follows maxval


def read_pgm(path) -> Image:
    buf = Path(path).read_bytes()
    tokens, pos = _pgm_tokens(buf, 4)
    if tokens[0][0] != b"P5":
        raise FormatError("not a binary PGM (P5)", 0)
    try:
        w, h, maxval = (int(t) for t, _ in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"bad PGM header field: {exc}", tokens[1][1]) from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise FormatError("PGM dimensions or maxval out of range", tokens[1][1])
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = w * h * dtype.itemsize
    if len(buf) - pos < need:
        raise FormatError(f"PGM raster truncated: need {need} bytes", pos)
    data = np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return Image(np.clip(data.astype(np.float64) / maxval, 0.0, 1.0))


def write_pgm(path, img: Image):
    """8-bit P5; values are rounded to the nearest level."""
    levels = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    h, w = levels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(levels.tobytes())


# --------------------------------------------------------------------------- raw


def write_raw(path, img: Image):
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC + struct.pack("<II", h, w))
        fh.write(img.data.astype("<f8").tobytes())


def read_raw(path) -> Image:
    buf = Path(path).read_bytes()
    if buf[:8] != RAW_MAGIC:
        raise FormatError("bad raw-image magic", 0)
    if len(buf) < 16:
        raise FormatError("truncated raw-image header", len(buf))
    h, w = struct.unpack_from("<II", buf, 8)
    if len(buf) != 16 + 8 * h * w:
        raise FormatError(f"raw raster should be {8 * h * w} bytes", 16)
    data = np.frombuffer(buf, dtype="<f8", offset=16).reshape(h, w)
    return Image(data.astype(np.float64))


def read_image(path) -> Image:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
    return read_raw(path) if head == RAW_MAGIC else read_pgm(path)


def write_image(path, img: Image):
    (write_raw if Path(path).suffix == ".raw" else write_pgm)(path, img)


# --------------------------------------------------------------------------- database


def database_bytes(db: PatchDatabase) -> bytes:
    head = _DB_HEADER.pack(DB_MAGIC, DB_VERSION, db.n, db.d, db.n_bins, float(db.h_r), db.side)
    body = b"".join([
        head,
        np.ascontiguousarray(db.patches, dtype="<f8").tobytes(),
        np.ascontiguousarray(db.centers, dtype="<f8").tobytes(),
        np.ascontiguousarray(db.projections, dtype="<f8").tobytes(),
        np.ascontiguousarray(db.bin_lower, dtype="<f8").tobytes(),
        np.ascontiguousarray(db.bin_upper, dtype="<f8").tobytes(),
        np.ascontiguousarray(db.bin_of, dtype="<i4").tobytes(),
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def save_database(path, db: PatchDatabase):
    Path(path).write_bytes(database_bytes(db))


def load_database(path) -> PatchDatabase:
    buf = Path(path).read_bytes()
    if len(buf) < _DB_HEADER.size + 4:
        raise FormatError("file shorter than the database header", len(buf))
    magic, version, n, d, Q, h_r, side = _DB_HEADER.unpack_from(buf, 0)
    if magic != DB_MAGIC:
        raise FormatError("bad database magic", 0)
    if version != DB_VERSION:
        raise FormatError(f"unsupported database version {version}", 8)
    sizes = [("patches", n * d, "<f8"), ("centers", n, "<f8"), ("projections", n, "<f8"),
             ("bin_lower", Q, "<f8"), ("bin_upper", Q, "<f8"), ("bin_of", n, "<i4")]
    expected = _DB_HEADER.size + sum(c * np.dtype(t).itemsize for _, c, t in sizes) + 4
    if len(buf) != expected:
        raise FormatError(f"database length {len(buf)} != expected {expected}", min(len(buf), expected))
    stored = struct.unpack_from("<I", buf, len(buf) - 4)[0]
    if zlib.crc32(buf[:-4]) != stored:
        raise FormatError("database checksum mismatch", len(buf) - 4)
    pos = _DB_HEADER.size
    arrays = {}
    for name, count, dt in sizes:
        arrays[name] = np.frombuffer(buf, dtype=dt, count=count, offset=pos).astype(
            np.int64 if dt == "<i4" else np.float64)
        pos += count * np.dtype(dt).itemsize
    if n and (arrays["bin_of"].min() < 0 or arrays["bin_of"].max() >= Q):
        raise FormatError("bin label out of range", pos - 4 * n)
    return PatchDatabase(arrays["patches"].reshape(n, d), arrays["centers"], arrays["projections"],
                         arrays["bin_lower"], arrays["bin_upper"], arrays["bin_of"],
                         h_r=h_r, side=side)
