"""Image files: binary PGM (P5, 8/16-bit) and a comma-separated float grid.

The format is picked from the file suffix: ``.pgm`` for PGM, anything else
is treated as CSV. CSV values are written with ``repr`` precision, so a
float image survives a write/read cycle unchanged.
"""

from __future__ import annotations

import os
import re

import numpy as np

__all__ = ["ImageFormatError", "read_image", "write_image", "read_pgm", "write_pgm", "read_csv", "write_csv"]

MAX_DIM = 1 << 16


class ImageFormatError(ValueError):
    """Raised for malformed or unsupported image files."""


def _is_pgm(path) -> bool:
    return os.fspath(path).lower().endswith(".pgm")


def read_image(path) -> np.ndarray:
    """Read an image as a ``float64`` array of shape ``(height, width)``."""
    if _is_pgm(path):
        return read_pgm(path).astype(np.float64)
    return read_csv(path)


def write_image(path, image, maxval=None):
    if _is_pgm(path):
        write_pgm(path, image, maxval=maxval)
    else:
        write_csv(path, image)


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ImageFormatError(f"{path}: truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = fields
    if magic != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (magic {magic!r})")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: non-integer PGM header field") from exc
    if not (0 < w <= MAX_DIM and 0 < h <= MAX_DIM):
        raise ImageFormatError(f"{path}: dimensions {w}x{h} out of range")
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: maxval {maxval} out of range")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = w * h * dtype.itemsize
    raw = data[pos : pos + nbytes]
    if len(raw) != nbytes:
        raise ImageFormatError(f"{path}: expected {nbytes} pixel bytes, found {len(raw)}")
    img = np.frombuffer(raw, dtype=dtype).reshape(h, w)
    if int(img.max(initial=0)) > maxval:
        raise ImageFormatError(f"{path}: pixel value exceeds maxval {maxval}")
    return img.astype(np.uint16 if maxval > 255 else np.uint8)


def write_pgm(path, image, maxval=None):
    """Write an integer-valued image as binary PGM.

    Values are rounded and must lie in ``[0, 65535]``; the bit depth is 8
    when ``maxval`` (default: the image maximum, at least 1) fits a byte.
    """
    img = np.asarray(image)
    if img.ndim != 2:
        raise ImageFormatError("PGM images must be 2-D")
    vals = np.rint(np.asarray(img, dtype=np.float64))
    if vals.size and (vals.min() < 0 or vals.max() > 65535):
        raise ImageFormatError("PGM pixel values must lie in [0, 65535]")
    if maxval is None:
        maxval = max(1, int(vals.max(initial=0)))
    if vals.size and vals.max() > maxval:
        raise ImageFormatError(f"pixel value exceeds maxval {maxval}")
    h, w = vals.shape
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(vals.astype(dtype).tobytes())


def read_csv(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError as exc:
                raise ImageFormatError(f"{path}:{lineno}: bad number") from exc
    if not rows:
        raise ImageFormatError(f"{path}: empty image")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ImageFormatError(f"{path}: ragged rows")
    if width > MAX_DIM or len(rows) > MAX_DIM:
        raise ImageFormatError(f"{path}: dimensions out of range")
    img = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(img)):
        raise ImageFormatError(f"{path}: non-finite pixel values")
    return img


def write_csv(path, image):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ImageFormatError("images must be 2-D")
    with open(path, "w", encoding="ascii") as fh:
        for row in img:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")
