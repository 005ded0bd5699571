"""Tiny PGM/PPM readers and writers (binary P5/P6, 8- or 16-bit)."""

from __future__ import annotations

import numpy as np

__all__ = ["write_pgm16", "read_pgm", "write_ppm", "read_ppm"]


class ImageFormatError(ValueError):
    pass


def _read_header(blob: bytes, magic: bytes):
    if not blob.startswith(magic):
        raise ImageFormatError(f"expected {magic!r} header, got {blob[:2]!r}")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace before raster
    width, height, maxval = fields
    return width, height, maxval, pos


def write_pgm16(image: np.ndarray, path) -> None:
    """Write a [0,1] float image as 16-bit binary PGM scaled to [0, 65535]."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if arr.ndim != 2:
        raise ImageFormatError("PGM image must be 2-D")
    raster = np.round(arr * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n65535\n".encode("ascii"))
        fh.write(raster.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read binary PGM into a float image in [0,1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    width, height, maxval, pos = _read_header(blob, b"P5")
    dtype = ">u2" if maxval > 255 else np.uint8
    raster = np.frombuffer(blob, dtype=dtype, count=width * height, offset=pos)
    if raster.size != width * height:
        raise ImageFormatError("truncated PGM raster")
    return raster.reshape(height, width).astype(np.float64) / maxval


def write_ppm(image: np.ndarray, path) -> None:
    """Write an (H, W, 3) uint8 image as binary P6 PPM."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageFormatError("PPM image must be (H, W, 3)")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(arr.astype(np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    width, height, maxval, pos = _read_header(blob, b"P6")
    raster = np.frombuffer(blob, dtype=np.uint8, count=width * height * 3, offset=pos)
    if raster.size != width * height * 3:
        raise ImageFormatError("truncated PPM raster")
    return raster.reshape(height, width, 3)
