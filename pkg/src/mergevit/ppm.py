"""Binary PPM (P6, maxval 255) reading and writing."""

from __future__ import annotations

import numpy as np

from .errors import PPMError, UnsupportedVariantError
from .weights import atomic_write

DEFAULT_MEAN = (0.5, 0.5, 0.5)
DEFAULT_STD = (0.5, 0.5, 0.5)


def _header_tokens(blob: bytes):
    """Yield (token, end_offset) for the four header fields, skipping comments."""
    pos, n = 0, len(blob)
    for _ in range(4):
        while pos < n:
            c = blob[pos : pos + 1]
            if c == b"#":
                while pos < n and blob[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < n and not blob[pos : pos + 1].isspace() and blob[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PPMError("PPM header ends early")
        yield blob[start:pos], pos


def read_ppm(path) -> np.ndarray:
    """Return the raw pixels as a uint8 [H, W, 3] array."""
    with open(path, "rb") as f:
        blob = f.read()
    fields = []
    end = 0
    for tok, end in _header_tokens(blob):
        fields.append(tok)
        if len(fields) == 1 and tok != b"P6":
            if tok in (b"P1", b"P2", b"P3", b"P4", b"P5", b"P7"):
                raise UnsupportedVariantError(f"{path}: PPM variant {tok.decode()} is not supported, only binary P6")
            raise PPMError(f"{path}: not a PPM file")
    try:
        width, height, maxval = (int(t) for t in fields[1:])
    except ValueError:
        raise PPMError(f"{path}: non-numeric PPM header field") from None
    if width < 1 or height < 1:
        raise PPMError(f"{path}: image size {width}x{height} is empty")
    if maxval != 255:
        raise PPMError(f"{path}: maxval {maxval} is not supported, expected 255")
    # exactly one whitespace byte separates the header from the raster
    if end >= len(blob) or not blob[end : end + 1].isspace():
        raise PPMError(f"{path}: missing raster")
    raster = blob[end + 1 :]
    need = width * height * 3
    if len(raster) < need:
        raise PPMError(f"{path}: raster has {len(raster)} bytes, expected {need}")
    return np.frombuffer(raster, dtype=np.uint8, count=need).reshape(height, width, 3).copy()


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise PPMError(f"expected an [H, W, 3] array, got shape {rgb.shape}")
    h, w, _ = rgb.shape
    atomic_write(path, [f"P6\n{w} {h}\n255\n".encode("ascii"), rgb.tobytes()])


def resize_nearest(rgb: np.ndarray, height: int, width: int) -> np.ndarray:
    h, w = rgb.shape[:2]
    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    return rgb[rows][:, cols]


def load_image_ppm(path, image_size: int | None = 224, mean=DEFAULT_MEAN, std=DEFAULT_STD) -> np.ndarray:
    """Load a P6 image as a normalized float32 [3, H, W] tensor.

    Pixels are scaled to [0, 1], resized by nearest sampling to
    ``image_size`` (if given) and normalized per channel.
    """
    rgb = read_ppm(path)
    if image_size is not None and rgb.shape[:2] != (image_size, image_size):
        rgb = resize_nearest(rgb, image_size, image_size)
    x = rgb.astype(np.float32) / np.float32(255.0)
    x = (x - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return np.ascontiguousarray(x.transpose(2, 0, 1))
