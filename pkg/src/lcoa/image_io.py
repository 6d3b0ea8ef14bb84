"""Binary PPM (P6) image reading and writing.

Images are (h, w, 3) uint8 arrays, row-major RGB.  Only the binary P6
variant with maxval 255 is supported; other NetPBM flavors and 16-bit
depths are rejected with distinct error types.  Write-then-read round
trips are bit-exact.
"""

from __future__ import annotations

import numpy as np


class PpmError(ValueError):
    """Base error for PPM parsing and writing."""


class PpmMagicError(PpmError):
    """The file is not a binary P6 PPM."""


class PpmDepthError(PpmError):
    """The file's maxval is not 255 (only 8-bit channels are supported)."""


class PpmTruncatedError(PpmError):
    """The file ends before the declared pixel data is complete."""


class _HeaderCursor:
    """Tokenizer for the PPM header: whitespace-separated fields with
    ``#`` comments running to end of line."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def token(self, what: str) -> bytes:
        data, n = self.data, len(self.data)
        pos = self.pos
        while True:
            while pos < n and data[pos : pos + 1].isspace():
                pos += 1
            if pos < n and data[pos : pos + 1] == b"#":
                while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
                continue
            break
        if pos >= n:
            raise PpmTruncatedError(f"file ended before the {what} field")
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        self.pos = pos
        return data[start:pos]

    def int_token(self, what: str) -> int:
        tok = self.token(what)
        try:
            value = int(tok)
        except ValueError as exc:
            raise PpmError(f"{what} field is not an integer: {tok!r}") from exc
        if value < 1:
            raise PpmError(f"{what} must be positive, got {value}")
        return value


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 PPM with maxval 255 into an (h, w, 3) uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _HeaderCursor(data)
    magic = cur.token("magic")
    if magic != b"P6":
        raise PpmMagicError(f"unsupported magic {magic!r}; only binary P6 is supported")
    width = cur.int_token("width")
    height = cur.int_token("height")
    maxval = cur.int_token("maxval")
    if maxval != 255:
        raise PpmDepthError(f"unsupported maxval {maxval}; only 8-bit (255) is supported")
    # Exactly one whitespace byte separates the header from the raster.
    start = cur.pos + 1
    if start > len(data):
        raise PpmTruncatedError("file ended before the pixel data")
    needed = 3 * width * height
    body = data[start : start + needed]
    if len(body) < needed:
        raise PpmTruncatedError(
            f"pixel data is short: expected {needed} bytes, found {len(body)}"
        )
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3).copy()


def write_ppm(image, path) -> None:
    """Write an (h, w, 3) uint8 array as a binary P6 PPM with maxval 255."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise PpmError(f"image must have shape (h, w, 3), got {image.shape}")
    if image.dtype != np.uint8:
        raise PpmError(f"image must be uint8, got dtype {image.dtype}")
    if min(image.shape[:2]) < 1:
        raise PpmError(f"image dimensions must be positive, got {image.shape}")
    height, width = image.shape[:2]
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(image).tobytes())
