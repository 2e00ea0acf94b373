"""Image file I/O: binary PGM (P5) and 24-bit RGB PNG.

Pixel values map linearly to [0, 1]: reading divides by the file's
maxval (PGM) or 255 (PNG); writing scales by 255 and rounds.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError
from .tvdenoise import GrayImage, RgbImage

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
PGM_MAGIC = b"P5"


def read_pgm(path: str | Path) -> GrayImage:
    """Read a binary (P5) 8-bit PGM file."""
    data = Path(path).read_bytes()
    if not data.startswith(PGM_MAGIC):
        raise ValidationError(f"{path}: not a binary PGM (P5) file")

    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments running to end of line.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4 and pos < len(data):
        ch = data[pos : pos + 1]
        if ch == b"#":
            eol = data.find(b"\n", pos)
            pos = len(data) if eol < 0 else eol + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    if len(tokens) < 4:
        raise ValidationError(f"{path}: truncated PGM header")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise ValidationError(f"{path}: malformed PGM header")
    if width < 1 or height < 1 or not 0 < maxval < 256:
        raise ValidationError(f"{path}: unsupported PGM geometry or maxval {maxval}")

    raster = data[pos + 1 : pos + 1 + width * height]
    if len(raster) != width * height:
        raise ValidationError(f"{path}: PGM raster shorter than width*height")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return GrayImage(arr.astype(np.float64) / float(maxval))


def write_pgm(img: GrayImage, path: str | Path) -> None:
    """Write a binary (P5) PGM with maxval 255."""
    arr = np.rint(img.pixels * 255.0).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + arr.tobytes())


def read_png(path: str | Path) -> RgbImage:
    """Read any PNG as 24-bit RGB."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return RgbImage(arr / 255.0)


def write_png(img: RgbImage, path: str | Path) -> None:
    arr = np.rint(img.pixels * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_image(path: str | Path) -> GrayImage | RgbImage:
    """Load by content: PGM files to grayscale, PNG to RGB."""
    with Path(path).open("rb") as fh:
        head = fh.read(8)
    if head.startswith(PGM_MAGIC):
        return read_pgm(path)
    if head.startswith(PNG_MAGIC):
        return read_png(path)
    raise ValidationError(f"{path}: unsupported image format (need PGM P5 or PNG)")


def save_image(img: GrayImage | RgbImage, path: str | Path) -> None:
    if isinstance(img, GrayImage):
        write_pgm(img, path)
    else:
        write_png(img, path)


def sniff_extension(data: bytes) -> str:
    """File extension for raw image bytes returned by a backend."""
    if data.startswith(PNG_MAGIC):
        return ".png"
    if data.startswith(PGM_MAGIC):
        return ".pgm"
    return ".bin"
