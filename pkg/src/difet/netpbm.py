"""Binary Netpbm (P5 graymap, P6 pixmap) codec, 8-bit only, plus optional PNG."""

from __future__ import annotations

import io
from enum import IntEnum

import numpy as np

from difet.errors import ImageDecodeError
from difet.raster import PixelImage

_WHITESPACE = b" \t\n\r\v\f"


class ImageFormat(IntEnum):
    PGM = 1
    PPM = 2
    PNG = 3


PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def sniff_format(data: bytes) -> ImageFormat:
    if data[:2] == b"P5":
        return ImageFormat.PGM
    if data[:2] == b"P6":
        return ImageFormat.PPM
    if data[:8] == PNG_SIGNATURE:
        return ImageFormat.PNG
    raise ImageDecodeError("unrecognized image signature")


def _read_header(data: bytes) -> tuple[bytes, int, int, int, int]:
    """Return (magic, width, height, maxval, offset of the first sample byte)."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n:
            c = data[pos : pos + 1]
            if c == b"#":
                while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c in _WHITESPACE:
                pos += 1
            else:
                break
        start = pos
        while pos < n and data[pos : pos + 1] not in _WHITESPACE and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageDecodeError("truncated Netpbm header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or data[pos : pos + 1] not in _WHITESPACE:
        raise ImageDecodeError("missing whitespace after maxval")
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageDecodeError(f"non-numeric Netpbm header field: {exc}") from None
    return magic, width, height, maxval, pos + 1


def decode_netpbm(data: bytes) -> PixelImage:
    magic, width, height, maxval, offset = _read_header(data)
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise ImageDecodeError(f"unsupported Netpbm magic {magic!r}")
    if width < 1 or height < 1:
        raise ImageDecodeError(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise ImageDecodeError(f"only maxval 255 is supported, got {maxval}")
    size = width * height * channels
    raster = data[offset : offset + size]
    if len(raster) != size:
        raise ImageDecodeError(f"raster truncated: {len(raster)} of {size} bytes")
    return PixelImage.from_buffer(width, height, channels, raster)


def encode_netpbm(img: PixelImage) -> bytes:
    """P5 for 1-channel images, P6 for RGB; alpha is dropped."""
    if img.channels == 1:
        magic, px = b"P5", img.pixels
    else:
        magic, px = b"P6", img.pixels[:, :, :3]
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    return header + np.ascontiguousarray(px).tobytes()


def decode_png(data: bytes) -> PixelImage:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise ImageDecodeError("PNG support requires Pillow") from exc
    try:
        with Image.open(io.BytesIO(data)) as im:
            mode = {"L": "L", "RGB": "RGB", "RGBA": "RGBA", "LA": "RGBA", "P": "RGBA"}.get(im.mode, "RGB")
            arr = np.asarray(im.convert(mode), dtype=np.uint8)
    except Exception as exc:
        raise ImageDecodeError(f"PNG decode failed: {exc}") from None
    return PixelImage(arr)


def decode_image(data: bytes, fmt: ImageFormat | int | None = None) -> PixelImage:
    """Decode an encoded image; ``fmt`` is sniffed from the signature when omitted."""
    fmt = sniff_format(data) if fmt is None else ImageFormat(fmt)
    if fmt == ImageFormat.PNG:
        return decode_png(data)
    img = decode_netpbm(data)
    expected = 1 if fmt == ImageFormat.PGM else 3
    if img.channels != expected:
        raise ImageDecodeError(f"payload is not a {fmt.name} image")
    return img


def read_image(path) -> PixelImage:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def write_netpbm(path, img: PixelImage) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_netpbm(img))
