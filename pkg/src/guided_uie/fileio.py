"""Minimal 8-bit PNG and binary PPM (P6) readers/writers."""

from __future__ import annotations

import os
import struct
import zlib

import numpy as np

from .image_core import as_image, check_display

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    """The file is not a supported PNG/PPM image."""


class TruncatedImageError(ImageFormatError):
    """The header parsed but the pixel payload is short."""


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG or P6 PPM as a float32 display image in [0, 1]."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if data.startswith(PNG_SIGNATURE):
        raw = _decode_png(data)
    elif data.startswith(b"P6"):
        raw = _decode_ppm(data)
    else:
        raise ImageFormatError(f"{path}: not a PNG or binary PPM file")
    return as_image(raw.astype(np.float32) / np.float32(255.0))


def save_image(img: np.ndarray, path) -> None:
    """Write a display image; the extension picks the format (.ppm or PNG otherwise)."""
    img = as_image(img)
    check_display(img)
    q = np.round(img * 255.0).astype(np.uint8)
    path = os.fspath(path)
    if path.lower().endswith((".ppm", ".pnm")):
        if q.shape[2] != 3:
            q = np.repeat(q, 3, axis=2)
        payload = _encode_ppm(q)
    else:
        payload = _encode_png(q)
    with open(path, "wb") as fh:
        fh.write(payload)


def _decode_ppm(data: bytes) -> np.ndarray:
    # header: magic, width, height, maxval, separated by whitespace; '#' comments allowed
    fields = []
    pos = 2
    n = len(data)
    while len(fields) < 3:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError("malformed PPM header")
        fields.append(int(data[start:pos]))
    if pos >= n or not data[pos : pos + 1].isspace():
        raise ImageFormatError("malformed PPM header")
    pos += 1
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ImageFormatError("PPM dimensions must be positive")
    if maxval != 255:
        raise ImageFormatError(f"unsupported PPM maxval {maxval}; only 255 is supported")
    need = width * height * 3
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise TruncatedImageError(f"PPM payload has {len(payload)} bytes, expected {need}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)


def _encode_ppm(q: np.ndarray) -> bytes:
    h, w, _ = q.shape
    return b"P6\n%d %d\n255\n" % (w, h) + q.tobytes()


def _png_chunks(data: bytes):
    pos = len(PNG_SIGNATURE)
    while pos < len(data):
        if pos + 8 > len(data):
            raise TruncatedImageError("PNG chunk header cut short")
        length, ctype = struct.unpack(">I4s", data[pos : pos + 8])
        body = data[pos + 8 : pos + 8 + length]
        crc = data[pos + 8 + length : pos + 12 + length]
        if len(body) < length or len(crc) < 4:
            raise TruncatedImageError(f"PNG chunk {ctype!r} cut short")
        if zlib.crc32(ctype + body) & 0xFFFFFFFF != struct.unpack(">I", crc)[0]:
            raise ImageFormatError(f"PNG chunk {ctype!r} fails its CRC check")
        yield ctype, body
        pos += 12 + length
        if ctype == b"IEND":
            return
    raise TruncatedImageError("PNG ended without IEND")


def _decode_png(data: bytes) -> np.ndarray:
    header = None
    idat = []
    for ctype, body in _png_chunks(data):
        if ctype == b"IHDR":
            if len(body) != 13:
                raise ImageFormatError("bad IHDR length")
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"IDAT":
            idat.append(body)
    if header is None:
        raise ImageFormatError("PNG has no IHDR chunk")
    width, height, depth, color_type, compression, filt, interlace = header
    channels = {0: 1, 2: 3}.get(color_type)
    if depth != 8 or channels is None:
        raise ImageFormatError(
            f"unsupported PNG (bit depth {depth}, color type {color_type}); 8-bit gray/RGB only"
        )
    if compression != 0 or filt != 0 or interlace != 0:
        raise ImageFormatError("interlaced or non-standard PNG is not supported")
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise TruncatedImageError(f"PNG image data does not inflate: {exc}") from exc
    stride = width * channels
    if len(raw) < height * (stride + 1):
        raise TruncatedImageError("PNG image data is shorter than the declared size")
    return _unfilter(raw, width, height, channels)


def _unfilter(raw: bytes, width: int, height: int, bpp: int) -> np.ndarray:
    stride = width * bpp
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int32)
    for y in range(height):
        base = y * (stride + 1)
        ftype = raw[base]
        line = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=base + 1).astype(np.int32)
        if ftype == 0:
            cur = line
        elif ftype == 1:
            cur = np.cumsum(line.reshape(width, bpp), axis=0).reshape(stride) & 0xFF
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype == 3:
            cur = line.copy()
            for x in range(stride):
                left = cur[x - bpp] if x >= bpp else 0
                cur[x] = (cur[x] + ((left + prev[x]) >> 1)) & 0xFF
        elif ftype == 4:
            cur = line.copy()
            for x in range(stride):
                a = cur[x - bpp] if x >= bpp else 0
                b = prev[x]
                c = prev[x - bpp] if x >= bpp else 0
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
                cur[x] = (cur[x] + pred) & 0xFF
        else:
            raise ImageFormatError(f"unknown PNG filter type {ftype}")
        out[y] = cur
        prev = cur
    return out.reshape(height, width, bpp)


def _chunk(ctype: bytes, body: bytes) -> bytes:
    return struct.pack(">I", len(body)) + ctype + body + struct.pack(">I", zlib.crc32(ctype + body) & 0xFFFFFFFF)


def _encode_png(q: np.ndarray) -> bytes:
    h, w, c = q.shape
    color_type = 0 if c == 1 else 2
    rows = np.zeros((h, w * c + 1), dtype=np.uint8)
    rows[:, 1:] = q.reshape(h, w * c)
    ihdr = struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0)
    return (
        PNG_SIGNATURE
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(rows.tobytes(), 6))
        + _chunk(b"IEND", b"")
    )
