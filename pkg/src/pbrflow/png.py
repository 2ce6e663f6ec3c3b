"""Minimal PNG codec for grayscale / RGB images at 8 or 16 bits per channel.

The encoder emits the IDAT zlib stream as uncompressed (stored) deflate
blocks built by hand, so the bytes of a written file depend only on the
pixel data. Compressed zlib output can differ between zlib builds, which
would break byte-for-byte golden comparisons across platforms; stored
blocks cannot. The decoder accepts any valid zlib stream and scanline
filters 0-4, so files from other writers load fine.

Supported layout: color type 0 (gray) or 2 (RGB), no palette, no alpha,
no interlacing.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_STORED_BLOCK_MAX = 65535


class PngError(ValueError):
    pass


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def _stored_zlib_stream(raw: bytes) -> bytes:
    """Wrap raw bytes in a zlib stream of stored (uncompressed) deflate blocks."""
    out = [b"\x78\x01"]  # CMF/FLG, 32K window, check bits valid, no dict
    n = len(raw)
    pos = 0
    while True:
        size = min(_STORED_BLOCK_MAX, n - pos)
        final = 1 if pos + size >= n else 0
        out.append(struct.pack("<BHH", final, size, size ^ 0xFFFF))
        out.append(raw[pos : pos + size])
        pos += size
        if final:
            break
    out.append(struct.pack(">I", zlib.adler32(raw) & 0xFFFFFFFF))
    return b"".join(out)


def encode(image: np.ndarray) -> bytes:
    """Encode an integer image of shape (H, W), (H, W, 1) or (H, W, 3).

    dtype uint8 gives an 8-bit file, uint16 a 16-bit file.
    """
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise PngError(f"expected (H, W), (H, W, 1) or (H, W, 3), got {arr.shape}")
    if arr.dtype == np.uint8:
        bit_depth = 8
    elif arr.dtype == np.uint16:
        bit_depth = 16
    else:
        raise PngError(f"expected uint8 or uint16 pixels, got {arr.dtype}")
    height, width, channels = arr.shape
    if height < 1 or width < 1:
        raise PngError(f"empty image {arr.shape}")
    color_type = 0 if channels == 1 else 2

    big = arr.astype(">u2") if bit_depth == 16 else arr
    rows = big.tobytes()
    stride = width * channels * (bit_depth // 8)
    scanlines = bytearray()
    for y in range(height):
        scanlines.append(0)  # filter type 0 per row
        scanlines += rows[y * stride : (y + 1) * stride]

    ihdr = struct.pack(">IIBBBBB", width, height, bit_depth, color_type, 0, 0, 0)
    return (
        _SIGNATURE
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", _stored_zlib_stream(bytes(scanlines)))
        + _chunk(b"IEND", b"")
    )


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(data: bytes, height: int, stride: int, bpp: int) -> bytearray:
    out = bytearray(height * stride)
    pos = 0
    for y in range(height):
        ftype = data[pos]
        pos += 1
        row = bytearray(data[pos : pos + stride])
        pos += stride
        prev_start = (y - 1) * stride
        if ftype == 0:
            pass
        elif ftype == 1:  # Sub
            for i in range(bpp, stride):
                row[i] = (row[i] + row[i - bpp]) & 0xFF
        elif ftype == 2:  # Up
            for i in range(stride):
                up = out[prev_start + i] if y > 0 else 0
                row[i] = (row[i] + up) & 0xFF
        elif ftype == 3:  # Average
            for i in range(stride):
                left = row[i - bpp] if i >= bpp else 0
                up = out[prev_start + i] if y > 0 else 0
                row[i] = (row[i] + (left + up) // 2) & 0xFF
        elif ftype == 4:  # Paeth
            for i in range(stride):
                left = row[i - bpp] if i >= bpp else 0
                up = out[prev_start + i] if y > 0 else 0
                ul = out[prev_start + i - bpp] if (y > 0 and i >= bpp) else 0
                row[i] = (row[i] + _paeth(left, up, ul)) & 0xFF
        else:
            raise PngError(f"unsupported scanline filter {ftype}")
        out[y * stride : (y + 1) * stride] = row
    return out


def decode(data: bytes) -> np.ndarray:
    """Decode a PNG into a (H, W, C) array of uint8 or uint16."""
    if data[:8] != _SIGNATURE:
        raise PngError("not a PNG file")
    pos = 8
    ihdr = None
    idat = bytearray()
    while pos < len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        tag = data[pos + 4 : pos + 8]
        payload = data[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", payload)
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if ihdr is None:
        raise PngError("missing IHDR chunk")
    width, height, bit_depth, color_type, comp, filt, interlace = ihdr
    if comp != 0 or filt != 0:
        raise PngError("unsupported compression/filter method")
    if interlace != 0:
        raise PngError("interlaced PNG not supported")
    if color_type not in (0, 2):
        raise PngError(f"unsupported color type {color_type} (gray or RGB only)")
    if bit_depth not in (8, 16):
        raise PngError(f"unsupported bit depth {bit_depth}")
    channels = 1 if color_type == 0 else 3
    stride = width * channels * (bit_depth // 8)
    bpp = channels * (bit_depth // 8)
    raw = zlib.decompress(bytes(idat))
    if len(raw) != height * (stride + 1):
        raise PngError("IDAT size does not match image dimensions")
    flat = _unfilter(raw, height, stride, bpp)
    if bit_depth == 16:
        arr = np.frombuffer(bytes(flat), dtype=">u2").astype(np.uint16)
    else:
        arr = np.frombuffer(bytes(flat), dtype=np.uint8)
    return arr.reshape(height, width, channels)


def write(path, image: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(image))


def read(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())
