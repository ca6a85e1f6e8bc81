"""Binary netpbm image I/O: PGM (P5) and PPM (P6), 8-bit, maxval 255.

Reads map sample values to [0, 1] by dividing by 255; writes map back
with round-half-up.  Headers written by this module are canonical
("P5\\n<w> <h>\\n255\\n"), so write(read(f)) is byte-identical for files
produced here.  Malformed files raise :class:`FormatError` with the byte
offset of the problem.
"""

import numpy as np

from .errors import DimensionError, FormatError


class _Scanner:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def _skip_space(self):
        while self.pos < len(self.data):
            b = self.data[self.pos]
            if b in b" \t\r\n":
                self.pos += 1
            elif b == ord("#"):
                while self.pos < len(self.data) and self.data[self.pos] != ord("\n"):
                    self.pos += 1
            else:
                return

    def token(self, what):
        self._skip_space()
        start = self.pos
        while self.pos < len(self.data) and self.data[self.pos] not in b" \t\r\n#":
            self.pos += 1
        if self.pos == start:
            raise FormatError(f"missing {what}", offset=start)
        return self.data[start : self.pos], start

    def int_token(self, what):
        tok, start = self.token(what)
        try:
            return int(tok)
        except ValueError:
            raise FormatError(f"bad {what} {tok!r}", offset=start) from None


def read_image(path):
    """Read a P5/P6 file into a (channels, h, w) float32 array in [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 2 or data[:2] not in (b"P5", b"P6"):
        raise FormatError(f"bad magic {data[:2]!r}, expected P5 or P6", offset=0)
    channels = 1 if data[:2] == b"P5" else 3
    scan = _Scanner(data)
    scan.pos = 2
    width = scan.int_token("width")
    height = scan.int_token("height")
    maxval_pos = scan.pos
    maxval = scan.int_token("maxval")
    if width < 1 or height < 1:
        raise FormatError(f"bad dimensions {width}x{height}", offset=2)
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}, need 255", offset=maxval_pos)
    if scan.pos >= len(data) or data[scan.pos] not in b" \t\r\n":
        raise FormatError("missing whitespace before raster", offset=scan.pos)
    raster_start = scan.pos + 1
    nbytes = width * height * channels
    if len(data) - raster_start < nbytes:
        raise FormatError(
            f"truncated raster: need {nbytes} bytes, have {len(data) - raster_start}",
            offset=len(data),
        )
    raw = np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=raster_start)
    if channels == 1:
        img = raw.reshape(1, height, width)
    else:
        img = raw.reshape(height, width, 3).transpose(2, 0, 1)
    return (img.astype(np.float32) / np.float32(255.0)).copy()


def to_u8(img):
    """Map [0, 1] floats to uint8 by round-half-up on 255x."""
    arr = np.asarray(img, dtype=np.float64)
    return np.clip(np.floor(arr * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_image(path, img):
    """Write a (1|3, h, w) float image in [0, 1] as P5/P6."""
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise DimensionError(f"expected (1|3, h, w), got {arr.shape}")
    write_image_u8(path, to_u8(arr))


def write_image_u8(path, img):
    """Write a uint8 (h, w), (1, h, w) or (3, h, w) image as P5/P6."""
    arr = np.asarray(img, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise DimensionError(f"expected (1|3, h, w), got {arr.shape}")
    c, h, w = arr.shape
    magic = b"P5" if c == 1 else b"P6"
    raster = arr[0] if c == 1 else arr.transpose(1, 2, 0)
    with open(path, "wb") as f:
        f.write(magic + b"\n" + f"{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(raster).tobytes())
