"""Binary container for models, optimizer state and raw tensor dumps.

Layout: magic ``MUXS`` (4 bytes), little-endian u32 version (=1), u64
manifest length, the manifest (UTF-8 JSON), then the raw array data
concatenated in manifest order.  The manifest's ``tensors`` list gives
each array's name, shape and dtype ("f4" or "f8"); data is always
little-endian.  Round-trips are bit-exact.
"""

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"MUXS"
VERSION = 1

_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


def dtype_code(dtype):
    dtype = np.dtype(dtype)
    for code, dt in _DTYPES.items():
        if dt == dtype.newbyteorder("<"):
            return code
    raise FormatError(f"unsupported dtype {dtype}")


def write_container(path, manifest, arrays):
    """Write ``manifest`` (a JSON-able dict) and named arrays to ``path``.

    ``arrays`` is a list of numpy arrays matching ``manifest['tensors']``
    in order, shape and dtype.
    """
    tensors = manifest.get("tensors", [])
    if len(tensors) != len(arrays):
        raise FormatError(
            f"manifest lists {len(tensors)} tensors but {len(arrays)} arrays given"
        )
    for entry, arr in zip(tensors, arrays):
        if tuple(entry["shape"]) != arr.shape or entry["dtype"] != dtype_code(arr.dtype):
            raise FormatError(
                f"manifest entry {entry} does not match array "
                f"{arr.shape}/{dtype_code(arr.dtype)}"
            )
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(mbytes)))
        f.write(mbytes)
        for arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype=_DTYPES[dtype_code(arr.dtype)]).tobytes())


def read_container(path):
    """Read a container; returns (manifest, arrays).

    Raises :class:`FormatError` with the byte offset on bad magic, wrong
    version, malformed manifest or truncated data.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(data) < 8:
        raise FormatError("truncated header: missing version", offset=4)
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if len(data) < 16:
        raise FormatError("truncated header: missing manifest length", offset=8)
    (mlen,) = struct.unpack_from("<Q", data, 8)
    if len(data) < 16 + mlen:
        raise FormatError("truncated manifest", offset=len(data))
    try:
        manifest = json.loads(data[16 : 16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed manifest: {exc}", offset=16) from None
    offset = 16 + mlen
    arrays = []
    for entry in manifest.get("tensors", []):
        try:
            shape = tuple(int(s) for s in entry["shape"])
            dt = _DTYPES[entry["dtype"]]
        except (KeyError, TypeError, ValueError):
            raise FormatError(f"malformed tensor entry {entry}", offset=16) from None
        nbytes = int(np.prod(shape)) * dt.itemsize
        if len(data) < offset + nbytes:
            raise FormatError(
                f"truncated tensor data for {entry.get('name', '?')}", offset=len(data)
            )
        arr = np.frombuffer(data, dtype=dt, count=int(np.prod(shape)), offset=offset)
        arrays.append(arr.reshape(shape).copy())
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes", offset=offset)
    return manifest, arrays
