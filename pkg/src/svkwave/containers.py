"""Binary snapshot container: JSON header + little-endian array payloads.

Layout (documented in the README):

    bytes 0..3    magic  b"SVKC"
    byte  4       format version (1)
    bytes 5..8    header length (uint32, little-endian)
    header        UTF-8 JSON: user metadata under "meta", array table under
                  "arrays" as [name, dtype, shape, nbytes] in payload order
    payload       arrays, contiguous C-order, little-endian, in table order

Arrays round-trip bit-exactly on any host endianness.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"SVKC"
VERSION = 1


class ContainerError(RuntimeError):
    pass


def save_arrays(path, meta: dict, arrays: dict) -> None:
    table = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = le.tobytes()
        table.append([name, arr.dtype.str.replace(">", "<"), list(arr.shape), len(blob)])
        blobs.append(blob)
    header = json.dumps({"meta": meta, "arrays": table}).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_arrays(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ContainerError(f"{path}: bad magic")
        ver = fh.read(1)[0]
        if ver != VERSION:
            raise ContainerError(f"{path}: unsupported version {ver}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        arrays = {}
        for name, dtype, shape, nbytes in header["arrays"]:
            buf = fh.read(nbytes)
            if len(buf) != nbytes:
                raise ContainerError(f"{path}: truncated payload for {name}")
            arr = np.frombuffer(buf, dtype=np.dtype(dtype)).reshape(shape)
            arrays[name] = arr.astype(arr.dtype.newbyteorder("="))
    return header["meta"], arrays
