"""Binary parameter blobs.

Layout: 8-byte magic ``SNAPENSP``, little-endian uint32 format version,
uint32 header length, a UTF-8 JSON header listing every array's name,
dtype and shape (plus free-form metadata), then the raw little-endian
array bytes in header order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..exceptions import SnapshotFormatError

MAGIC = b"SNAPENSP"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


def save_params(path, params: dict, meta: dict | None = None) -> None:
    arrays = []
    blobs = []
    for name in params:
        a = np.ascontiguousarray(params[name], dtype="<f8")
        arrays.append({"name": name, "dtype": "<f8", "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = json.dumps({"arrays": arrays, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_params(path) -> tuple[dict, dict]:
    """Returns ``(params, meta)``; arrays come back bit-identical."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _PREFIX.size:
        raise SnapshotFormatError(f"{path}: truncated parameter file")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotFormatError(f"{path}: not a parameter blob")
    if version != VERSION:
        raise SnapshotFormatError(f"{path}: unsupported version {version}")
    try:
        header = json.loads(data[_PREFIX.size:_PREFIX.size + hlen])
    except ValueError as exc:
        raise SnapshotFormatError(f"{path}: corrupt header") from exc
    offset = _PREFIX.size + hlen
    params = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        shape = tuple(spec["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(data):
            raise SnapshotFormatError(f"{path}: array {spec['name']!r} truncated")
        params[spec["name"]] = np.frombuffer(data, dtype, count=nbytes // dtype.itemsize,
                                             offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(data):
        raise SnapshotFormatError(f"{path}: {len(data) - offset} trailing bytes")
    return params, header["meta"]
