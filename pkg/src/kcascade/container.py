"""Versioned binary container used for networks, stages and cascades.

Layout (all integers little-endian)::

    8 bytes   magic b"KCASCADE"
    u16       format version
    u32       header length H
    H bytes   UTF-8 JSON header (sorted keys): {"kind", "meta", "arrays"}
    ...       raw array payloads, concatenated in header order

Every array is stored with an explicit little-endian dtype, so a
write/read round trip is bit-exact. The JSON header is serialised with
sorted keys and no whitespace so equal content gives equal bytes.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError, VersionMismatchError

MAGIC = b"KCASCADE"
VERSION = 1
_PREFIX = struct.Struct("<8sHI")
_DTYPES = {"f8": "<f8", "i8": "<i8", "i1": "<i1", "f4": "<f4"}


def _dtype_code(arr):
    for code, dt in _DTYPES.items():
        if arr.dtype == np.dtype(dt):
            return code
    raise TypeError(f"unsupported dtype {arr.dtype}")


def dumps(kind, meta, arrays):
    """Serialise ``arrays`` (name -> ndarray) plus JSON-able ``meta``."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8") if arr.dtype != np.dtype("<f4") else arr
        elif arr.dtype.kind in "iub":
            arr = arr.astype("<i8") if arr.dtype.itemsize != 1 else arr.astype("<i1")
        code = _dtype_code(arr)
        raw = np.ascontiguousarray(arr).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": kind, "meta": meta, "arrays": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(blobs)


def loads(data, expect_kind=None):
    """Inverse of :func:`dumps`; returns ``(kind, meta, arrays)``."""
    if len(data) < _PREFIX.size:
        raise FormatError("truncated container prefix", len(data))
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise VersionMismatchError(
            f"container version {version}, this build reads version {VERSION}", 8)
    start = _PREFIX.size
    if len(data) < start + hlen:
        raise FormatError("truncated header", len(data))
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}", start) from exc
    kind = header.get("kind")
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(f"expected a {expect_kind!r} container, found {kind!r}", start)
    base = start + hlen
    arrays = {}
    for entry in header["arrays"]:
        lo = base + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(data):
            raise FormatError(f"truncated payload for array {entry['name']!r}", len(data))
        dt = np.dtype(_DTYPES[entry["dtype"]])
        arr = np.frombuffer(data[lo:hi], dtype=dt).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(dt.newbyteorder("="), copy=True)
    return kind, header["meta"], arrays


def save(path, kind, meta, arrays):
    with open(path, "wb") as fh:
        fh.write(dumps(kind, meta, arrays))


def load(path, expect_kind=None):
    with open(path, "rb") as fh:
        return loads(fh.read(), expect_kind)
