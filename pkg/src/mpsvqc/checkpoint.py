"""Self-describing binary checkpoint container.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic b"MVQCKPT\\0"
    8       4     container version (uint32, currently 1)
    12      8     header length H (uint64)
    20      H     header: UTF-8 JSON, keys sorted, no whitespace
    20+H    ...   payload: float64 little-endian arrays, back to back

The header holds ``kind`` ("mps" or "vqc"), ``meta`` (mode, sizes, seed,
config hash, ...) and ``arrays``: a list of ``{"name", "shape", "offset",
"nbytes"}`` entries with offsets relative to the payload start, in write
order. Writes go to a temporary file that is renamed into place.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .errors import FormatError, TruncatedFileError
from .mps import MpsProjector

MAGIC = b"MVQCKPT\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")

__all__ = [
    "save_arrays",
    "load_arrays",
    "save_mps",
    "load_mps",
    "config_hash",
    "file_sha256",
    "mps_checksum",
]


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _encode(kind: str, meta: dict, arrays: list) -> bytes:
    entries, blobs, offset = [], [], 0
    for name, arr in arrays:
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset,
                        "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"kind": kind, "meta": meta, "arrays": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(blobs)


def save_arrays(path, kind: str, meta: dict, arrays: list):
    """Write ``arrays`` (a list of ``(name, ndarray)``) atomically."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_encode(kind, meta, arrays))
    os.replace(tmp, path)


def load_arrays(path):
    """Return ``(kind, meta, {name: ndarray})``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PREFIX.size:
        raise TruncatedFileError(f"{path}: checkpoint prefix truncated")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size + hlen
    if len(raw) < start:
        raise TruncatedFileError(f"{path}: checkpoint header truncated")
    header = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
    arrays = {}
    for e in header["arrays"]:
        lo = start + e["offset"]
        if lo + e["nbytes"] > len(raw):
            raise TruncatedFileError(f"{path}: array {e['name']} truncated")
        arr = np.frombuffer(raw, dtype="<f8", count=e["nbytes"] // 8, offset=lo)
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return header["kind"], header["meta"], arrays


def _mps_arrays(mps: MpsProjector) -> list:
    arrays = [(f"site{n}", a) for n, a in enumerate(mps.sites)]
    if mps.mode == "activated":
        arrays += [(f"bias{n}", b) for n, b in enumerate(mps.biases)]
        arrays.append(("head", mps.head))
    return arrays


def save_mps(path, mps: MpsProjector, extra_meta: dict | None = None, extra_arrays=()):
    meta = {
        "mode": mps.mode,
        "length": mps.length,
        "d": 2,
        "d_fused": mps.d_fused,
        "center": mps.center,
        "site_shapes": [list(a.shape) for a in mps.sites],
        "seed": mps.seed,
    }
    meta.update(extra_meta or {})
    save_arrays(path, "mps", meta, _mps_arrays(mps) + list(extra_arrays))


def load_mps(path, validate: bool = True):
    """Return ``(mps, meta, arrays)``; ``arrays`` holds any extra payloads."""
    kind, meta, arrays = load_arrays(path)
    if kind != "mps":
        raise FormatError(f"{path}: expected an mps checkpoint, found {kind!r}")
    length = meta["length"]
    sites = [arrays.pop(f"site{n}") for n in range(length)]
    biases = head = None
    if meta["mode"] == "activated":
        biases = [arrays.pop(f"bias{n}") for n in range(length)]
        head = arrays.pop("head")
    mps = MpsProjector(sites, meta["center"], meta["d_fused"], meta["mode"], biases, head,
                       meta.get("seed"))
    if validate:
        mps.validate()
    return mps, meta, arrays


def mps_checksum(mps: MpsProjector) -> str:
    h = hashlib.sha256()
    for _, a in _mps_arrays(mps):
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()
