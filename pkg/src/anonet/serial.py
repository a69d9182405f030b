"""Portable binary tensor container used for model weights and filter banks.

Layout (little endian):

    magic   8 bytes  b"ANONET\\x00\\x01"
    u32     header length in bytes
    header  UTF-8 JSON: {"meta": {...}, "arrays": [{"name", "shape", "dtype"}]}
    payload raw array bytes, in header order
    footer  32-byte SHA-256 over everything before it

Arrays are written contiguously in their declared dtype (float32 for all
current producers).  Loading verifies the checksum and shapes.
"""

import hashlib
import json

import numpy as np

MAGIC = b"ANONET\x00\x01"


class BlobError(ValueError):
    """Raised on a malformed, truncated or tampered container."""


def write_blob(path, meta, arrays):
    """Write named arrays with a JSON meta block.  ``arrays``: list of (name, ndarray)."""
    entries = []
    payload = bytearray()
    for name, arr in arrays:
        shape = np.shape(arr)
        arr = np.ascontiguousarray(arr).reshape(shape)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str})
        payload += arr.tobytes()
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode()
    body = MAGIC + len(header).to_bytes(4, "little") + header + bytes(payload)
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body + digest)


def read_blob(path):
    """Read a container back as (meta, {name: array}).  Verifies the checksum."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 4 + 32 or not raw.startswith(MAGIC):
        raise BlobError(f"{path}: not an anonet container")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise BlobError(f"{path}: checksum mismatch")
    hlen = int.from_bytes(body[len(MAGIC):len(MAGIC) + 4], "little")
    hstart = len(MAGIC) + 4
    try:
        header = json.loads(body[hstart:hstart + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BlobError(f"{path}: bad header ({exc})") from exc
    arrays = {}
    offset = hstart + hlen
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * dtype.itemsize
        chunk = body[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise BlobError(f"{path}: truncated payload for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise BlobError(f"{path}: trailing bytes in payload")
    return header["meta"], arrays
