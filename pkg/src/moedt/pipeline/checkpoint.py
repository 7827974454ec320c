"""Binary checkpoint archives.

Layout: an 8-byte magic, a little-endian uint32 header length, a canonical
JSON header, then the payload of concatenated raw little-endian float32
tensor buffers in sorted name order. The header records per-tensor shape,
component tag, trainable flag, and byte extents, plus run metadata and a
sha256 over the payload. Same params + meta always serialize to the same
bytes.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .. import autodiff as ad
from ..errors import (CheckpointError, CheckpointHashError,
                      CheckpointTruncatedError, CheckpointVersionError)
from ..params import ParamSet

MAGIC = b"MDTCKPT\x01"
VERSION = 1


def save_checkpoint(params: ParamSet, meta: dict, path: str) -> str:
    """Write the archive; returns the payload sha256 hex digest."""
    tensors = []
    chunks = []
    offset = 0
    for name in params.names():
        data = params[name].data
        if data.dtype != np.float32:
            raise CheckpointError(f"tensor {name} has dtype {data.dtype}; "
                                  f"checkpoints store float32")
        raw = np.ascontiguousarray(data).astype("<f4", copy=False).tobytes()
        tensors.append({
            "name": name,
            "shape": list(data.shape),
            "component": params.component_of(name),
            "trainable": params.is_trainable(name),
            "offset": offset,
            "length": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    digest = hashlib.sha256(payload).hexdigest()
    header = {
        "version": VERSION,
        "meta": meta,
        "tensors": tensors,
        "payload_length": len(payload),
        "payload_sha256": digest,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(payload)
    return digest


def load_checkpoint(path: str) -> tuple[ParamSet, dict]:
    """Read an archive back into a ParamSet (tags and flags restored)."""
    if not os.path.exists(path):
        raise CheckpointError(f"no checkpoint at {path}")
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + 4 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointVersionError(f"{path}: not a checkpoint archive")
    (hlen,) = struct.unpack_from("<I", raw, len(MAGIC))
    hstart = len(MAGIC) + 4
    if len(raw) < hstart + hlen:
        raise CheckpointTruncatedError(f"{path}: header truncated")
    try:
        header = json.loads(raw[hstart:hstart + hlen])
    except json.JSONDecodeError:
        raise CheckpointVersionError(f"{path}: unreadable header")
    if header.get("version") != VERSION:
        raise CheckpointVersionError(
            f"{path}: unsupported version {header.get('version')!r}")
    payload = raw[hstart + hlen:]
    want_len = header["payload_length"]
    if len(payload) < want_len:
        raise CheckpointTruncatedError(
            f"{path}: payload has {len(payload)} of {want_len} bytes")
    payload = payload[:want_len]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise CheckpointHashError(f"{path}: payload sha256 mismatch")

    entries = header["tensors"]
    if [e["name"] for e in entries] != sorted(e["name"] for e in entries):
        raise CheckpointError(f"{path}: tensor entries out of order")
    cursor = 0
    params = ParamSet()
    for e in entries:
        if e["offset"] != cursor:
            raise CheckpointError(f"{path}: tensor {e['name']} offset "
                                  f"{e['offset']} != expected {cursor}")
        size = int(np.prod(e["shape"], dtype=np.int64)) if e["shape"] else 1
        if e["length"] != size * 4:
            raise CheckpointError(f"{path}: tensor {e['name']} length "
                                  f"{e['length']} != shape size {size * 4}")
        buf = np.frombuffer(payload, dtype="<f4", count=size, offset=cursor)
        data = buf.reshape(e["shape"]).astype(np.float32, copy=True)
        params.add(e["name"], ad.tensor(data, requires_grad=e["trainable"]),
                   component=e["component"], trainable=e["trainable"])
        cursor += e["length"]
    if cursor != want_len:
        raise CheckpointError(f"{path}: payload length {want_len} not covered "
                              f"by tensors ({cursor})")
    return params, header["meta"]


def read_meta(path: str) -> dict:
    """Metadata only (still verifies the payload hash)."""
    _, meta = load_checkpoint(path)
    return meta
