"""Binary checkpoints: magic, version, fingerprint, named float64 records.

Layout (all integers little-endian):

    magic           8 bytes  b"OENGCKPT"
    version         u32
    seed            u64
    fingerprint     u32 length + utf-8
    meta json       u32 length + utf-8
    n_records       u32
    records         u16 name length + name, u8 ndim, ndim x u32 dims,
                    float64 LE payload
    sha256          32 bytes over everything above

An ensemble container (magic b"OENGENSB") wraps member checkpoints with the
class count and clamp policy.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..errors import CheckpointError
from .assembly import SequenceClassifier, build_model, meta_fingerprint

MAGIC = b"OENGCKPT"
ENSEMBLE_MAGIC = b"OENGENSB"
VERSION = 1


def save_checkpoint(model: SequenceClassifier, seed: int = 0) -> bytes:
    """Serialize a model to bytes; parameters round-trip bit-exactly."""
    meta_blob = json.dumps(model.meta, sort_keys=True, separators=(",", ":")).encode()
    fingerprint = meta_fingerprint(model.meta).encode()
    params = model.parameters()

    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", seed)]
    chunks.append(struct.pack("<I", len(fingerprint)) + fingerprint)
    chunks.append(struct.pack("<I", len(meta_blob)) + meta_blob)
    chunks.append(struct.pack("<I", len(params)))
    for name, tensor in params.items():
        encoded = name.encode()
        arr = np.ascontiguousarray(tensor.data, dtype="<f8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    body = b"".join(chunks)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint payload")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack("<B", self.take(1))[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]


def _verify(data: bytes, magic: bytes) -> _Reader:
    if len(data) < len(magic) + 36:
        raise CheckpointError("checkpoint too short")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch (corrupt payload)")
    reader = _Reader(body)
    if reader.take(len(magic)) != magic:
        raise CheckpointError("bad checkpoint magic")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    return reader


def load_checkpoint(data: bytes, expected_fingerprint: str | None = None):
    """Rebuild a model from bytes; returns (model, seed).

    Rejects corrupt payloads, unknown versions, shape mismatches against the
    embedded meta, and (when given) fingerprint disagreement with the
    caller's expected configuration.
    """
    reader = _verify(data, MAGIC)
    seed = reader.u64()
    fingerprint = reader.take(reader.u32()).decode()
    meta = json.loads(reader.take(reader.u32()).decode())
    if meta_fingerprint(meta) != fingerprint:
        raise CheckpointError("checkpoint fingerprint does not match its meta")
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise CheckpointError(
            f"checkpoint fingerprint {fingerprint} does not match the expected "
            f"config fingerprint {expected_fingerprint}"
        )

    model = build_model(meta, np.random.default_rng(0))
    params = model.parameters()
    n_records = reader.u32()
    if n_records != len(params):
        raise CheckpointError(
            f"checkpoint has {n_records} records, config defines {len(params)}"
        )
    for _ in range(n_records):
        name = reader.take(reader.u16()).decode()
        ndim = reader.u8()
        shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        payload = reader.take(8 * int(np.prod(shape)) if ndim else 8)
        if name not in params:
            raise CheckpointError(f"checkpoint record {name!r} unknown to config")
        target = params[name]
        if shape != target.data.shape:
            raise CheckpointError(
                f"record {name!r} shape {shape} != configured {target.data.shape}"
            )
        target.data = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return model, seed


def save_ensemble(members, num_classes: int, clamp_policy: str, seed: int = 0) -> bytes:
    """Container of member checkpoints plus the recombination settings."""
    header = json.dumps(
        {"num_classes": int(num_classes), "clamp_policy": clamp_policy},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    chunks = [ENSEMBLE_MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", seed)]
    chunks.append(struct.pack("<I", len(header)) + header)
    chunks.append(struct.pack("<I", len(members)))
    for member in members:
        blob = save_checkpoint(member, seed)
        chunks.append(struct.pack("<Q", len(blob)) + blob)
    body = b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def load_ensemble(data: bytes):
    """Returns (members, num_classes, clamp_policy, seed)."""
    reader = _verify(data, ENSEMBLE_MAGIC)
    seed = reader.u64()
    header = json.loads(reader.take(reader.u32()).decode())
    n_members = reader.u32()
    if n_members != header["num_classes"] - 1:
        raise CheckpointError(
            f"ensemble has {n_members} members for {header['num_classes']} classes"
        )
    members = []
    for _ in range(n_members):
        size = reader.u64()
        blob = reader.take(size)
        member, _ = load_checkpoint(blob)
        members.append(member)
    return members, header["num_classes"], header["clamp_policy"], seed
