"""Self-describing checkpoint container.

Layout:  8-byte magic | u32 header length | JSON header | tensor payload |
SHA-256 digest of everything before it.  The header carries the container
format version, run metadata, and the tensor directory (name, shape,
dtype); the payload is the tensors' raw little-endian float32 bytes in
directory order.  The format is independent of any ML framework, so a
round trip is bit-exact and portable.
"""

import hashlib
import json

import numpy as np

MAGIC = b"RKCHKPT1"
FORMAT_VERSION = 1
REQUIRED_META_KEYS = ("schedule", "strategy", "iteration", "phase", "seed")


class CheckpointError(RuntimeError):
    """Raised when a checkpoint cannot be parsed or fails integrity checks."""


def require_meta(meta: dict) -> None:
    missing = [k for k in REQUIRED_META_KEYS if k not in meta]
    if missing:
        raise ValueError(f"checkpoint meta missing required keys: {missing}")


def pack(arrays: dict, meta: dict) -> bytes:
    """Serialize named float arrays plus metadata into container bytes."""
    names = sorted(arrays)
    directory = []
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        directory.append({"name": name, "shape": list(arr.shape), "dtype": "<f4"})
        payload += arr.tobytes()
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": meta, "tensors": directory},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    body = MAGIC + len(header).to_bytes(4, "little") + header + bytes(payload)
    return body + hashlib.sha256(body).digest()


def unpack(data: bytes) -> tuple[dict, dict]:
    """Parse container bytes back into ({name: array}, meta).

    Raises CheckpointError on bad magic, version mismatch, truncation, or
    checksum failure, naming the problem.
    """
    if len(data) < len(MAGIC) + 4 + 32:
        raise CheckpointError(f"truncated checkpoint: {len(data)} bytes")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic: not a restokit checkpoint")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: checkpoint bytes are corrupt")
    header_len = int.from_bytes(data[len(MAGIC) : len(MAGIC) + 4], "little")
    header_start = len(MAGIC) + 4
    header_end = header_start + header_len
    if header_end > len(body):
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(body[header_start:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {version!r} (expected {FORMAT_VERSION})"
        )
    arrays = {}
    offset = header_end
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + nbytes > len(body):
            raise CheckpointError(f"truncated payload for tensor {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            body[offset : offset + nbytes], dtype="<f4"
        ).reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise CheckpointError(f"{len(body) - offset} trailing payload bytes")
    return arrays, header["meta"]


def peek_meta(data: bytes) -> dict:
    """Metadata without materialising tensors (still integrity-checked)."""
    _, meta = unpack(data)
    return meta
