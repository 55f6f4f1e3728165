"""Versioned binary checkpoint container.

Layout: magic "FERDCKPT" (8 bytes), format version u32 LE, metadata length
u32 LE, metadata JSON (arch_id, num_classes, input_shape, kind, extra),
parameter blob length u64 LE, parameter blob (torch-serialized state dict).
"""

import io
import json
import struct
from pathlib import Path

import torch

from .errors import CheckpointError
from .models import build_model

MAGIC = b"FERDCKPT"
FORMAT_VERSION = 1


def _pack(meta, blob):
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    return b"".join([
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<I", len(meta_bytes)),
        meta_bytes,
        struct.pack("<Q", len(blob)),
        blob,
    ])


def _unpack(raw, path):
    if len(raw) < len(MAGIC) + 8 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes, not a checkpoint file")
    offset = len(MAGIC)
    (version,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format_version {version} unsupported (expected {FORMAT_VERSION})"
        )
    (meta_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    try:
        meta = json.loads(raw[offset:offset + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata block: {exc}") from exc
    offset += meta_len
    (blob_len,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    blob = raw[offset:offset + blob_len]
    if len(blob) != blob_len:
        raise CheckpointError(f"{path}: truncated parameter blob")
    return meta, blob


def _blob_of(obj):
    buf = io.BytesIO()
    torch.save(obj, buf)
    return buf.getvalue()


def _load_blob(blob, path):
    try:
        return torch.load(io.BytesIO(blob), map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"{path}: corrupt parameter blob: {exc}") from exc


def save_checkpoint(model, path, extra=None):
    """Write a model checkpoint; round-trips parameters bit-exactly."""
    meta = {
        "kind": "model",
        "arch_id": model.arch_id,
        "num_classes": model.num_classes,
        "input_shape": list(model.input_shape),
        "extra": extra or {},
    }
    Path(path).write_bytes(_pack(meta, _blob_of(model.state_dict())))


def load_checkpoint(path, expect_num_classes=None, expect_input_shape=None):
    """Load a model checkpoint back into a fresh ModelHandle."""
    meta, blob = _unpack(Path(path).read_bytes(), path)
    for field in ("arch_id", "num_classes", "input_shape"):
        if field not in meta:
            raise CheckpointError(f"{path}: metadata missing field {field!r}")
    if meta.get("kind") != "model":
        raise CheckpointError(f"{path}: kind {meta.get('kind')!r} is not a model checkpoint")
    if expect_num_classes is not None and meta["num_classes"] != expect_num_classes:
        raise CheckpointError(
            f"{path}: num_classes {meta['num_classes']} does not match "
            f"requested {expect_num_classes}"
        )
    if expect_input_shape is not None and tuple(meta["input_shape"]) != tuple(expect_input_shape):
        raise CheckpointError(
            f"{path}: input_shape {meta['input_shape']} does not match "
            f"requested {list(expect_input_shape)}"
        )
    handle = build_model(meta["arch_id"], meta["num_classes"], tuple(meta["input_shape"]))
    handle.load_state_dict(_load_blob(blob, path))
    handle.eval()
    return handle


def save_state(payload, meta, path):
    """Write an arbitrary training-state checkpoint (resume support)."""
    header = dict(meta)
    header["kind"] = "state"
    Path(path).write_bytes(_pack(header, _blob_of(payload)))


def load_state(path):
    """Read back a training-state checkpoint as (meta, payload)."""
    meta, blob = _unpack(Path(path).read_bytes(), path)
    if meta.get("kind") != "state":
        raise CheckpointError(f"{path}: kind {meta.get('kind')!r} is not a state checkpoint")
    return meta, _load_blob(blob, path)
