"""Checkpoint file: JSON manifest (names, shapes, byte offsets) followed by
the parameter tensors concatenated as TNSR records in declared field order.

The manifest is validated against the target model before any payload bytes
are read, so a checkpoint from a mismatched configuration is rejected with
the offending tensor named.
"""

import json
import struct

import numpy as np

from .errors import CheckpointError
from .model import named_params
from .tensor_core import tnsr_bytes, tnsr_from_bytes

CKPT_MAGIC = b"CKPT1\n"


def save_checkpoint(path, model):
    entries = []
    blobs = []
    offset = 0
    for name, p in named_params(model):
        blob = tnsr_bytes(p)
        entries.append({"name": name, "shape": list(p.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"tensors": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, model):
    """Load parameters into model in place; shapes/names must match exactly."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    off = len(CKPT_MAGIC)
    if len(raw) < off + 8:
        raise CheckpointError(f"{path}: truncated header")
    (mlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    try:
        manifest = json.loads(raw[off : off + mlen].decode("utf-8"))
        entries = manifest["tensors"]
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest ({exc})") from None
    payload_start = off + mlen

    params = named_params(model)
    if len(entries) != len(params):
        raise CheckpointError(
            f"{path}: checkpoint has {len(entries)} tensors, model has {len(params)}")
    for entry, (name, p) in zip(entries, params):
        if entry["name"] != name:
            raise CheckpointError(f"{path}: expected tensor {name}, found {entry['name']}")
        if tuple(entry["shape"]) != p.shape:
            raise CheckpointError(
                f"{path}: tensor {name} has shape {tuple(entry['shape'])}, "
                f"model expects {p.shape}")
    for entry, (name, p) in zip(entries, params):
        arr = tnsr_from_bytes(raw[payload_start + entry["offset"]:],
                              source=f"{path}:{name}")
        if arr.shape != p.shape:
            raise CheckpointError(f"{path}: payload shape mismatch for {name}")
        np.copyto(p, arr)
    return model
