"""Versioned parameter snapshots ("FLAB-CKPT v1").

Layout: magic line, JSON header (topology hash, parameter manifest,
optional metadata), then raw little-endian parameter blobs in manifest
order. Loading verifies the topology hash so a snapshot can never be
poured into a mismatched architecture silently.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from flab.errors import DataFormatError

CKPT_MAGIC = b"FLAB-CKPT v1\n"


def topology_hash(model) -> str:
    return hashlib.sha256(model.topology().encode("utf-8")).hexdigest()


def save_checkpoint(model, path, meta=None):
    """Write model parameters atomically; returns the path."""
    params = model.parameters()
    names = sorted(params)
    header = {
        "topology": model.topology(),
        "topology_hash": topology_hash(model),
        "meta": meta or {},
        "params": [{"name": n, "dtype": str(np.dtype(params[n].dtype).newbyteorder("<")),
                    "shape": list(params[n].shape)} for n in names],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for n in names:
            f.write(np.ascontiguousarray(params[n], dtype=params[n].dtype.newbyteorder("<")).tobytes())
    os.replace(tmp, path)
    return path


def read_checkpoint(path):
    """Return (header dict, {name: array}) without needing a model."""
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(CKPT_MAGIC):
        raise DataFormatError(f"not a FLAB-CKPT v1 file: {path}", offset=0)
    nl = blob.find(b"\n", len(CKPT_MAGIC))
    if nl < 0:
        raise DataFormatError("missing checkpoint header line", offset=len(CKPT_MAGIC))
    try:
        header = json.loads(blob[len(CKPT_MAGIC):nl].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"bad checkpoint header: {exc}",
                              offset=len(CKPT_MAGIC)) from exc
    offset = nl + 1
    params = {}
    for entry in header["params"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        n_items = int(np.prod(shape)) if shape else 1
        nbytes = dtype.itemsize * n_items
        if offset + nbytes > len(blob):
            raise DataFormatError(f"parameter {entry['name']!r} truncated", offset=offset)
        params[entry["name"]] = np.frombuffer(
            blob, dtype=dtype, count=n_items, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise DataFormatError(f"{len(blob) - offset} trailing bytes", offset=offset)
    return header, params


def load_checkpoint(model, path):
    """Load a snapshot into an architecture-matched model."""
    header, params = read_checkpoint(path)
    have = topology_hash(model)
    if header["topology_hash"] != have:
        raise DataFormatError(
            f"topology mismatch: checkpoint {header['topology_hash'][:12]} vs "
            f"model {have[:12]} ({header['topology']} vs {model.topology()})")
    model.set_parameters(params)
    return header
