"""Versioned binary checkpoint container.

One file holds a JSON config echo plus named parameter arrays. The byte
layout is fixed and version-gated so checkpoints stay readable across
releases:

    bytes 0..7     magic ``b"RMCKPT01"``
    bytes 8..15    little-endian uint64: JSON header length H
    bytes 16..16+H UTF-8 JSON header:
                   {"format_version": 1,
                    "config": <config echo>,
                    "arrays": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    remainder      raw C-order little-endian array payloads; each entry's
                   ``offset`` is relative to the end of the header and the
                   entries are sorted by name

Arrays are always stored little-endian; loading byte-swaps on big-endian
hosts.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import IoFailure, SchemaVersionMismatch

MAGIC = b"RMCKPT01"
FORMAT_VERSION = 1


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()


def save_checkpoint(path, config: dict, arrays: dict):
    entries = []
    offset = 0
    names = sorted(arrays)
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = le.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": le.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "config": config, "arrays": entries},
        sort_keys=True,
    ).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(header)))
            f.write(header)
            for blob in blobs:
                f.write(blob)
    except OSError as e:
        raise IoFailure(f"writing checkpoint {path}: {e}") from e


def load_checkpoint(path):
    """Read a container back as (config, {name: array})."""
    try:
        with open(path, "rb") as f:
            magic = f.read(8)
            if magic != MAGIC:
                raise SchemaVersionMismatch(f"{path}: bad magic {magic!r}")
            (header_len,) = struct.unpack("<Q", f.read(8))
            header = json.loads(f.read(header_len).decode("utf-8"))
            if header.get("format_version") != FORMAT_VERSION:
                raise SchemaVersionMismatch(
                    f"{path}: format version {header.get('format_version')}, expected {FORMAT_VERSION}"
                )
            payload = f.read()
    except OSError as e:
        raise IoFailure(f"reading checkpoint {path}: {e}") from e
    arrays = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).copy()
        arrays[entry["name"]] = arr.astype(dtype.newbyteorder("="), copy=False)
    return header["config"], arrays


def module_arrays(module, prefix=""):
    """Flatten a torch module's state dict into named numpy arrays."""
    return {
        prefix + name: tensor.detach().cpu().numpy()
        for name, tensor in module.state_dict().items()
    }


def load_module_arrays(module, arrays: dict, prefix=""):
    """Load named arrays (as produced by ``module_arrays``) into a module."""
    import torch

    state = module.state_dict()
    tensors = {}
    for name, tensor in state.items():
        key = prefix + name
        if key not in arrays:
            raise SchemaVersionMismatch(f"checkpoint is missing array {key!r}")
        tensors[name] = torch.from_numpy(np.ascontiguousarray(arrays[key])).to(tensor.dtype)
    module.load_state_dict(tensors)


def params_fingerprint(module) -> str:
    """Order-stable hash of every parameter byte; used to prove freezing."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode("utf-8"))
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()
