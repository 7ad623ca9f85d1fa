"""Checkpoint persistence: human-readable manifest + raw array container.

npz embeds zip timestamps, which breaks byte-level reproducibility, so
arrays go into a custom container: an 8-byte length prefix, a JSON header
listing (name, dtype, shape, offset) sorted by name, then the raw C-order
bytes.  Identical state always serializes to identical bytes.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

FORMAT_VERSION = 1
MANIFEST_FILE = "manifest.json"
ARRAYS_FILE = "arrays.bin"

_ALLOWED_DTYPES = {"float32", "float64", "int64", "bool"}


class CheckpointError(ValueError):
    """Raised on malformed, tampered, or mismatched checkpoint files."""

    def __init__(self, message, diff=None):
        self.diff = list(diff or [])
        if self.diff:
            message = message + "\n  " + "\n  ".join(self.diff)
        super().__init__(message)


def _array_entry(name, arr):
    return {"name": name, "dtype": str(arr.dtype),
            "shape": list(arr.shape), "nbytes": int(arr.nbytes)}


def save_arrays(path, arrays):
    """Write the container; returns the {name: {dtype, shape}} table."""
    entries = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if str(arr.dtype) not in _ALLOWED_DTYPES:
            raise CheckpointError(f"array {name!r} has unsupported dtype {arr.dtype}")
        entries.append(_array_entry(name, arr))
        blobs.append(arr.tobytes())
    header = json.dumps({"version": FORMAT_VERSION, "entries": entries},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    return {e["name"]: {"dtype": e["dtype"], "shape": e["shape"]}
            for e in entries}


def load_arrays(path):
    with open(path, "rb") as fh:
        raw = fh.read(8)
        if len(raw) != 8:
            raise CheckpointError("array container truncated")
        (header_len,) = struct.unpack(">Q", raw)
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported container version {header.get('version')!r}")
        arrays = {}
        for entry in header["entries"]:
            blob = fh.read(entry["nbytes"])
            if len(blob) != entry["nbytes"]:
                raise CheckpointError(f"array {entry['name']!r} truncated")
            arrays[entry["name"]] = np.frombuffer(
                blob, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after last array")
    return arrays


def save_checkpoint(manifest, arrays, path):
    """Write manifest.json + arrays.bin into directory `path`."""
    os.makedirs(path, exist_ok=True)
    table = save_arrays(os.path.join(path, ARRAYS_FILE), arrays)
    manifest = dict(manifest)
    manifest["format_version"] = FORMAT_VERSION
    manifest["arrays"] = table
    with open(os.path.join(path, MANIFEST_FILE), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_checkpoint(path):
    """Read and cross-validate (manifest, arrays) from directory `path`."""
    manifest_path = os.path.join(path, MANIFEST_FILE)
    arrays_path = os.path.join(path, ARRAYS_FILE)
    if not os.path.isfile(manifest_path) or not os.path.isfile(arrays_path):
        raise CheckpointError(f"{path!r} is not a checkpoint directory")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {manifest.get('format_version')!r}")
    arrays = load_arrays(arrays_path)

    table = manifest.get("arrays", {})
    diff = []
    for name in sorted(set(table) | set(arrays)):
        if name not in arrays:
            diff.append(f"{name}: listed in manifest, missing from container")
        elif name not in table:
            diff.append(f"{name}: present in container, not in manifest")
        else:
            want, got = table[name], arrays[name]
            if list(got.shape) != list(want["shape"]):
                diff.append(f"{name}: shape {list(got.shape)} != manifest "
                            f"{want['shape']}")
            if str(got.dtype) != want["dtype"]:
                diff.append(f"{name}: dtype {got.dtype} != manifest "
                            f"{want['dtype']}")
    if diff:
        raise CheckpointError("checkpoint arrays disagree with manifest", diff)
    return manifest, arrays
