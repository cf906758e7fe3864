"""Self-describing checkpoint container.

Layout: a UTF-8 text header followed by one contiguous little-endian binary
blob.  The header carries a versioned magic line, a key=value config block,
and a tensor index (name, dtype, shape, byte offset, byte count).  Offsets
are relative to the first byte after the ``end-header`` line, so a file is
fully parseable without external knowledge.

    EMGRECAL-CKPT v1
    config <n>
    <key>=<value>            (n lines)
    tensors <m>
    <name> <dtype> <d0,d1,...> <offset> <nbytes>   (m lines)
    end-header
    <binary>
"""

import hashlib

import numpy as np

MAGIC = "EMGRECAL-CKPT"
VERSION = 1

_ALLOWED_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


def _little_endian(arr):
    dt = arr.dtype.newbyteorder("<")
    return np.ascontiguousarray(arr, dtype=dt)


def save_checkpoint(path, config, tensors):
    """Write config (dict of str->str) and named arrays to ``path``.

    Insertion order of both dicts is preserved, so identical inputs produce
    byte-identical files.
    """
    header = [f"{MAGIC} v{VERSION}", f"config {len(config)}"]
    for key, value in config.items():
        value = str(value)
        if "\n" in key or "\n" in value or "=" in key:
            raise CheckpointError(f"illegal config entry {key!r}")
        header.append(f"{key}={value}")
    header.append(f"tensors {len(tensors)}")
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype.name not in _ALLOWED_DTYPES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        if " " in name:
            raise CheckpointError(f"tensor name may not contain spaces: {name!r}")
        raw = _little_endian(arr).tobytes()
        shape = ",".join(str(d) for d in arr.shape) or "scalar"
        header.append(f"{name} {arr.dtype.name} {shape} {offset} {len(raw)}")
        blobs.append(raw)
        offset += len(raw)
    header.append("end-header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path):
    """Read a checkpoint; returns (config dict, tensors dict)."""
    with open(path, "rb") as fh:
        data = fh.read()
    end_marker = b"end-header\n"
    split = data.find(end_marker)
    if split < 0:
        raise CheckpointError(f"{path}: missing end-header marker")
    header_lines = data[:split].decode("utf-8").splitlines()
    body = data[split + len(end_marker):]
    if not header_lines or not header_lines[0].startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic")
    version = header_lines[0].split("v")[-1]
    if int(version) != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    idx = 1
    kind, count = header_lines[idx].split()
    if kind != "config":
        raise CheckpointError(f"{path}: expected config block")
    idx += 1
    config = {}
    for _ in range(int(count)):
        key, _, value = header_lines[idx].partition("=")
        config[key] = value
        idx += 1
    kind, count = header_lines[idx].split()
    if kind != "tensors":
        raise CheckpointError(f"{path}: expected tensor index")
    idx += 1
    tensors = {}
    for _ in range(int(count)):
        name, dtype_name, shape_s, offset_s, nbytes_s = header_lines[idx].split()
        idx += 1
        offset, nbytes = int(offset_s), int(nbytes_s)
        if offset + nbytes > len(body):
            raise CheckpointError(f"{path}: tensor {name} exceeds file size")
        shape = () if shape_s == "scalar" else tuple(
            int(d) for d in shape_s.split(",")
        )
        arr = np.frombuffer(
            body[offset:offset + nbytes], dtype=_ALLOWED_DTYPES[dtype_name]
        ).reshape(shape)
        tensors[name] = arr.astype(dtype_name, copy=True)
    return config, tensors


def config_hash(config):
    """Stable hash of a config block (used for compatibility checks)."""
    text = "\n".join(f"{k}={v}" for k, v in sorted(config.items()))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
