"""SPKT binary tensor files and JSON-lines weight manifests.

Layout: magic ``b"SPKT"``, u8 version (1), u8 rank, ``rank`` little-endian
u32 extents, then a little-endian float32 row-major payload.
"""
import json
import os
import struct

import numpy as np

from .errors import DataError

MAGIC = b"SPKT"
VERSION = 1


def encode_tensor(array):
    arr = np.asarray(array)
    if arr.ndim > 255:
        raise DataError(f"rank {arr.ndim} exceeds the SPKT limit of 255")
    header = MAGIC + struct.pack("<BB", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(buf, source="<bytes>"):
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise DataError(f"{source}: not an SPKT tensor (bad magic)")
    version, rank = struct.unpack_from("<BB", buf, 4)
    if version != VERSION:
        raise DataError(f"{source}: unsupported SPKT version {version}")
    off = 6 + 4 * rank
    if len(buf) < off:
        raise DataError(f"{source}: truncated SPKT header")
    shape = struct.unpack_from(f"<{rank}I", buf, 6)
    count = int(np.prod(shape)) if rank else 1
    if len(buf) != off + 4 * count:
        raise DataError(f"{source}: payload holds {(len(buf) - off) // 4} values, shape {shape} needs {count}")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=off)
    return data.astype(np.float64).reshape(shape)


def save_tensor(path, array):
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array))


def load_tensor(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except FileNotFoundError:
        raise DataError(f"missing tensor file: {path}") from None
    return decode_tensor(buf, source=str(path))


def save_named(directory, arrays, manifest="manifest.jsonl"):
    """Write each array to ``<name>.spkt`` plus a manifest line {name, file, shape}."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    for name in sorted(arrays):
        fname = name.replace("/", "__") + ".spkt"
        arr = np.asarray(arrays[name])
        save_tensor(os.path.join(directory, fname), arr)
        lines.append(json.dumps({"name": name, "file": fname, "shape": list(arr.shape)}))
    with open(os.path.join(directory, manifest), "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def load_named(directory, manifest="manifest.jsonl"):
    path = os.path.join(directory, manifest)
    if not os.path.exists(path):
        raise DataError(f"missing manifest: {path}")
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            arr = load_tensor(os.path.join(directory, rec["file"]))
            if list(arr.shape) != list(rec["shape"]):
                raise DataError(f"{rec['file']}: shape {list(arr.shape)} != manifest {rec['shape']} (line {lineno})")
            out[rec["name"]] = arr
    return out
