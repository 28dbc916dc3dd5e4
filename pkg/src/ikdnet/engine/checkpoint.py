"""Named-tensor checkpoint file: magic "IKDT", version, then name/shape/f32 data."""

import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"IKDT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_tensors(fp, tensors):
    """Write {name: array} as little-endian float32 records."""
    own = isinstance(fp, str)
    f = open(fp, "wb") if own else fp
    try:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            enc = name.encode("utf-8")
            f.write(struct.pack("<I", len(enc)))
            f.write(enc)
            f.write(struct.pack("<I", arr.ndim))
            for ext in arr.shape:
                f.write(struct.pack("<Q", ext))
            f.write(arr.tobytes())
    finally:
        if own:
            f.close()


def _read(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(
            f"truncated checkpoint: wanted {n} bytes for {what} at offset {f.tell() - len(buf)}"
        )
    return buf


def load_tensors(fp):
    """Read a checkpoint back into an OrderedDict of float32 arrays."""
    own = isinstance(fp, str)
    f = open(fp, "rb") if own else fp
    try:
        if _read(f, 4, "magic") != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read(f, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", _read(f, 4, "tensor count"))
        out = OrderedDict()
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read(f, 4, "name length"))
            name = _read(f, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read(f, 4, "rank"))
            shape = tuple(
                struct.unpack("<Q", _read(f, 8, f"extent of {name}"))[0]
                for _ in range(rank)
            )
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read(f, 4 * n, f"data of {name}"), dtype="<f4")
            out[name] = data.reshape(shape).astype(np.float32)
        return out
    finally:
        if own:
            f.close()
